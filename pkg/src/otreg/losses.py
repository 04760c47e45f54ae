"""Regularization terms computed from a transport plan."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DegeneratePlanError, DimensionError
from .ot import TransportPlan

__all__ = [
    "OtLossBreakdown",
    "transport_cost",
    "row_normalize",
    "sparsity_loss",
    "ot_loss",
    "DEFAULT_LAMBDA_SPR",
]

DEFAULT_LAMBDA_SPR = 0.1


def _gamma(plan):
    return plan.gamma if isinstance(plan, TransportPlan) else plan


@dataclass
class OtLossBreakdown:
    """Loss terms; each is a 1 x 1 ``Var`` when tracked, else a 1 x 1 array."""

    l_cost: object
    l_spr: object
    l_ot: object
    lambda_spr: float

    def floats(self) -> dict:
        return {
            "l_cost": float(ad.value_of(self.l_cost)[0, 0]),
            "l_spr": float(ad.value_of(self.l_spr)[0, 0]),
            "l_ot": float(ad.value_of(self.l_ot)[0, 0]),
            "lambda_spr": self.lambda_spr,
        }


def transport_cost(plan, cost):
    """Total transport cost ``sum_ij gamma_ij C_ij``."""
    g = _gamma(plan)
    if ad.value_of(g).shape != ad.value_of(cost).shape:
        raise DimensionError(
            f"plan {ad.value_of(g).shape} and cost {ad.value_of(cost).shape} differ"
        )
    return ad.sum_all(ad.mul(g, cost))


def row_normalize(plan):
    g = _gamma(plan)
    sums = ad.sum_rows(g)
    if np.any(ad.value_of(sums) <= 0):
        raise DegeneratePlanError("plan has a zero row; cannot row-normalize")
    return ad.div(g, sums)


def sparsity_loss(plan):
    """Mean over rows of ``1 - ||row-normalized row||_2``.

    Zero iff every row is one-hot; ``1 - 1/sqrt(m)`` for uniform rows.
    """
    r = row_normalize(plan)
    norms = ad.sqrt(ad.sum_rows(ad.square(r)))
    return ad.sub(1.0, ad.mean_all(norms))


def ot_loss(plan, cost, lambda_spr: float = DEFAULT_LAMBDA_SPR) -> OtLossBreakdown:
    if lambda_spr < 0:
        raise ContractError("lambda_spr must be >= 0")
    l_cost = transport_cost(plan, cost)
    l_spr = sparsity_loss(plan)
    l_ot = ad.add(l_cost, ad.scale(l_spr, lambda_spr))
    return OtLossBreakdown(l_cost, l_spr, l_ot, float(lambda_spr))

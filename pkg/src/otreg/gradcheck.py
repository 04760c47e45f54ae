"""Finite-difference checks of every loss path down to the adapter weights."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .corpus import EmbeddingTable
from .losses import ot_loss, sparsity_loss, transport_cost
from .ot import SinkhornConfig, build_cost, sinkhorn
from .sequence import AdapterParams, adapter_forward
from .trainer import ce_loss

__all__ = ["GradcheckResult", "make_instance", "loss_paths", "run_gradcheck", "DEFAULT_SIZES"]

DEFAULT_SIZES: Tuple[Tuple[int, int], ...] = ((2, 2), (4, 3), (6, 4))
THRESHOLD = 1e-4
# a fixed iteration count keeps the unrolled map smooth under perturbation
CHECK_SINKHORN = SinkhornConfig(epsilon=0.5, max_iterations=30, tolerance=0.0)


@dataclass
class GradcheckResult:
    worst: float = 0.0
    worst_case: str = ""
    checks: List[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.worst < THRESHOLD


@dataclass
class Instance:
    h: np.ndarray
    targets: np.ndarray
    table: EmbeddingTable
    labels: List[int]
    params: Dict[str, np.ndarray]


def make_instance(rng: np.random.Generator, n_a: int, n_g: int, d_in=6, d_h=5, d_l=4, vocab=6) -> Instance:
    rows = rng.normal(size=(vocab, d_l))
    table = EmbeddingTable(rows / np.linalg.norm(rows, axis=1, keepdims=True), vocab - 1)
    params = {
        "w1": rng.normal(size=(d_in, d_h)),
        "b1": rng.normal(size=(1, d_h)) * 0.1,
        "w2": rng.normal(size=(d_h, d_l)),
        "b2": rng.normal(size=(1, d_l)) * 0.1,
    }
    return Instance(
        h=rng.normal(size=(n_a, d_in)),
        targets=rng.normal(size=(n_g, d_l)),
        table=table,
        labels=[int(x) for x in rng.integers(0, vocab, size=n_a)],
        params=params,
    )


def loss_paths(inst: Instance, lambda_ot=0.3, lambda_spr=0.1, cfg: SinkhornConfig = CHECK_SINKHORN):
    """Named scalar functions of the adapter parameters."""

    def fwd(p):
        return adapter_forward(inst.h, AdapterParams(**p))

    def plan_and_cost(p):
        cost = build_cost(fwd(p), inst.targets)
        return sinkhorn(cost, cfg), cost

    def l_cost(p):
        plan, cost = plan_and_cost(p)
        return transport_cost(plan, cost)

    def l_spr(p):
        plan, _ = plan_and_cost(p)
        return sparsity_loss(plan)

    def l_ot(p):
        plan, cost = plan_and_cost(p)
        return ot_loss(plan, cost, lambda_spr).l_ot

    def l_ce(p):
        return ce_loss(fwd(p), inst.table, inst.labels)

    def l_total(p):
        f = fwd(p)
        cost = build_cost(f, inst.targets)
        plan = sinkhorn(cost, cfg)
        return ad.add(ce_loss(f, inst.table, inst.labels), ad.scale(ot_loss(plan, cost, lambda_spr).l_ot, lambda_ot))

    return {"ce": l_ce, "l_cost": l_cost, "l_spr": l_spr, "l_ot": l_ot, "l_total": l_total}


def run_gradcheck(
    sizes: Sequence[Tuple[int, int]] = DEFAULT_SIZES,
    trials: int = 3,
    seed: int = 0,
    step: float = 1e-5,
    inject_error: float = 0.0,
) -> GradcheckResult:
    """Check every loss path on ``trials`` random instances per size.

    ``inject_error`` is added to every analytic gradient entry (test hook).
    """
    rng = np.random.default_rng(seed)
    result = GradcheckResult()
    for trial in range(trials):
        for n_a, n_g in sizes:
            inst = make_instance(rng, n_a, n_g)
            for name, fn in loss_paths(inst).items():
                tape = ad.Tape()
                tracked = {k: tape.param(v, k) for k, v in inst.params.items()}
                grads = ad.backward(fn(tracked))
                if inject_error:
                    grads = {k: g + inject_error for k, g in grads.items()}
                err = ad.grad_check(fn, inst.params, step, analytic=grads)
                label = f"{name} trial={trial} size={n_a}x{n_g}"
                result.checks.append({"path": name, "trial": trial, "size": [n_a, n_g], "rel_error": err})
                if err >= result.worst:
                    result.worst, result.worst_case = err, label
    return result

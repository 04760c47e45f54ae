"""Cosine cost matrices and entropic OT with uniform marginals (Sinkhorn)."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import (
    ContractError,
    DimensionError,
    DomainError,
    NumericalOverflowError,
    SizeLimitError,
)

__all__ = [
    "SinkhornConfig",
    "TransportPlan",
    "build_cost",
    "sinkhorn",
    "entropy",
    "entropic_objective",
    "marginal_violation",
    "exact_uniform_ot_oracle",
]


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.1
    max_iterations: int = 500
    tolerance: float = 1e-8
    log_domain: bool = True
    # Newton refinement on the log-scalings once plain iterations stall
    # (log domain only); each step is recorded like a Sinkhorn iteration.
    newton_steps: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ContractError(f"epsilon must be > 0, got {self.epsilon}")
        if self.max_iterations < 1:
            raise ContractError("max_iterations must be >= 1")
        if self.tolerance < 0:
            raise ContractError("tolerance must be >= 0")
        if self.newton_steps < 0:
            raise ContractError("newton_steps must be >= 0")


@dataclass
class TransportPlan:
    """Coupling returned by :func:`sinkhorn`.

    ``gamma`` is a ``Var`` when the cost was tracked, otherwise an ndarray.
    """

    gamma: object
    epsilon: float
    iterations_used: int
    marginal_error: float
    converged: bool

    @property
    def value(self) -> np.ndarray:
        return ad.value_of(self.gamma)

    @property
    def shape(self):
        return self.value.shape


def build_cost(source, target):
    """``C[i, j] = 1 - cos(source_i, target_j)``; entries lie in [0, 2]."""
    return ad.sub(1.0, ad.cosine_similarity_matrix(source, target))


def marginal_violation(gamma: np.ndarray) -> float:
    n, m = gamma.shape
    row = np.abs(gamma.sum(axis=1) - 1.0 / n).max()
    col = np.abs(gamma.sum(axis=0) - 1.0 / m).max()
    return float(max(row, col))


def sinkhorn(cost, cfg: SinkhornConfig | None = None) -> TransportPlan:
    """Solve ``min <g, C> - eps H(g)`` with row sums 1/n and column sums 1/m.

    Every iteration goes through :mod:`autodiff`, so a tracked cost yields a
    plan whose gradient flows through all executed iterations.  Hitting
    ``max_iterations`` is not an error; check ``converged``/``marginal_error``.
    """
    cfg = cfg or SinkhornConfig()
    cv = ad.value_of(cost)
    if not np.all(np.isfinite(cv)):
        raise ContractError("cost has non-finite entries")
    n, m = cv.shape
    if n == 0 or m == 0:
        raise DimensionError(f"empty cost matrix {cv.shape}")
    if cfg.log_domain:
        return _sinkhorn_log(cost, n, m, cfg)
    return _sinkhorn_linear(cost, n, m, cfg)


def _sinkhorn_log(cost, n, m, cfg):
    log_a = -math.log(n)
    log_b = -math.log(m)
    log_k = ad.scale(cost, -1.0 / cfg.epsilon)
    g = np.zeros((1, m))
    err = math.inf
    it = 0
    while it < cfg.max_iterations:
        it += 1
        f = ad.sub(log_a, ad.logsumexp(ad.add(log_k, g), axis=1))
        g = ad.sub(log_b, ad.logsumexp(ad.add(log_k, f), axis=0))
        lp = ad.value_of(log_k) + ad.value_of(f) + ad.value_of(g)
        err = marginal_violation(np.exp(lp))
        if err <= cfg.tolerance:
            break
    if err > cfg.tolerance and cfg.newton_steps > 0:
        f, g, err, steps = _newton_refine(log_k, f, g, n, m, err, cfg)
        it += steps
    gamma = ad.exp(ad.add(ad.add(log_k, f), g))
    return TransportPlan(gamma, cfg.epsilon, it, err, err <= cfg.tolerance)


def _newton_refine(log_k, f, g, n, m, err, cfg):
    """Damped Newton on the marginal equations in (f, g).

    The system is singular along (+1, -1); the last column potential is
    pinned, which drops one redundant equation.  The Newton direction
    ascends the concave dual ``a.f + b.g - sum(exp(log_k + f + g))``; a step
    is taken when it raises the dual (Armijo) or lowers the marginal error.
    """
    a = np.full((n, 1), 1.0 / n)
    b = np.full((m, 1), 1.0 / m)
    lk = ad.value_of(log_k)

    def dual(fv, gv):
        with np.errstate(over="ignore", invalid="ignore"):
            p = np.exp(lk + fv + gv)
        return float(fv.sum() * a[0, 0] + gv.sum() * b[0, 0] - p.sum()), marginal_violation(p)

    steps = 0
    while steps < cfg.newton_steps and err > cfg.tolerance:
        steps += 1
        plan = ad.exp(ad.add(ad.add(log_k, f), g))
        rs = ad.sum_rows(plan)
        cs = ad.transpose(ad.sum_cols(plan))
        jac = ad.concat(
            [
                ad.concat([ad.diag(rs), plan], axis=1),
                ad.concat([ad.transpose(plan), ad.diag(cs)], axis=1),
            ],
            axis=0,
        )
        resid = ad.concat([ad.sub(rs, a), ad.sub(cs, b)], axis=0)
        k = n + m - 1
        try:
            step = ad.solve(ad.submatrix(jac, slice(0, k), slice(0, k)),
                            ad.neg(ad.submatrix(resid, slice(0, k), slice(0, 1))))
        except DomainError:
            break
        du = ad.submatrix(step, slice(0, n), slice(0, 1))
        dv = ad.concat([ad.transpose(ad.submatrix(step, slice(n, k), slice(0, 1))),
                        np.zeros((1, 1))], axis=1)
        duv, dvv = ad.value_of(du), ad.value_of(dv)
        fv, gv = ad.value_of(f), ad.value_of(g)
        base, _ = dual(fv, gv)
        # directional derivative of the dual along the step (>= 0)
        slope = -float(np.vdot(ad.value_of(resid)[:k], ad.value_of(step)))
        t = 1.0
        accepted = False
        while t >= 1e-10:
            value, trial = dual(fv + t * duv, gv + t * dvv)
            if trial < err or (math.isfinite(value) and value >= base + 1e-4 * t * slope and value > base):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        f = ad.add(f, ad.scale(du, t))
        g = ad.add(g, ad.scale(dv, t))
        err = trial
    return f, g, err, steps


def _sinkhorn_linear(cost, n, m, cfg):
    kernel = ad.exp(ad.scale(cost, -1.0 / cfg.epsilon))
    kv = ad.value_of(kernel)
    if not np.all(np.isfinite(kv)) or np.any(kv.sum(axis=1) == 0) or np.any(kv.sum(axis=0) == 0):
        raise NumericalOverflowError(
            f"kernel exp(-C/eps) under/overflows at eps={cfg.epsilon}; use log_domain=True"
        )
    a = np.full((n, 1), 1.0 / n)
    b = np.full((m, 1), 1.0 / m)
    v = np.ones((m, 1))
    kt = ad.transpose(kernel)
    err = math.inf
    it = 0
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        while it < cfg.max_iterations:
            it += 1
            kvv = ad.matmul(kernel, v)
            _check_scaling(kvv, cfg)
            u = ad.div(a, kvv)
            ktu = ad.matmul(kt, u)
            _check_scaling(ktu, cfg)
            v = ad.div(b, ktu)
            _check_scaling(v, cfg)
            gv = ad.value_of(u) * kv * ad.value_of(v).T
            err = marginal_violation(gv)
            if err <= cfg.tolerance:
                break
    gamma = ad.mul(ad.mul(u, kernel), ad.transpose(v))
    return TransportPlan(gamma, cfg.epsilon, it, err, err <= cfg.tolerance)


def _check_scaling(x, cfg):
    xv = ad.value_of(x)
    if not np.all(np.isfinite(xv)) or np.any(xv == 0):
        raise NumericalOverflowError(
            f"non-finite Sinkhorn scaling at eps={cfg.epsilon}; use log_domain=True"
        )


def entropy(plan) -> float:
    """Shannon entropy ``-sum g log g`` (natural log, ``0 log 0 = 0``)."""
    g = plan.value if isinstance(plan, TransportPlan) else ad.value_of(plan)
    if np.any(g < 0):
        raise ContractError("plan has negative entries")
    pos = g[g > 0]
    return float(-(pos * np.log(pos)).sum())


def entropic_objective(plan, cost, epsilon: float) -> float:
    g = plan.value if isinstance(plan, TransportPlan) else ad.value_of(plan)
    return float((g * ad.value_of(cost)).sum()) - epsilon * entropy(g)


def exact_uniform_ot_oracle(cost, max_size: int = 8):
    """Brute-force unregularized OT for square uniform marginals.

    Returns ``(permutation, optimal_cost)`` where the cost is
    ``(1/n) * sum_i C[i, perm[i]]``.
    """
    c = ad.value_of(cost)
    n, m = c.shape
    if n != m:
        raise DimensionError(f"oracle needs a square cost, got {c.shape}")
    if n > max_size:
        raise SizeLimitError(f"n={n} exceeds oracle limit {max_size}")
    best_perm, best = None, math.inf
    rows = np.arange(n)
    for perm in itertools.permutations(range(n)):
        total = c[rows, perm].sum() / n
        if total < best:
            best_perm, best = perm, total
    return tuple(best_perm), float(best)

"""Wasserstein distances between equal-size, uniform-weight point clouds.

Points live in R^3 or in R^3 x S^2; the phase-space ground metric is
``|x - x'| + |r - r'|`` with the chordal distance on orientations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.spatial.distance import cdist

from .errors import CapacityError, ConvergenceError, ValidationError
from .particles import check_unit

EXACT_CAP = 2048


@dataclass
class Cloud:
    x: np.ndarray
    r: np.ndarray = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1, 3)
        if len(self.x) < 1:
            raise ValidationError("a cloud needs at least one point")
        if self.r is not None:
            self.r = check_unit(np.asarray(self.r, dtype=float).reshape(-1, 3))
            if len(self.r) != len(self.x):
                raise ValidationError("orientations must be given for every point or none")

    def __len__(self):
        return len(self.x)

    def shifted(self, v):
        return Cloud(self.x + np.asarray(v, dtype=float), self.r)

    def scaled(self, s):
        return Cloud(self.x * s, self.r)


@dataclass(frozen=True)
class CostSpec:
    """Exponent ``p`` in ``[1, inf]`` and ground metric ``"spatial"`` or ``"phase"``."""

    p: float = 1.0
    ground: str = "spatial"

    def __post_init__(self):
        if not self.p >= 1:
            raise ValidationError(f"exponent p must be >= 1, got {self.p}")
        if self.ground not in ("spatial", "phase"):
            raise ValidationError(f"unknown ground metric {self.ground!r}")


@dataclass
class TransportResult:
    value: float
    plan: np.ndarray
    solver: str
    marginal_violation: float = 0.0


def ground_cost(a, b, ground="spatial"):
    """Pairwise ground distances between two clouds."""
    c = cdist(a.x, b.x)
    if ground == "phase":
        if a.r is None or b.r is None:
            raise ValidationError("phase cost needs orientations on both clouds")
        c = c + cdist(a.r, b.r)
    return c


def _check_pair(a, b):
    if len(a) != len(b):
        raise ValidationError(f"cloud sizes differ: {len(a)} vs {len(b)}")


def _pcost(c, p):
    return c if p == 1 else c**p


def wasserstein_exact(a, b, cost=CostSpec()):
    """Exact ``W_p`` for finite ``p`` by optimal assignment; ``plan[i]`` is the partner of ``a[i]``."""
    _check_pair(a, b)
    if math.isinf(cost.p):
        raise ValidationError("use wasserstein_bottleneck for p = inf")
    n = len(a)
    if n > EXACT_CAP:
        raise CapacityError(f"n = {n} exceeds the exact-solver cap {EXACT_CAP}; use wasserstein_sinkhorn")
    m = _pcost(ground_cost(a, b, cost.ground), cost.p)
    rows, cols = linear_sum_assignment(m)
    value = math.fsum(m[rows, cols]) / n
    return TransportResult(value ** (1.0 / cost.p), cols, "exact")


def _perfect_matching(mask):
    match = maximum_bipartite_matching(csr_matrix(mask), perm_type="column")
    return match if np.all(match >= 0) else None


def wasserstein_bottleneck(a, b, cost=CostSpec(p=math.inf)):
    """``W_inf``: smallest achievable maximum edge over perfect matchings."""
    _check_pair(a, b)
    c = ground_cost(a, b, cost.ground)
    levels = np.unique(c)
    lo, hi = 0, len(levels) - 1
    # invariant: the threshold levels[hi] admits the perfect matching ``best``
    best = _perfect_matching(c <= levels[hi])
    while lo < hi:
        mid = (lo + hi) // 2
        match = _perfect_matching(c <= levels[mid])
        if match is None:
            lo = mid + 1
        else:
            hi = mid
            best = match
    value = float(c[np.arange(len(a)), best].max())
    return TransportResult(value, best, "bottleneck")


def _lse(z, axis):
    zmax = z.max(axis=axis, keepdims=True)
    return (zmax + np.log(np.exp(z - zmax).sum(axis=axis, keepdims=True))).squeeze(axis)


def round_to_marginals(plan, row, col):
    """Project a nonnegative matrix onto couplings with marginals ``row``, ``col``.

    Rows and columns exceeding their targets are scaled down, then the
    missing mass is added as a rank-one correction.
    """
    x = np.minimum(row / plan.sum(axis=1), 1.0)
    plan = plan * x[:, None]
    y = np.minimum(col / plan.sum(axis=0), 1.0)
    plan = plan * y[None, :]
    er = row - plan.sum(axis=1)
    ec = col - plan.sum(axis=0)
    mass = er.sum()
    if mass > 0:
        plan = plan + np.outer(er, ec) / mass
    return plan


def wasserstein_sinkhorn(a, b, cost=CostSpec(), reg=None, iters=5000, tol=1e-9, max_violation=1e-3):
    """Entropic ``W_p`` via log-domain Sinkhorn iterations with annealed regularization.

    ``reg`` defaults to 1% of the median entry of the ``p``-cost matrix.
    Iteration stops when the row marginals are within ``tol`` of uniform.
    The coupling is then rounded onto the exact marginal polytope and the
    value ``<P, C^p>^(1/p)`` is returned; it is biased upward by
    ``O(reg log n)`` against the exact value.

    Raises :class:`ConvergenceError` if, before rounding, some marginal is off
    by more than ``max_violation / n`` (a relative mass error) after ``iters`` sweeps.
    """
    _check_pair(a, b)
    if math.isinf(cost.p):
        raise ValidationError("Sinkhorn does not support p = inf")
    m = _pcost(ground_cost(a, b, cost.ground), cost.p)
    n = len(a)
    if reg is None:
        reg = 0.01 * float(np.median(m))
    if not reg > 0:
        raise ValidationError("regularization must be > 0")
    log_w = np.full(n, -math.log(n))
    f = np.zeros(n)
    g = np.zeros(n)
    schedule = []
    eps = max(float(m.max()), reg)
    while eps > reg:
        schedule.append(eps)
        eps *= 0.5
    schedule.append(reg)
    used = 0
    for stage, eps in enumerate(schedule):
        last = stage == len(schedule) - 1
        k = -m / eps
        budget = iters - used if last else min(50, iters - used)
        for it in range(budget):
            f = eps * (log_w - _lse(k + g[None, :] / eps, 1))
            g = eps * (log_w - _lse(k + f[:, None] / eps, 0))
            used += 1
            if last and it % 20 == 19:
                row = np.exp(_lse(k + (f[:, None] + g[None, :]) / eps, 1))
                if np.abs(row - 1.0 / n).max() < tol:
                    break
    plan = np.exp((f[:, None] + g[None, :] - m) / reg)
    viol = max(float(np.abs(plan.sum(axis=1) - 1.0 / n).max()), float(np.abs(plan.sum(axis=0) - 1.0 / n).max()))
    if viol > max_violation / n:
        raise ConvergenceError(f"Sinkhorn did not converge in {iters} iterations (marginal error {viol:.3e})", viol)
    w = np.full(n, 1.0 / n)
    plan = round_to_marginals(plan, w, w)
    value = float(np.sum(plan * m)) ** (1.0 / cost.p)
    return TransportResult(value, plan, "sinkhorn", viol)


def wasserstein(a, b, cost=CostSpec(), **kw):
    """Dispatch: bottleneck for ``p = inf``, exact up to the cap, Sinkhorn beyond."""
    if math.isinf(cost.p):
        return wasserstein_bottleneck(a, b, cost)
    if len(a) <= EXACT_CAP:
        return wasserstein_exact(a, b, cost)
    return wasserstein_sinkhorn(a, b, cost, **kw)

"""N-particle dynamics from the dilute expansion of particle velocities.

Two velocity laws are available:

``ZERO``
    ``V^n = u_h(X^n)``.
``FIRST``
    ``V^n = u_h(X^n) + (lam/N) sum_{m != n} G(X^n - X^m) (e - h(X^m))
    + (lam/N) sum_{m != n} dG(X^n - X^m) : [2 Sigma(R^m) D(u_h)(X^m) + kappa0 Sigma_f(R^m)]
    + kappa0 eps V_f(R^n)``.

Orientations follow ``dR^n/dt = (Omega(R^n) grad u_h(X^n)) R^n`` for both laws.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy.spatial.distance import pdist, squareform

from .errors import GuardError, SetupError, ValidationError
from .kernels import stokes_pair_sum, sym, tracefree
from .particles import (
    ActivityModel,
    Sphere,
    _active_stresslet,
    _orientation_velocity,
    _sigma0,
    check_unit,
)

UNIT_BALL_VOLUME = 4.0 * np.pi / 3.0
GUARD_FACTOR = 4.0


class ExpansionOrder(enum.Enum):
    ZERO = "zero"
    FIRST = "first"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValidationError(f"unknown expansion order {value!r}") from None


def derive_epsilon(n, volume_fraction, unit_volume=UNIT_BALL_VOLUME):
    """Particle scale from ``lam = N eps^3 |I|``."""
    if n < 1 or not volume_fraction > 0 or not unit_volume > 0:
        raise ValidationError("need N >= 1, volume fraction > 0 and unit volume > 0")
    return (volume_fraction / (n * unit_volume)) ** (1.0 / 3.0)


@dataclass(frozen=True)
class SuspensionParams:
    n: int
    volume_fraction: float
    buoyancy: tuple = (0.0, 0.0, 0.0)
    shape: object = field(default_factory=Sphere)
    activity: ActivityModel = field(default_factory=ActivityModel)
    unit_volume: float = UNIT_BALL_VOLUME

    def __post_init__(self):
        e = np.asarray(self.buoyancy, dtype=float)
        if e.shape != (3,):
            raise ValidationError("buoyancy must be a 3-vector")
        if np.linalg.norm(e) > 1.0 + 1e-12:
            raise ValidationError("buoyancy must satisfy |e| <= 1")
        object.__setattr__(self, "buoyancy", tuple(float(c) for c in e))
        if self.volume_fraction < 0:
            raise ValidationError("volume fraction must be >= 0")
        if self.volume_fraction > 0:
            derive_epsilon(self.n, self.volume_fraction, self.unit_volume)
        elif self.n < 1 or not self.unit_volume > 0:
            raise ValidationError("need N >= 1 and unit volume > 0")

    @property
    def epsilon(self):
        """Particle scale; ``0`` in the degenerate limit ``lam = 0`` (no interactions)."""
        if self.volume_fraction == 0:
            return 0.0
        return derive_epsilon(self.n, self.volume_fraction, self.unit_volume)

    @property
    def guard_distance(self):
        return GUARD_FACTOR * self.epsilon

    def with_volume_fraction(self, lam):
        return replace(self, volume_fraction=lam)


@dataclass
class SuspensionState:
    X: np.ndarray
    R: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, 3)
        self.R = check_unit(np.asarray(self.R, dtype=float).reshape(-1, 3))
        if len(self.X) != len(self.R):
            raise ValidationError("positions and orientations must have the same length")

    @property
    def n(self):
        return len(self.X)

    def copy(self):
        return SuspensionState(self.X.copy(), self.R.copy(), self.t)


@dataclass
class Diagnostics:
    d_min: float
    alpha: dict
    v_max: float
    omega_max: float


def min_distance(X):
    if len(X) < 2:
        return np.inf
    return float(pdist(X).min())


def check_guard(X, params, t=None):
    if len(X) < 2:
        return np.inf
    d = min_distance(X)
    thr = params.guard_distance
    if d < thr:
        raise GuardError(
            f"separation guard violated: d_min = {d:.6g} < 4 eps = {thr:.6g}"
            + (f" at t = {t:.6g}" if t is not None else ""),
            d_min=d,
            threshold=thr,
            t=t,
        )
    return d


def _velocities(X, R, params, flow, order):
    n = len(X)
    fs = flow.evaluate(X)
    rdot = _orientation_velocity(params.shape, R, fs.grad_u)
    if order is ExpansionOrder.ZERO:
        return fs.u, rdot
    act = params.activity
    swim = act.kappa0 != 0.0 and act.alpha_f != 0.0
    if n < 2:
        # no pairs: only the swimming term can differ from the background
        return (fs.u + (act.kappa0 * params.epsilon * act.alpha_f) * R if swim else fs.u), rdot
    coef = params.volume_fraction / n
    e = np.asarray(params.buoyancy)
    forces = coef * (e - fs.h)
    strain = tracefree(sym(fs.grad_u))
    stress = 2.0 * _sigma0(params.shape, R, strain)
    if act.kappa0 != 0.0:
        stress = stress + act.kappa0 * _active_stresslet(act, R)
    pair, _ = stokes_pair_sum(X, X, forces=forces, stresses=coef * stress, skip_self=True)
    V = fs.u + pair
    if swim:
        V = V + (act.kappa0 * params.epsilon * act.alpha_f) * R
    return V, rdot


def compute_velocities(state, params, flow, order=ExpansionOrder.FIRST):
    """Translational velocities ``V`` and orientation rates ``rdot`` of all particles.

    Raises :class:`GuardError` if two particles are closer than ``4 eps``.
    """
    order = ExpansionOrder.parse(order)
    if state.n != params.n:
        raise ValidationError(f"state has {state.n} particles, params expect {params.n}")
    check_guard(state.X, params, state.t)
    return _velocities(state.X, state.R, params, flow, order)


@njit(cache=True)
def _normalize(R):
    out = np.empty((R.shape[0], 3))
    for i in range(R.shape[0]):
        s = 1.0 / np.sqrt(R[i, 0] * R[i, 0] + R[i, 1] * R[i, 1] + R[i, 2] * R[i, 2])
        for a in range(3):
            out[i, a] = R[i, a] * s
    return out


@njit(cache=True)
def _rk4_combine(Z0, k1, k2, k3, k4, dt):
    """``Z0 + dt/6 (k1 + 2 k2 + 2 k3 + k4)`` with unit orientations restored.

    Particles whose orientation increment is exactly zero keep it bit-for-bit.
    """
    c = dt / 6.0
    Z = np.empty_like(Z0)
    for i in range(Z0.shape[0]):
        moved = False
        for a in range(6):
            d = c * (k1[i, a] + k4[i, a] + 2.0 * (k2[i, a] + k3[i, a]))
            Z[i, a] = Z0[i, a] + d
            if a >= 3 and d != 0.0:
                moved = True
        if moved:
            s = 1.0 / np.sqrt(Z[i, 3] * Z[i, 3] + Z[i, 4] * Z[i, 4] + Z[i, 5] * Z[i, 5])
            for a in range(3, 6):
                Z[i, a] *= s
    return Z


def _rk4_packed(Z0, t0, dt, params, flow, order):
    """One RK4 step on the packed state ``Z = [X | R]`` of shape ``(N, 6)``."""
    def rhs(Z, t):
        X = Z[:, :3]
        check_guard(X, params, t)
        V, rdot = _velocities(X, _normalize(Z[:, 3:]), params, flow, order)
        return np.concatenate((V, rdot), axis=1)

    h = 0.5 * dt
    k1 = rhs(Z0, t0)
    k2 = rhs(Z0 + h * k1, t0 + h)
    k3 = rhs(Z0 + h * k2, t0 + h)
    k4 = rhs(Z0 + dt * k3, t0 + dt)
    return _rk4_combine(Z0, k1, k2, k3, k4, dt)


def _rk4(X0, R0, t0, dt, params, flow, order):
    Z = _rk4_packed(np.concatenate((X0, R0), axis=1), t0, dt, params, flow, order)
    return Z[:, :3].copy(), Z[:, 3:].copy()


def step(state, params, flow, order=ExpansionOrder.FIRST, dt=1e-2):
    """Advance one classical RK4 step; orientations are renormalized afterwards."""
    if not dt > 0:
        raise ValidationError("dt must be > 0")
    order = ExpansionOrder.parse(order)
    X, R = _rk4(state.X, state.R, state.t, dt, params, flow, order)
    return SuspensionState(X, R, state.t + dt)


def simulate(state, params, flow, order, dt, n_steps, record_every=None):
    """Run ``n_steps`` RK4 steps; returns the final state and recorded snapshots.

    Snapshots hold the initial state, every ``record_every``-th state and
    the final state.
    """
    if not dt > 0:
        raise ValidationError("dt must be > 0")
    order = ExpansionOrder.parse(order)
    snaps = [state.copy()]
    Z, t0 = np.concatenate((state.X, state.R), axis=1), state.t
    for k in range(1, n_steps + 1):
        Z = _rk4_packed(Z, t0 + (k - 1) * dt, dt, params, flow, order)
        if record_every and k % record_every == 0:
            snaps.append(SuspensionState(Z[:, :3].copy(), Z[:, 3:].copy(), t0 + k * dt))
    final = SuspensionState(Z[:, :3].copy(), Z[:, 3:].copy(), t0 + n_steps * dt)
    if n_steps > 0 and not (record_every and n_steps % record_every == 0):
        snaps.append(final.copy())
    return final, snaps


def alpha_sums(X, sigma):
    """``max_n (1/N) sum_{m != n} |X^n - X^m|^(sigma - 3)``."""
    n = len(X)
    if n < 2:
        return 0.0
    D = squareform(pdist(X))
    np.fill_diagonal(D, 1.0)
    P = D ** (sigma - 3.0)
    np.fill_diagonal(P, 0.0)
    return float(P.sum(axis=1).max() / n)


def diagnostics(state, params, flow=None, order=ExpansionOrder.FIRST):
    """Minimal distance, the ``alpha^sigma`` sums for sigma in {0, 1, 2}, and peak speeds.

    Peak speeds are only computed when ``flow`` is given (``nan`` otherwise);
    no guard is applied here.
    """
    X = state.X
    d = min_distance(X)
    alpha = {s: alpha_sums(X, s) for s in (0, 1, 2)}
    v_max = omega_max = float("nan")
    if flow is not None:
        V, rdot = _velocities(X, state.R, params, flow, ExpansionOrder.parse(order))
        v_max = float(np.linalg.norm(V, axis=1).max())
        omega_max = float(np.linalg.norm(rdot, axis=1).max())
    return Diagnostics(d_min=d, alpha=alpha, v_max=v_max, omega_max=omega_max)


def sample_separated(draw, n, min_dist, rng, budget=200):
    """Random sequential addition: draw candidates until each is ``min_dist`` from all others.

    ``draw(rng, k)`` returns ``k`` candidate points. ``budget`` bounds the
    number of candidate draws per accepted point on average.
    """
    pts = np.empty((n, 3))
    count = 0
    tries = 0
    max_tries = budget * n
    while count < n:
        batch = draw(rng, max(16, n - count))
        for p in batch:
            tries += 1
            if tries > max_tries:
                raise SetupError(
                    f"could not place {n} points with separation {min_dist:.4g} "
                    f"within {max_tries} draws (placed {count})"
                )
            if count and np.min(np.sum((pts[:count] - p) ** 2, axis=1)) < min_dist * min_dist:
                continue
            pts[count] = p
            count += 1
            if count == n:
                break
    return pts

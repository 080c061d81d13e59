"""Mean-field kinetic model solved by weighted characteristics.

The phase-space density is a weighted sample cloud ``sum_k w_k delta(x_k, r_k)``.
At each instant the effective velocity solves the fixed point

    u = u_h + lam G_eta * (mu (e - h)) + lam dG_eta * (2 <Sigma nu> D(u) + kappa0 <Sigma_f nu>)

where ``*`` against the sample cloud is a weighted sum with mollified kernels
(``|x| -> sqrt(|x|^2 + eta^2)``). Samples are then pushed along
``dx/dt = u(x)``, ``dr/dt = (Omega(r) grad u(x)) r``. Swimming is not part of
this model.

The explicit (linearized) variant replaces ``D(u)`` by ``D(u_h)`` and builds
the correction from a baseline cloud transported by ``u_h`` alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc, vonmises_fisher

from .errors import ContractionError, ValidationError
from .kernels import stokes_pair_sum, sym, tracefree
from .particles import _active_stresslet, _orientation_velocity, _sigma0, check_unit


@dataclass(frozen=True)
class InitialDensitySpec:
    """Product law: spatial part (uniform ball or Gaussian) times orientation part.

    ``spatial`` is ``"ball"`` (``scale`` = radius) or ``"gaussian"``
    (``scale`` = standard deviation). ``orientation`` is ``"uniform"`` or
    ``"vmf"`` with ``mean_direction`` and ``concentration``.
    """

    spatial: str = "ball"
    center: tuple = (0.0, 0.0, 0.0)
    scale: float = 1.0
    orientation: str = "uniform"
    mean_direction: tuple = (0.0, 0.0, 1.0)
    concentration: float = 0.0

    def __post_init__(self):
        if self.spatial not in ("ball", "gaussian"):
            raise ValidationError(f"unknown spatial law {self.spatial!r}")
        if self.orientation not in ("uniform", "vmf"):
            raise ValidationError(f"unknown orientation law {self.orientation!r}")
        if not self.scale > 0:
            raise ValidationError("spatial scale must be > 0")
        if self.orientation == "vmf":
            check_unit(np.asarray(self.mean_direction, dtype=float))
            if not self.concentration > 0:
                raise ValidationError("von Mises-Fisher concentration must be > 0")

    @property
    def support_radius(self):
        return self.scale if self.spatial == "ball" else 3.0 * self.scale

    def draw_positions(self, rng, k, quasi=False):
        c = np.asarray(self.center, dtype=float)
        if quasi:
            u = qmc.Sobol(d=3, scramble=True, seed=rng).random(k)
            u = np.clip(u, 1e-12, 1.0 - 1e-12)
        else:
            u = rng.random((k, 3))
        if self.spatial == "ball":
            cos_t = 2.0 * u[:, 1] - 1.0
            sin_t = np.sqrt(1.0 - cos_t**2)
            phi = 2.0 * np.pi * u[:, 2]
            rad = self.scale * np.cbrt(u[:, 0])
            d = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)
            return c + rad[:, None] * d
        from scipy.special import ndtri

        return c + self.scale * ndtri(u)

    def draw_orientations(self, rng, k):
        if self.orientation == "uniform":
            v = rng.standard_normal((k, 3))
            return v / np.linalg.norm(v, axis=1, keepdims=True)
        mu = np.asarray(self.mean_direction, dtype=float)
        r = vonmises_fisher(mu / np.linalg.norm(mu), self.concentration).rvs(k, random_state=rng)
        return np.asarray(r).reshape(k, 3) / np.linalg.norm(r, axis=-1).reshape(k, 1)


@dataclass
class KineticEnsemble:
    x: np.ndarray
    r: np.ndarray
    w: np.ndarray
    eta: float
    t: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1, 3)
        self.r = check_unit(np.asarray(self.r, dtype=float).reshape(-1, 3))
        self.w = np.asarray(self.w, dtype=float).reshape(-1)
        if not (len(self.x) == len(self.r) == len(self.w)):
            raise ValidationError("ensemble arrays must have equal length")
        if np.any(self.w < 0):
            raise ValidationError("weights must be non-negative")
        if not self.eta > 0:
            raise ValidationError("mollification width must be > 0")

    @property
    def size(self):
        return len(self.w)

    @property
    def total_weight(self):
        return math.fsum(self.w)

    def copy(self):
        return KineticEnsemble(self.x.copy(), self.r.copy(), self.w.copy(), self.eta, self.t)

    def resample(self, n, rng):
        """Equal-weight subsample of size ``n`` (without replacement when possible)."""
        p = self.w / self.w.sum()
        replace = n > self.size or not np.allclose(p, p[0])
        idx = rng.choice(self.size, size=n, replace=replace, p=None if not replace else p)
        return self.x[idx], self.r[idx]


def default_eta(k, support_radius):
    return 2.0 * k ** (-1.0 / 3.0) * support_radius


def sample_initial(spec, k, seed, quasi=False, eta=None):
    """Draw ``k`` equal-weight samples from ``spec``; deterministic in ``seed``."""
    if k < 1:
        raise ValidationError("ensemble size K must be >= 1")
    rng = np.random.default_rng(seed)
    x = spec.draw_positions(rng, k, quasi=quasi)
    r = spec.draw_orientations(rng, k)
    w = np.full(k, 1.0 / k)
    if eta is None:
        eta = default_eta(k, spec.support_radius)
    return KineticEnsemble(x, r, w, eta)


@dataclass(frozen=True)
class FixedPointConfig:
    tolerance: float = 1e-10
    max_iterations: int = 50
    relaxation: float = 1.0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValidationError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if not 0 < self.relaxation <= 1:
            raise ValidationError("relaxation must lie in (0, 1]")


@dataclass
class VelocityField:
    """``u(x) = u_h(x) + sum_k G_eta(x - x_k) f_k + dG_eta(x - x_k) : T_k``."""

    flow: object
    sources: np.ndarray
    forces: np.ndarray
    stresses: np.ndarray
    eta: float
    residuals: list = field(default_factory=list)
    # (u, grad_u) at the sources, filled in by the solver
    at_sources: tuple = None

    @property
    def iterations(self):
        return len(self.residuals)

    def _add(self, x, u_h, grad_h, with_grad):
        u, g = stokes_pair_sum(x, self.sources, self.forces, self.stresses, self.eta, with_grad=with_grad)
        u = u_h + u
        return (u, grad_h + g) if with_grad else (u, None)

    def evaluate(self, x, with_grad=True):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = x.reshape(-1, 3)
        fs = self.flow.evaluate(pts)
        u, g = self._add(pts, fs.u, fs.grad_u, with_grad)
        if single:
            return u[0], (g[0] if with_grad else None)
        return u, g

    def __call__(self, x):
        return self.evaluate(x, with_grad=False)[0]


def _source_terms(ens, params, h_at, strain):
    lam = params.volume_fraction
    lw = (lam * ens.w)[:, None]
    e = np.asarray(params.buoyancy)
    forces = lw * (e - h_at)
    act = params.activity
    stress = 2.0 * _sigma0(params.shape, ens.r, strain)
    if act.kappa0 != 0.0:
        stress = stress + act.kappa0 * _active_stresslet(act, ens.r)
    return forces, lw[:, :, None] * stress


def solve_velocity_field(ensemble, params, flow, config=FixedPointConfig(), initial_strain=None):
    """Effective velocity of the kinetic model for a frozen sample cloud.

    Iterates ``u_{j+1} = u_h + lam G * (mu (e - h)) + lam dG * (2 <Sigma nu> D(u_j) + kappa0 <Sigma_f nu>)``
    from ``u_0 = u_h`` (or from ``initial_strain`` at the samples) until the
    sup-norm change at the samples drops below ``config.tolerance``.

    Raises :class:`ContractionError` after ``max_iterations`` or when the
    residual fails to decrease three times in a row.
    """
    ens = ensemble
    fs = flow.evaluate(ens.x)
    strain = tracefree(sym(fs.grad_u)) if initial_strain is None else np.asarray(initial_strain)
    u_prev = fs.u
    residuals = []
    rises = 0
    for _ in range(config.max_iterations):
        forces, stresses = _source_terms(ens, params, fs.h, strain)
        vf = VelocityField(flow, ens.x, forces, stresses, ens.eta)
        u, g = vf._add(ens.x, fs.u, fs.grad_u, True)
        res = float(np.max(np.abs(u - u_prev))) if len(u) else 0.0
        if residuals and res >= residuals[-1]:
            rises += 1
        else:
            rises = 0
        residuals.append(res)
        if res < config.tolerance:
            vf.residuals = residuals
            vf.at_sources = (u, g)
            return vf
        if rises >= 3:
            raise ContractionError(
                "fixed-point residual did not decrease for 3 consecutive iterations "
                "(volume fraction too large or mollification too small)",
                residuals,
            )
        new_strain = tracefree(sym(g))
        if config.relaxation != 1.0:
            new_strain = (1.0 - config.relaxation) * strain + config.relaxation * new_strain
        strain = new_strain
        u_prev = u
    raise ContractionError(
        f"fixed point not reached in {config.max_iterations} iterations "
        f"(last residual {residuals[-1]:.3e})",
        residuals,
    )


def explicit_mf_velocity(baseline, params, flow):
    """Linearized mean-field velocity built from a baseline cloud (``D(u)`` replaced by ``D(u_h)``).

    Equals the first iterate of :func:`solve_velocity_field`.
    """
    fs = flow.evaluate(baseline.x)
    forces, stresses = _source_terms(baseline, params, fs.h, tracefree(sym(fs.grad_u)))
    return VelocityField(flow, baseline.x, forces, stresses, baseline.eta)


def _normalize(r):
    return r / np.linalg.norm(r, axis=1, keepdims=True)


def _rk4(state, rhs, dt):
    x0, r0 = state
    k1 = rhs(x0, r0, 0)
    k2 = rhs(x0 + 0.5 * dt * k1[0], r0 + 0.5 * dt * k1[1], 1)
    k3 = rhs(x0 + 0.5 * dt * k2[0], r0 + 0.5 * dt * k2[1], 2)
    k4 = rhs(x0 + dt * k3[0], r0 + dt * k3[1], 3)
    x = x0 + (dt / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    dr = (dt / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    r = r0 + dr
    # samples that did not rotate keep their orientation bit-for-bit
    moved = np.any(dr != 0.0, axis=1)
    r[moved] = _normalize(r[moved])
    return x, r


@dataclass
class StepLog:
    iterations: list = field(default_factory=list)
    residuals: list = field(default_factory=list)


def kinetic_step(ensemble, params, flow, config=FixedPointConfig(), dt=1e-2,
                 frozen=False, warm_start=True, log=None):
    """One RK4 step of the characteristics; weights are untouched.

    By default the velocity field is re-solved at every stage. With
    ``frozen=True`` it is solved once at the start of the step and reused
    (first order in ``dt`` for the mean-field coupling). ``warm_start`` seeds
    each stage's fixed point with the previous stage's strain at the samples.
    """
    if not dt > 0:
        raise ValidationError("dt must be > 0")
    ens = ensemble
    shape = params.shape
    cache = {"strain": None, "field": None}

    def rhs(x, r, stage):
        r = _normalize(r)
        if frozen and cache["field"] is not None:
            u, g = cache["field"].evaluate(x)
        else:
            stage_ens = KineticEnsemble.__new__(KineticEnsemble)
            stage_ens.x, stage_ens.r, stage_ens.w, stage_ens.eta, stage_ens.t = x, r, ens.w, ens.eta, ens.t
            init = cache["strain"] if warm_start else None
            vf = solve_velocity_field(stage_ens, params, flow, config, initial_strain=init)
            u, g = vf.at_sources
            cache["strain"] = tracefree(sym(g))
            cache["field"] = vf
            if log is not None:
                log.iterations.append(vf.iterations)
                log.residuals.append(vf.residuals)
        return u, _orientation_velocity(shape, r, g)

    x, r = _rk4((ens.x, ens.r), rhs, dt)
    return KineticEnsemble(x, r, ens.w, ens.eta, ens.t + dt)


def baseline_step(ensemble, params, flow, dt):
    """RK4 step of the ``lam = 0`` transport: ``dx/dt = u_h``, ``dr/dt = (Omega grad u_h) r``."""
    shape = params.shape

    def rhs(x, r, stage):
        fs = flow.evaluate(x)
        return fs.u, _orientation_velocity(shape, _normalize(r), fs.grad_u)

    x, r = _rk4((ensemble.x, ensemble.r), rhs, dt)
    return KineticEnsemble(x, r, ensemble.w, ensemble.eta, ensemble.t + dt)


def explicit_step(baseline, tilde, params, flow, dt):
    """Joint RK4 step of the baseline cloud and the cloud moved by the explicit velocity.

    Returns ``(baseline, tilde)`` advanced by ``dt``. Both clouds rotate with
    ``(Omega(r) grad u_h) r``; the tilde cloud translates with the explicit
    mean-field velocity of the baseline cloud at the same stage.
    """
    if baseline.size != tilde.size:
        raise ValidationError("baseline and explicit clouds must have the same size")
    shape = params.shape
    n = baseline.size

    def rhs(x, r, stage):
        r = _normalize(r)
        xb, xt = x[:n], x[n:]
        fs = flow.evaluate(x)
        rdot = _orientation_velocity(shape, r, fs.grad_u)
        base = KineticEnsemble.__new__(KineticEnsemble)
        base.x, base.r, base.w, base.eta, base.t = xb, r[:n], baseline.w, baseline.eta, baseline.t
        vf = explicit_mf_velocity(base, params, flow)
        ut, _ = vf._add(xt, fs.u[n:], None, False)
        return np.concatenate([fs.u[:n], ut]), rdot

    x0 = np.concatenate([baseline.x, tilde.x])
    r0 = np.concatenate([baseline.r, tilde.r])
    x, r = _rk4((x0, r0), rhs, dt)
    t = baseline.t + dt
    return (
        KineticEnsemble(x[:n], r[:n], baseline.w, baseline.eta, t),
        KineticEnsemble(x[n:], r[n:], tilde.w, tilde.eta, t),
    )


def evolve(ensemble, params, flow, dt, n_steps, mode="doi", config=FixedPointConfig(),
           frozen=False, warm_start=True, record_every=1, log=None):
    """Advance a cloud ``n_steps`` times; returns the recorded clouds, starting with the input.

    The final cloud is always the last entry, whether or not it falls on a
    ``record_every`` boundary.

    ``mode="doi"`` follows the self-consistent velocity; ``mode="explicit"``
    returns the cloud moved by the linearized velocity of a baseline cloud
    that is itself transported at ``lam = 0``.
    """
    if mode not in ("doi", "explicit"):
        raise ValidationError(f"unknown kinetic mode {mode!r}")
    out = [ensemble]
    cur = ensemble
    base = ensemble
    for k in range(1, n_steps + 1):
        if mode == "doi":
            cur = kinetic_step(cur, params, flow, config, dt, frozen=frozen, warm_start=warm_start, log=log)
        else:
            base, cur = explicit_step(base, cur, params, flow, dt)
        if record_every and k % record_every == 0:
            out.append(cur)
    if out[-1] is not cur:
        out.append(cur)
    return out

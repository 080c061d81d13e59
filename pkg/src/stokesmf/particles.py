"""Single-particle effective coefficients for spheres and slender fibers.

All functions accept single vectors/matrices or stacked batches with a
leading sample axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ValidationError
from .kernels import EYE, skew, sym, tracefree_outer

UNIT_TOL = 1e-9
EINSTEIN_FACTOR = 2.5  # (d + 2) / 2 for d = 3


@dataclass(frozen=True)
class Sphere:
    kind: str = "sphere"


@dataclass(frozen=True)
class SlenderFiber:
    """Slender-body closure with stresslet factor ``alpha1`` and Bretherton-like ``alpha2``."""

    alpha1: float = 1.0
    alpha2: float = 1.0
    kind: str = "slender"

    def __post_init__(self):
        if not self.alpha1 > 0:
            raise ValidationError(f"alpha1 must be > 0, got {self.alpha1}")
        if not 0 < self.alpha2 <= 1:
            raise ValidationError(f"alpha2 must lie in (0, 1], got {self.alpha2}")


ShapeModel = Sphere | SlenderFiber


@dataclass(frozen=True)
class ActivityModel:
    """Self-propulsion constants.

    ``kappa0`` is the propulsion intensity, ``beta_f`` the active stresslet
    strength (> 0 puller, < 0 pusher) and ``alpha_f`` the swim-speed factor.
    """

    kappa0: float = 0.0
    beta_f: float = 0.0
    alpha_f: float = 0.0

    def __post_init__(self):
        if not 0 <= self.kappa0 <= 1:
            raise ValidationError(f"kappa0 must lie in [0, 1], got {self.kappa0}")
        if self.alpha_f < 0:
            raise ValidationError(f"alpha_f must be >= 0, got {self.alpha_f}")


def shape_from_name(name, alpha1=1.0, alpha2=1.0):
    if name == "sphere":
        return Sphere()
    if name == "slender":
        return SlenderFiber(alpha1=alpha1, alpha2=alpha2)
    raise ValidationError(f"unknown shape model {name!r}")


def check_unit(r, tol=UNIT_TOL):
    r = np.asarray(r, dtype=float)
    if r.shape[-1] != 3:
        raise ValidationError(f"orientation must have trailing dimension 3, got {r.shape}")
    if np.any(np.abs(np.linalg.norm(r, axis=-1) - 1.0) > tol):
        raise ValidationError("orientation vectors must have unit length")
    return r


def _check_strain(E, tol=UNIT_TOL):
    E = np.asarray(E, dtype=float)
    scale = max(1.0, float(np.max(np.abs(E), initial=0.0)))
    if np.any(np.abs(E - np.swapaxes(E, -1, -2)) > tol * scale):
        raise ValidationError("strain rate must be symmetric")
    if np.any(np.abs(np.trace(E, axis1=-2, axis2=-1)) > tol * scale):
        raise ValidationError("strain rate must be trace-free")
    return E


def sigma0_apply(model, r, E):
    """Passive stresslet response ``Sigma(r) E`` to a trace-free symmetric strain ``E``."""
    return _sigma0(model, check_unit(r), _check_strain(E))


def _sigma0(model, r, E):
    if isinstance(model, Sphere):
        return EINSTEIN_FACTOR * E
    rr = tracefree_outer(r, r)
    proj = np.einsum("...ij,...ij->...", E, rr)
    return model.alpha1 * proj[..., None, None] * rr


def orientation_velocity(model, r, H):
    """Rate of change ``dr/dt`` of a particle axis in a local velocity gradient ``H``."""
    return _orientation_velocity(model, check_unit(r), np.asarray(H, dtype=float))


@njit(cache=True)
def _orient_rows(r, H, alpha2, sphere):
    n = r.shape[0]
    out = np.empty((n, 3))
    for i in range(n):
        hr = np.zeros(3)
        htr = np.zeros(3)
        for a in range(3):
            for b in range(3):
                hr[a] += H[i, a, b] * r[i, b]
                htr[a] += H[i, b, a] * r[i, b]
        if sphere:
            for a in range(3):
                out[i, a] = 0.5 * (hr[a] - htr[a])
        else:
            ar = np.empty(3)
            for a in range(3):
                ar[a] = 0.5 * alpha2 * (hr[a] + htr[a]) + 0.5 * (hr[a] - htr[a])
            dot = ar[0] * r[i, 0] + ar[1] * r[i, 1] + ar[2] * r[i, 2]
            for a in range(3):
                out[i, a] = ar[a] - dot * r[i, a]
    return out


def _orientation_velocity(model, r, H):
    # (I - rr)(alpha2 sym H + skew H) r; the projection vanishes for spheres
    sphere = isinstance(model, Sphere)
    a2 = 1.0 if sphere else float(model.alpha2)
    if r.ndim == 2 and H.ndim == 3 and len(r) == len(H) and r.dtype == H.dtype == np.float64:
        return _orient_rows(r, H, a2, sphere)
    shape = np.broadcast_shapes(r.shape, H.shape[:-1])
    rb = np.ascontiguousarray(np.broadcast_to(r, shape), dtype=float).reshape(-1, 3)
    Hb = np.ascontiguousarray(np.broadcast_to(H, shape + (3,)), dtype=float).reshape(-1, 3, 3)
    out = _orient_rows(rb, Hb, a2, sphere)
    return out.reshape(shape)


def sphere_rotation(H):
    """Angular velocity tensor of a sphere: the skew part of ``H``."""
    return skew(np.asarray(H, dtype=float))


def active_stresslet(activity, r):
    return _active_stresslet(activity, check_unit(r))


def _active_stresslet(activity, r):
    return activity.beta_f * tracefree_outer(r, r)


def swim_velocity(activity, r):
    return activity.alpha_f * check_unit(r)


def coefficient_table(model, activity, r, H):
    """Row of coefficient actions for one orientation and gradient (used by ``coeffs``)."""
    r = check_unit(r)
    H = np.asarray(H, dtype=float)
    E = sym(H) - np.trace(H) * EYE / 3.0
    return {
        "sigma0": _sigma0(model, r, E),
        "rdot": _orientation_velocity(model, r, H),
        "sigma_f": _active_stresslet(activity, r),
        "v_f": activity.alpha_f * r,
    }

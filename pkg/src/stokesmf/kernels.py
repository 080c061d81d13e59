"""Three-dimensional tensor algebra and Stokeslet kernels.

Conventions used throughout the package:

* ``grad_u[i, j] = d u_i / d x_j`` for velocity gradients.
* ``stokeslet_grad(x)[i, j, k] = d G_ij / d x_k``.
* Contraction of the kernel gradient with a matrix ``T`` is
  ``(dG_ij/dx_k)(x) T_jk``, which is the kernel of ``G * div(T)``.

Pair sums over many sources are done by :func:`stokes_pair_sum`, a numba
kernel parallel over targets with the source loop in fixed order, so results
do not depend on the number of threads.
"""
from __future__ import annotations

import numpy as np
from numba import njit, prange

from .errors import ValidationError

EYE = np.eye(3)
_C = 1.0 / (8.0 * np.pi)


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ValidationError(f"expected trailing dimension 3, got shape {x.shape}")
    return x


def _check_nonzero(x, eta=0.0):
    if eta == 0.0 and np.any(np.linalg.norm(x, axis=-1) == 0.0):
        raise ValidationError("Stokeslet is singular at x = 0")


def sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def skew(a):
    return 0.5 * (a - np.swapaxes(a, -1, -2))


def tracefree(a):
    tr = np.trace(a, axis1=-2, axis2=-1)
    return a - tr[..., None, None] * EYE / 3.0


def tracefree_outer(a, b):
    """``a (x) b - (a.b) Id / 3``."""
    a = _as_points(a)
    b = _as_points(b)
    return a[..., :, None] * b[..., None, :] - np.sum(a * b, axis=-1)[..., None, None] * EYE / 3.0


def tracefree_sym_outer(a, b):
    """``(a (x) b + b (x) a) / 2 - (a.b) Id / 3``."""
    return sym(tracefree_outer(a, b))


def cross_skew(a, b):
    """Skew matrix ``(a x b)_ij = a_i b_j - a_j b_i``."""
    a = _as_points(a)
    b = _as_points(b)
    ab = a[..., :, None] * b[..., None, :]
    return ab - np.swapaxes(ab, -1, -2)


def stokeslet(x, eta=0.0):
    """Stokeslet ``(1/8pi) (Id/|x| + x x^T/|x|^3)``.

    With ``eta > 0`` the mollified kernel obtained by replacing ``|x|`` with
    ``sqrt(|x|^2 + eta^2)`` is returned instead. Accepts batches ``(..., 3)``.
    """
    x = _as_points(x)
    _check_nonzero(x, eta)
    s = np.sqrt(np.sum(x * x, axis=-1) + eta * eta)[..., None, None]
    return _C * (EYE / s + x[..., :, None] * x[..., None, :] / s**3)


def stokeslet_grad(x, eta=0.0):
    """Rank-3 tensor ``[i, j, k] = d G_ij / d x_k`` (mollified when ``eta > 0``)."""
    x = _as_points(x)
    _check_nonzero(x, eta)
    s = np.sqrt(np.sum(x * x, axis=-1) + eta * eta)[..., None, None, None]
    xi = x[..., :, None, None]
    xj = x[..., None, :, None]
    xk = x[..., None, None, :]
    d_ij = EYE[:, :, None]
    d_ik = EYE[:, None, :]
    d_jk = EYE[None, :, :]
    return _C * (
        (-d_ij * xk + d_ik * xj + d_jk * xi) / s**3 - 3.0 * xi * xj * xk / s**5
    )


def stokeslet_grad_apply(x, T):
    """``result_i = (dG_ij/dx_k)(x) T_jk`` for the singular kernel.

    The trace part of ``T`` is annihilated analytically (the Stokeslet is
    divergence-free), so only the trace-free part of ``T`` is used.
    """
    x = _as_points(x)
    _check_nonzero(x)
    T = tracefree(np.asarray(T, dtype=float))
    r = np.sqrt(np.sum(x * x, axis=-1))[..., None]
    Tx = np.einsum("...ij,...j->...i", T, x)
    Ttx = np.einsum("...ji,...j->...i", T, x)
    q = np.sum(x * Tx, axis=-1)[..., None]
    return _C * ((Ttx - Tx) / r**3 - 3.0 * x * q / r**5)


@njit(parallel=True, cache=True, fastmath=False)
def _pair_sum(targets, sources, forces, stresses, eta, exclude, use_forces, use_stress, with_grad):
    # stresses are assumed symmetric and trace-free
    m_t = targets.shape[0]
    n_s = sources.shape[0]
    c = 1.0 / (8.0 * np.pi)
    eta2 = eta * eta
    u_out = np.zeros((m_t, 3))
    g_out = np.zeros((m_t, 3, 3))
    for t in prange(m_t):
        u0 = 0.0
        u1 = 0.0
        u2 = 0.0
        g = np.zeros((3, 3))
        for s in range(n_s):
            if s == exclude[t]:
                continue
            x0 = targets[t, 0] - sources[s, 0]
            x1 = targets[t, 1] - sources[s, 1]
            x2 = targets[t, 2] - sources[s, 2]
            inv = 1.0 / np.sqrt(x0 * x0 + x1 * x1 + x2 * x2 + eta2)
            inv2 = inv * inv
            inv3 = inv2 * inv
            inv5 = inv3 * inv2
            if use_forces:
                f0 = forces[s, 0]
                f1 = forces[s, 1]
                f2 = forces[s, 2]
                xf = x0 * f0 + x1 * f1 + x2 * f2
                u0 += c * (f0 * inv + x0 * xf * inv3)
                u1 += c * (f1 * inv + x1 * xf * inv3)
                u2 += c * (f2 * inv + x2 * xf * inv3)
                if with_grad:
                    a = c * inv3
                    b = 3.0 * c * xf * inv5
                    g[0, 0] += a * (xf) - b * x0 * x0
                    g[0, 1] += a * (x0 * f1 - f0 * x1) - b * x0 * x1
                    g[0, 2] += a * (x0 * f2 - f0 * x2) - b * x0 * x2
                    g[1, 0] += a * (x1 * f0 - f1 * x0) - b * x1 * x0
                    g[1, 1] += a * (xf) - b * x1 * x1
                    g[1, 2] += a * (x1 * f2 - f1 * x2) - b * x1 * x2
                    g[2, 0] += a * (x2 * f0 - f2 * x0) - b * x2 * x0
                    g[2, 1] += a * (x2 * f1 - f2 * x1) - b * x2 * x1
                    g[2, 2] += a * (xf) - b * x2 * x2
            if use_stress:
                tx0 = stresses[s, 0, 0] * x0 + stresses[s, 0, 1] * x1 + stresses[s, 0, 2] * x2
                tx1 = stresses[s, 1, 0] * x0 + stresses[s, 1, 1] * x1 + stresses[s, 1, 2] * x2
                tx2 = stresses[s, 2, 0] * x0 + stresses[s, 2, 1] * x1 + stresses[s, 2, 2] * x2
                q = x0 * tx0 + x1 * tx1 + x2 * tx2
                w = -3.0 * c * q * inv5
                u0 += w * x0
                u1 += w * x1
                u2 += w * x2
                if with_grad:
                    inv7 = inv5 * inv2
                    d = 15.0 * c * q * inv7
                    e6 = -6.0 * c * inv5
                    g[0, 0] += w + e6 * x0 * tx0 + d * x0 * x0
                    g[0, 1] += e6 * x0 * tx1 + d * x0 * x1
                    g[0, 2] += e6 * x0 * tx2 + d * x0 * x2
                    g[1, 0] += e6 * x1 * tx0 + d * x1 * x0
                    g[1, 1] += w + e6 * x1 * tx1 + d * x1 * x1
                    g[1, 2] += e6 * x1 * tx2 + d * x1 * x2
                    g[2, 0] += e6 * x2 * tx0 + d * x2 * x0
                    g[2, 1] += e6 * x2 * tx1 + d * x2 * x1
                    g[2, 2] += w + e6 * x2 * tx2 + d * x2 * x2
        u_out[t, 0] = u0
        u_out[t, 1] = u1
        u_out[t, 2] = u2
        for i in range(3):
            for l in range(3):
                g_out[t, i, l] = g[i, l]
    return u_out, g_out


def stokes_pair_sum(targets, sources, forces=None, stresses=None, eta=0.0,
                    skip_self=False, with_grad=False, exclude=None):
    """Sum point-force and force-dipole contributions at ``targets``.

    ``u(x) = sum_s G_eta(x - y_s) forces_s + (dG_eta/dx_k)(x - y_s)_ij stresses_s[j, k]``

    Returns ``(u, grad_u)``; ``grad_u`` is ``None`` unless ``with_grad``.
    Stresses are reduced to their symmetric trace-free part before summing.
    With ``skip_self`` the target with the same index as a source is skipped
    (diagonal-free sum; requires targets and sources to be the same list).
    ``exclude`` generalizes this: one source index per target to leave out
    (``-1`` for none).
    """
    targets = np.ascontiguousarray(_as_points(targets).reshape(-1, 3))
    sources = np.ascontiguousarray(_as_points(sources).reshape(-1, 3))
    n = sources.shape[0]
    use_f = forces is not None
    use_t = stresses is not None
    f = np.ascontiguousarray(forces, dtype=float).reshape(n, 3) if use_f else np.zeros((1, 3))
    if use_t:
        T = np.asarray(stresses, dtype=float).reshape(n, 3, 3)
        T = np.ascontiguousarray(tracefree(sym(T)))
    else:
        T = np.zeros((1, 3, 3))
    if exclude is None:
        exclude = np.arange(len(targets)) if skip_self else np.full(len(targets), -1)
    exclude = np.ascontiguousarray(exclude, dtype=np.int64)
    u, g = _pair_sum(targets, sources, f, T, float(eta), exclude, use_f, use_t, bool(with_grad))
    return u, (g if with_grad else None)

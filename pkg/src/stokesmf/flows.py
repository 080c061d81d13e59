"""Ambient forcing ``h`` and the Stokes flow ``u_h = G * h`` it induces.

Every flow exposes ``evaluate(x) -> FlowSample`` for points of shape ``(3,)``
or ``(M, 3)``. :class:`LinearFlow` is not a decaying flow and exists for
single-particle orbit tests only.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ValidationError
from .kernels import stokeslet, stokeslet_grad, stokes_pair_sum


class FlowSample(NamedTuple):
    u: np.ndarray
    grad_u: np.ndarray
    h: np.ndarray


def _points(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ValidationError(f"points must have trailing dimension 3, got {x.shape}")
    return x


@dataclass(frozen=True)
class ZeroFlow:
    kind: str = "zero"

    def evaluate(self, x):
        x = _points(x)
        z = np.zeros(x.shape)
        return FlowSample(z, np.zeros(x.shape + (3,)), z.copy())


@dataclass(frozen=True)
class LinearFlow:
    """``u = A x`` with trace-free ``A`` (test-only: not decaying, ``h = 0``)."""

    A: tuple = ((0.0, 1.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    kind: str = "linear"

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.shape != (3, 3):
            raise ValidationError("LinearFlow gradient must be 3x3")
        if abs(np.trace(A)) > 1e-12 * max(1.0, np.abs(A).max()):
            raise ValidationError("LinearFlow gradient must be trace-free")
        object.__setattr__(self, "A", tuple(map(tuple, A)))
        object.__setattr__(self, "_A", A)

    @classmethod
    def simple_shear(cls, gamma=1.0):
        """``u = (gamma y, 0, 0)``."""
        return cls(A=((0.0, gamma, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)))

    def evaluate(self, x):
        x = _points(x)
        A = self._A
        u = x @ A.T
        grad = np.repeat(A[None], len(x), axis=0) if x.ndim == 2 else A.copy()
        return FlowSample(u, grad, np.zeros(x.shape))


def blob(x, delta):
    """Blob density ``15 delta^4 / (8 pi (|x|^2 + delta^2)^(7/2))``, unit mass."""
    r2 = np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)
    return 15.0 * delta**4 / (8.0 * np.pi * (r2 + delta**2) ** 3.5)


@dataclass(frozen=True)
class RegularizedStokeslet:
    """Flow of a point force ``F`` at ``center`` spread over the blob of width ``delta``.

    ``h(x) = F * blob(x - center)`` and ``u`` is the matching closed form
    ``[F (r^2 + 2 delta^2) + (F.x) x] / (8 pi (r^2 + delta^2)^(3/2))``.
    At the center ``u = F / (4 pi delta)``; far away ``u -> G(x - center) F``.
    """

    center: tuple = (0.0, 0.0, 0.0)
    force: tuple = (1.0, 0.0, 0.0)
    delta: float = 0.5
    kind: str = "regularized_stokeslet"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValidationError(f"blob width must be > 0, got {self.delta}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "force", tuple(float(c) for c in self.force))

    def evaluate(self, x):
        x = _points(x) - np.asarray(self.center)
        F = np.asarray(self.force)
        d2 = self.delta**2
        r2 = np.sum(x * x, axis=-1)[..., None]
        s2 = r2 + d2
        s3 = s2 * np.sqrt(s2)
        s5 = s3 * s2
        Fx = (x @ F)[..., None]
        c = 1.0 / (8.0 * np.pi)
        u = c * (F * (r2 + 2.0 * d2) + Fx * x) / s3
        # grad[i, l] = d u_i / d x_l
        xi = x[..., :, None]
        xl = x[..., None, :]
        Fi = F[:, None]
        Fl = F[None, :]
        s3g = s3[..., None]
        s5g = s5[..., None]
        grad = c * (
            Fi * 2.0 * xl / s3g
            - 3.0 * Fi * (r2 + 2.0 * d2)[..., None] * xl / s5g
            + (Fl * xi + Fx[..., None] * np.eye(3)) / s3g
            - 3.0 * Fx[..., None] * xi * xl / s5g
        )
        h = F * blob(x, self.delta)[..., None]
        return FlowSample(u, grad, h)


# ---------------------------------------------------------------------------
# tabulated forcing on a regular lattice


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def box_integral(lo, hi):
    """Integral of the Stokeslet over the box ``[lo, hi]`` containing the origin.

    The box is split into six pyramids with apex at the origin; because ``G``
    is homogeneous of degree -1 each pyramid reduces to ``(a / 2) int_face G dA``
    with ``a`` the apex-face distance, a smooth integral done by tensor
    Gauss-Legendre on the face.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > 0) or np.any(hi < 0):
        raise ValidationError("box must contain the evaluation point")
    total = np.zeros((3, 3))
    n = len(_GL_NODES)
    for axis in range(3):
        b, c = [a for a in range(3) if a != axis]
        hb = 0.5 * (hi[b] - lo[b])
        hc = 0.5 * (hi[c] - lo[c])
        w2 = np.outer(_GL_WEIGHTS, _GL_WEIGHTS) * hb * hc
        for a in (lo[axis], hi[axis]):
            if a == 0.0:
                continue
            P = np.empty((n, n, 3))
            P[..., axis] = a
            P[..., b] = (0.5 * (hi[b] + lo[b]) + hb * _GL_NODES)[:, None]
            P[..., c] = (0.5 * (hi[c] + lo[c]) + hc * _GL_NODES)[None, :]
            total += 0.5 * abs(a) * np.einsum("ab,abij->ij", w2, stokeslet(P))
    return total


def cell_integral(offset, spacing):
    """Integral of the Stokeslet over a cube cell of side ``spacing``.

    ``offset`` is the evaluation point minus the cell center.
    """
    o = np.asarray(offset, dtype=float)
    half = 0.5 * spacing
    return box_integral(-half - o, half - o)


@dataclass
class LatticeField:
    """Vector samples ``values[ix, iy, iz, :]`` on a regular lattice."""

    origin: np.ndarray
    spacing: float
    values: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 4 or self.values.shape[-1] != 3 or self.values.size == 0:
            raise ValidationError("lattice field must have shape (nx, ny, nz, 3) and be non-empty")
        if not self.spacing > 0:
            raise ValidationError("lattice spacing must be > 0")

    @property
    def shape(self):
        return self.values.shape[:3]

    def axes(self):
        return [self.origin[a] + self.spacing * np.arange(n) for a, n in enumerate(self.shape)]

    def nodes(self):
        ax = self.axes()
        return np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1).reshape(-1, 3)

    def scaled(self, factor):
        return LatticeField(self.origin, self.spacing, self.values * factor)

    @classmethod
    def from_function(cls, fn, lo, hi, spacing):
        lo = np.asarray(lo, dtype=float)
        n = np.floor((np.asarray(hi, dtype=float) - lo) / spacing + 1e-9).astype(int) + 1
        ax = [lo[a] + spacing * np.arange(n[a]) for a in range(3)]
        pts = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)
        return cls(lo, spacing, fn(pts))

    @classmethod
    def from_csv(cls, path):
        """Read rows ``x,y,z,hx,hy,hz`` (header optional) on a regular lattice."""
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.reader(fh):
                if not rec or rec[0].strip().startswith("#"):
                    continue
                try:
                    rows.append([float(v) for v in rec[:6]])
                except ValueError:
                    continue  # header
        if not rows:
            raise ValidationError(f"no lattice rows in {path}")
        data = np.asarray(rows)
        ax = [np.unique(data[:, a]) for a in range(3)]
        steps = np.concatenate([np.diff(a) for a in ax if len(a) > 1]) if any(len(a) > 1 for a in ax) else np.array([1.0])
        spacing = float(steps.mean())
        if np.any(np.abs(steps - spacing) > 1e-9 * max(1.0, spacing)):
            raise ValidationError("lattice must be regular with equal spacing on all axes")
        shape = tuple(len(a) for a in ax)
        if len(data) != np.prod(shape):
            raise ValidationError("lattice rows do not fill a full regular grid")
        idx = [np.rint((data[:, a] - ax[a][0]) / spacing).astype(int) for a in range(3)]
        values = np.zeros(shape + (3,))
        values[idx[0], idx[1], idx[2]] = data[:, 3:6]
        return cls(np.array([a[0] for a in ax]), spacing, values)

    def to_csv(self, path):
        nodes = self.nodes()
        vals = self.values.reshape(-1, 3)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z", "hx", "hy", "hz"])
            for p, v in zip(nodes, vals):
                w.writerow([repr(float(c)) for c in (*p, *v)])


def quadrature_convolve(field, x, width=2.5, with_grad=False):
    """Lattice quadrature of ``int G(x - y) h(y) dy``.

    Nodes carry cells of volume ``spacing^3``. The ``1/r`` singularity at
    ``x`` is removed by subtracting ``h(x) G(x - y) exp(-|x - y|^2 / a^2)``
    with ``a = width * spacing`` and adding back its exact integral
    ``h(x) a^2 / 3``. What remains is bounded near ``x``, and the error is
    ``O(spacing^3)`` for smooth ``h`` that vanishes at the lattice boundary.
    Points outside the lattice need no correction.

    With ``with_grad`` the gradient ``int dG(x - y) h(y) dy`` is returned too,
    using the same subtraction (whose kernel-gradient integral vanishes by
    symmetry).
    """
    if not isinstance(field, LatticeField):
        raise ValidationError("quadrature_convolve expects a LatticeField")
    x = _points(x)
    single = x.ndim == 1
    pts = x.reshape(-1, 3)
    nodes = field.nodes()
    vals = field.values.reshape(-1, 3)
    hs = field.spacing
    vol = hs**3
    shape = np.asarray(field.shape)
    a = width * hs
    reach = int(np.ceil(6.0 * a / hs))
    idx = np.rint((pts - field.origin) / hs).astype(int)
    near = np.all((idx >= -reach) & (idx < shape + reach), axis=1)
    on_node = np.all((idx >= 0) & (idx < shape), axis=1)
    flat = np.where(on_node, np.ravel_multi_index(np.clip(idx, 0, shape - 1).T, field.shape), -1)
    coincident = np.where(on_node, np.all(pts == nodes[np.maximum(flat, 0)], axis=1), False)
    exclude = np.where(coincident, flat, -1)
    u, g = stokes_pair_sum(pts, nodes, forces=vals * vol, exclude=exclude, with_grad=with_grad)

    def _out():
        if with_grad:
            return (u[0], g[0]) if single else (u, g)
        return u[0] if single else u

    if not np.any(near):
        return _out()
    interp = RegularGridInterpolator(field.axes(), field.values, bounds_error=False, fill_value=0.0)
    hx = interp(pts[near])
    for k, t in enumerate(np.flatnonzero(near)):
        if not np.any(hx[k]):
            continue
        lo = np.maximum(idx[t] - reach, 0)
        hi = np.minimum(idx[t] + reach, shape - 1)
        ax = [field.origin[d] + hs * np.arange(lo[d], hi[d] + 1) for d in range(3)]
        rel = pts[t] - np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1).reshape(-1, 3)
        r2 = np.sum(rel * rel, axis=1)
        keep = r2 > 0.0
        psi = np.exp(-r2[keep] / a**2)
        G = stokeslet(rel[keep]) * psi[:, None, None]
        u[t] += (a * a / 3.0) * hx[k] - vol * np.einsum("sij,j->i", G, hx[k])
        if with_grad:
            dG = stokeslet_grad(rel[keep]) * psi[:, None, None, None]
            g[t] -= vol * np.einsum("sijl,j->il", dG, hx[k])
    return _out()


def lattice_gradient(values, spacing):
    """Fourth-order central differences along each lattice axis (second order at the edges).

    Returns ``d values / d x_axis`` stacked on a new last axis.
    """
    out = []
    for axis in range(3):
        g = np.gradient(values, spacing, axis=axis, edge_order=2)
        n = values.shape[axis]
        if n >= 5:
            sl = lambda a, b: tuple(slice(a, b) if d == axis else slice(None) for d in range(values.ndim))
            g[sl(2, n - 2)] = (
                -values[sl(4, n)] + 8.0 * values[sl(3, n - 1)] - 8.0 * values[sl(1, n - 3)] + values[sl(0, n - 4)]
            ) / (12.0 * spacing)
        out.append(g)
    return np.stack(out, axis=-1)


@dataclass
class TabulatedFlow:
    """Flow of a compactly supported forcing sampled on a regular lattice.

    ``u`` is the quadrature convolution of ``h``; ``grad_u`` convolves ``G``
    against the lattice gradient of ``h`` (derivative moved onto the
    forcing); ``h`` is trilinearly interpolated and zero outside the lattice.
    """

    field: LatticeField
    kind: str = "tabulated"
    _grad_fields: list = field(default=None, repr=False)
    _interp: object = field(default=None, repr=False)

    def __post_init__(self):
        grads = lattice_gradient(self.field.values, self.field.spacing)
        self._grad_fields = [
            LatticeField(self.field.origin, self.field.spacing, grads[..., l]) for l in range(3)
        ]
        self._interp = RegularGridInterpolator(
            self.field.axes(), self.field.values, bounds_error=False, fill_value=0.0
        )

    @classmethod
    def from_csv(cls, path):
        return cls(LatticeField.from_csv(Path(path)))

    def evaluate(self, x):
        x = _points(x)
        u = quadrature_convolve(self.field, x)
        grad = np.stack([quadrature_convolve(g, x) for g in self._grad_fields], axis=-1)
        h = self._interp(x.reshape(-1, 3)).reshape(x.shape)
        return FlowSample(u, grad, h)


def background_eval(flow, x):
    """Evaluate ``(u, grad_u, h)`` of a background flow at ``x``."""
    return flow.evaluate(x)


def flow_from_spec(kind, **kw):
    if kind == "zero":
        return ZeroFlow()
    if kind == "linear":
        return LinearFlow(A=kw["A"])
    if kind == "shear":
        return LinearFlow.simple_shear(kw.get("gamma", 1.0))
    if kind == "regularized_stokeslet":
        return RegularizedStokeslet(center=kw["center"], force=kw["force"], delta=kw["delta"])
    if kind == "tabulated":
        return TabulatedFlow.from_csv(kw["path"])
    raise ValidationError(f"unknown flow kind {kind!r}")

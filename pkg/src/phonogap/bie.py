"""Boundary discretization, quasi-periodic layer potentials and the Q matrix.

Two boundary types are supported.  Smooth closed curves in the plane are
described by a trigonometric parametrization and discretized with the
periodic trapezoid rule; the logarithmic part of every kernel is integrated
with Kress's product weights and the Cauchy part of the traction kernel with
a spectral periodic Hilbert transform.  Spheres are discretized with a
Gauss-Legendre by trapezoid product grid; singular integrals use a rotated
grid whose pole sits at the target, so that the surface Jacobian absorbs the
``1/r`` singularity, and densities are carried to the rotated points by
hyperinterpolation.

Unknowns are ordered node-major: entry ``d*j + a`` is component ``a`` at
node ``j``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg
from numpy.polynomial import legendre

from . import greens
from .errors import (
    AccuracyError,
    ConditioningError,
    GeometryError,
    NearFieldError,
    PositivityError,
    UnsupportedRegimeError,
)
from .greens import LatticeSumConfig
from .materials import LameMaterial, QuasiMomentum, as_momentum

logger = logging.getLogger(__name__)

FREE_SPACE = "free_space"
CELL_MARGIN = 1e-3
CONDITION_LIMIT = 1e12
HERMITIAN_TOL = 1e-8
SOLVER_TOL = 1e-10
DEFAULT_CURVE_NODES = 128
DEFAULT_SPHERE_ORDER = 11
NEAR_FIELD_FACTOR = 2.0
SERIES_TOL_FACTOR = 1e-2


# ---------------------------------------------------------------------------
# Shapes
# ---------------------------------------------------------------------------


def _pairs(values) -> tuple[tuple[float, float], ...]:
    out = tuple((float(a), float(b)) for a, b in values)
    return out


@dataclass(frozen=True)
class FourierCurve:
    """Closed curve ``x(t) = c + sum_m a_m cos(m t) + b_m sin(m t)``, ``t in [0, 2 pi)``.

    ``cos_coeffs[m-1]`` and ``sin_coeffs[m-1]`` are the vector coefficients
    ``a_m`` and ``b_m``.  The curve must be positively oriented.
    """

    center: tuple[float, float]
    cos_coeffs: tuple[tuple[float, float], ...] = ()
    sin_coeffs: tuple[tuple[float, float], ...] = ()
    label: str = "curve"

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "cos_coeffs", _pairs(self.cos_coeffs))
        object.__setattr__(self, "sin_coeffs", _pairs(self.sin_coeffs))
        if len(self.center) != 2:
            raise GeometryError("curve center must have two components")
        if not self.cos_coeffs and not self.sin_coeffs:
            raise GeometryError("curve needs at least one Fourier mode")

    def evaluate(self, t: np.ndarray):
        """Position, first and second derivatives at parameters ``t``."""
        t = np.asarray(t, dtype=float)
        x = np.tile(np.asarray(self.center), (t.size, 1))
        dx = np.zeros_like(x)
        ddx = np.zeros_like(x)
        for m, a in enumerate(self.cos_coeffs, start=1):
            a = np.asarray(a)
            c, s = np.cos(m * t)[:, None], np.sin(m * t)[:, None]
            x += c * a
            dx += -m * s * a
            ddx += -m * m * c * a
        for m, b in enumerate(self.sin_coeffs, start=1):
            b = np.asarray(b)
            c, s = np.cos(m * t)[:, None], np.sin(m * t)[:, None]
            x += s * b
            dx += m * c * b
            ddx += -m * m * s * b
        return x, dx, ddx


def circle(radius: float, center=(0.5, 0.5)) -> FourierCurve:
    """Circle of the given radius."""
    if not radius > 0:
        raise GeometryError("radius must be positive")
    return FourierCurve(tuple(center), ((radius, 0.0),), ((0.0, radius),), label="circle")


def ellipse(a: float, b: float, center=(0.5, 0.5), angle: float = 0.0) -> FourierCurve:
    """Ellipse with semi-axes ``a`` (along direction ``angle``) and ``b``."""
    if not (a > 0 and b > 0):
        raise GeometryError("semi-axes must be positive")
    ca, sa = math.cos(angle), math.sin(angle)
    return FourierCurve(tuple(center), ((a * ca, a * sa),), ((-b * sa, b * ca),), label="ellipse")


@dataclass(frozen=True)
class Sphere:
    """Sphere of radius ``radius``, by default centred in the unit cell."""

    radius: float
    center: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise GeometryError("radius must be positive")
        if len(self.center) != 3:
            raise GeometryError("sphere center must have three components")


def sphere_node_count(order: int) -> int:
    """Number of product-grid nodes for polynomial order ``order``."""
    return 2 * (order + 1) ** 2


def _sphere_order(n: int) -> int:
    p = math.isqrt(n // 2) - 1
    if p < 1 or sphere_node_count(p) != n:
        raise ValueError(f"{n} is not a sphere grid size 2*(p+1)^2 with p >= 1")
    return p


# ---------------------------------------------------------------------------
# Discretization
# ---------------------------------------------------------------------------


def _frozen(a: np.ndarray | None) -> np.ndarray | None:
    if a is None:
        return None
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BoundaryDiscretization:
    """Quadrature on the inclusion boundary.

    Attributes
    ----------
    d : int
        Ambient dimension.
    nodes, normals : ndarray, shape (N, d)
        Quadrature points and outward unit normals.
    weights : ndarray, shape (N,)
        Surface-measure weights.
    shape : FourierCurve or Sphere
        Descriptor the grid was built from.
    params, speed, tangents, curvature : ndarray or None
        Curve parameter ``t``, ``|x'(t)|``, unit tangents and ``nu . x'' / |x'|^2``
        (curves only).
    order : int or None
        Polynomial order of the sphere grid.
    """

    d: int
    nodes: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    shape: FourierCurve | Sphere
    cell_check: bool = True
    params: np.ndarray | None = None
    speed: np.ndarray | None = None
    tangents: np.ndarray | None = None
    curvature: np.ndarray | None = None
    order: int | None = None

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def size(self) -> int:
        return self.d * self.n_nodes

    @property
    def key(self) -> tuple:
        return (self.shape, self.n_nodes, self.cell_check)

    def spacing(self) -> np.ndarray:
        """Local node spacing."""
        if self.d == 2:
            return self.weights.copy()
        return np.sqrt(self.weights)


def _segments_intersect(x: np.ndarray) -> bool:
    """Whether the closed polygon through ``x`` has two crossing non-adjacent edges."""
    p = x
    q = np.roll(x, -1, axis=0)
    n = len(x)

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    P, Q = p[:, None, :], q[:, None, :]
    R, S = p[None, :, :], q[None, :, :]
    o1 = orient(P, Q, R)
    o2 = orient(P, Q, S)
    o3 = orient(R, S, P)
    o4 = orient(R, S, Q)
    cross = (o1 * o2 < 0) & (o3 * o4 < 0)
    idx = np.arange(n)
    gap = np.abs(idx[:, None] - idx[None, :])
    adjacent = (gap <= 1) | (gap == n - 1)
    return bool(np.any(cross & ~adjacent))


def _check_cell(nodes: np.ndarray, margin: float) -> None:
    if np.any(nodes <= margin) or np.any(nodes >= 1.0 - margin):
        raise GeometryError(f"inclusion must lie inside the open unit cell with margin {margin}")


def discretize_boundary(shape, N: int, cell_check: bool = True) -> BoundaryDiscretization:
    """Quadrature nodes, outward normals and weights on the inclusion boundary.

    Parameters
    ----------
    shape : FourierCurve or Sphere
        Boundary descriptor.
    N : int
        Number of nodes: even and at least 16 for curves, ``2 (p+1)^2`` for spheres.
    cell_check : bool
        Require the boundary to stay inside the open unit cell (off for
        free-space reference shapes).
    """
    if isinstance(shape, FourierCurve):
        if N < 16 or N % 2:
            raise ValueError("curves need an even node count of at least 16")
        t = 2.0 * math.pi * np.arange(N) / N
        x, dx, ddx = shape.evaluate(t)
        speed = np.linalg.norm(dx, axis=1)
        if np.any(speed < 1e-12):
            raise GeometryError("curve parametrization is degenerate")
        tangents = dx / speed[:, None]
        normals = np.stack([tangents[:, 1], -tangents[:, 0]], axis=1)
        area = 0.5 * float(np.sum(x[:, 0] * dx[:, 1] - x[:, 1] * dx[:, 0])) * 2.0 * math.pi / N
        if area <= 0:
            raise GeometryError("curve must be positively oriented (counter-clockwise)")
        dense = shape.evaluate(2.0 * math.pi * np.arange(4 * N) / (4 * N))[0]
        if _segments_intersect(dense):
            raise GeometryError("curve is self-intersecting")
        if cell_check:
            _check_cell(dense, CELL_MARGIN)
        curvature = np.einsum("ni,ni->n", normals, ddx) / speed**2
        weights = 2.0 * math.pi / N * speed
        return BoundaryDiscretization(
            2,
            _frozen(x),
            _frozen(normals),
            _frozen(weights),
            shape,
            cell_check,
            params=_frozen(t),
            speed=_frozen(speed),
            tangents=_frozen(tangents),
            curvature=_frozen(curvature),
        )
    if isinstance(shape, Sphere):
        p = _sphere_order(N)
        u, wu = legendre.leggauss(p + 1)
        nphi = 2 * p + 2
        phi = 2.0 * math.pi * np.arange(nphi) / nphi
        ct = np.repeat(u, nphi)
        st = np.sqrt(1.0 - ct**2)
        ph = np.tile(phi, p + 1)
        unit = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=1)
        a = shape.radius
        nodes = np.asarray(shape.center) + a * unit
        weights = a * a * np.repeat(wu, nphi) * (2.0 * math.pi / nphi)
        if cell_check:
            c = np.asarray(shape.center)
            if np.any(c - a <= CELL_MARGIN) or np.any(c + a >= 1.0 - CELL_MARGIN):
                raise GeometryError(f"sphere must lie inside the open unit cell with margin {CELL_MARGIN}")
        return BoundaryDiscretization(3, _frozen(nodes), _frozen(unit), _frozen(weights), shape, cell_check, order=p)
    raise GeometryError(f"unsupported shape {shape!r}")


def inclusion_measure(disc: BoundaryDiscretization) -> float:
    """Area or volume of the inclusion from ``(1/d) int x . nu``."""
    return float(np.sum(disc.weights * np.einsum("ni,ni->n", disc.nodes, disc.normals)) / disc.d)


def boundary_measure(disc: BoundaryDiscretization) -> float:
    """Perimeter or surface area."""
    return float(np.sum(disc.weights))


# ---------------------------------------------------------------------------
# Kernel helpers
# ---------------------------------------------------------------------------


def traction(dG: np.ndarray, nu: np.ndarray, mat: LameMaterial) -> np.ndarray:
    """Traction ``T_ij`` of the tensor field with gradient ``dG[..., k, i, j]`` on normals ``nu``.

    Column ``j`` of the result is the conormal derivative of column ``j`` of
    the tensor.
    """
    div = np.einsum("...kkj->...j", dG)
    return (
        mat.lam * nu[..., :, None] * div[..., None, :]
        + mat.mu * (np.einsum("...k,...kij->...ij", nu, dG) + np.einsum("...k,...ikj->...ij", nu, dG))
    )


def _kelvin_2d_constants(mat: LameMaterial) -> tuple[float, float]:
    a1 = (1.0 / mat.mu + 1.0 / mat.p_modulus) / (4.0 * math.pi)
    a2 = (1.0 / mat.mu - 1.0 / mat.p_modulus) / (4.0 * math.pi)
    return a1, a2


@lru_cache(maxsize=32)
def _kress_weights(N: int) -> np.ndarray:
    """Weights ``R_m`` with ``int ln(4 sin^2((t_m - s)/2)) f(s) ds ~ sum_m R_m f(t_m)``."""
    t = 2.0 * math.pi * np.arange(N) / N
    l = np.arange(1, N // 2)
    R = -(4.0 * math.pi / N) * np.sum(np.cos(np.outer(t, l)) / l, axis=1)
    R -= 4.0 * math.pi / N**2 * np.cos(N // 2 * t)
    R.setflags(write=False)
    return R


@lru_cache(maxsize=32)
def _hilbert_column(N: int) -> np.ndarray:
    """First column of the circulant periodic Hilbert transform (symbol ``-i sign(n)``)."""
    n = np.fft.fftfreq(N, d=1.0 / N)
    symbol = -1j * np.sign(n)
    symbol[N // 2] = 0.0
    col = np.real(np.fft.ifft(symbol))
    col.setflags(write=False)
    return col


def _to_matrix(A: np.ndarray) -> np.ndarray:
    """(N, N, d, d) pair blocks to the node-major (dN, dN) matrix."""
    N, _, d, _ = A.shape
    return np.ascontiguousarray(A.transpose(0, 2, 1, 3).reshape(N * d, N * d))


# ---------------------------------------------------------------------------
# Curve assembly
# ---------------------------------------------------------------------------


def _log_split_add(A, Lam, K, Kdiag, geo):
    """Add ``Lam ln r + (K - Lam ln r)`` integrated with Kress weights.

    ``K`` holds full kernel values off the diagonal, ``Kdiag`` the regular
    part on the diagonal.
    """
    N, h, s, Rw, logsin, off = geo["N"], geo["h"], geo["speed"], geo["R"], geo["logsin"], geo["off"]
    idx = np.arange(N)
    sk = s[None, :, None, None]
    A += 0.5 * Lam * Rw[:, :, None, None] * sk
    body = np.zeros_like(A)
    body[off] = (K - 0.5 * Lam[off] * logsin[off][:, None, None])
    body[idx, idx] = Kdiag + Lam[idx, idx] * np.log(s)[:, None, None]
    A += h * body * sk


def _curve_geometry(disc: BoundaryDiscretization) -> dict:
    N = disc.n_nodes
    t = disc.params
    diff = t[:, None] - t[None, :]
    off = ~np.eye(N, dtype=bool)
    sin2 = np.sin(0.5 * diff) ** 2
    logsin = np.where(off, np.log(np.where(off, 4.0 * sin2, 1.0)), 0.0)
    R = _kress_weights(N)
    m = (np.arange(N)[:, None] - np.arange(N)[None, :]) % N
    return {
        "N": N,
        "h": 2.0 * math.pi / N,
        "speed": disc.speed,
        "R": R[m],
        "H": _hilbert_column(N)[m],
        "logsin": logsin,
        "tan": np.where(off, np.tan(0.5 * diff), 0.0),
        "off": off,
        "z": disc.nodes[:, None, :] - disc.nodes[None, :, :],
    }


def _assemble_curve(disc, kind, include_free, ker, mat):
    N, d = disc.n_nodes, 2
    geo = _curve_geometry(disc)
    off, h, s = geo["off"], geo["h"], disc.speed
    z = geo["z"]
    eye = np.eye(2)
    idx = np.arange(N)
    A = np.zeros((N, N, d, d), dtype=complex)
    nu = disc.normals
    T = disc.tangents
    TT = np.einsum("ni,nj->nij", T, T)
    if include_free:
        a1, a2 = _kelvin_2d_constants(mat)
        if kind == "single_layer":
            Lam = np.broadcast_to(a1 * eye, (N, N, d, d)).astype(complex)
            K = greens.free_static_kernel(z[off], mat)
            Kdiag = -a2 * TT
            _log_split_add(A, Lam, K, Kdiag, geo)
        else:
            zo = z[off]
            nuj = np.broadcast_to(nu[:, None, :], (N, N, 2))[off]
            r2 = np.einsum("pi,pi->p", zo, zo)
            c0 = mat.mu / (2.0 * math.pi * mat.p_modulus)
            cauchy = c0 * (nuj[:, None, :] * zo[:, :, None] - nuj[:, :, None] * zo[:, None, :]) / r2[:, None, None]
            _, dG0 = greens.free_static_kernel(zo, mat, grad=True)
            rest = traction(dG0, nuj, mat) - cauchy
            C = np.zeros((N, N, d, d), dtype=complex)
            C[off] = cauchy * (s[None, :].repeat(N, 0)[off] * geo["tan"][off])[:, None, None]
            A += 2.0 * math.pi * geo["H"][:, :, None, None] * C
            body = np.zeros((N, N, d, d), dtype=complex)
            body[off] = rest
            q0 = -0.5 * disc.curvature
            body[idx, idx] = mat.mu * (a1 - a2) * q0[:, None, None] * eye + 4.0 * mat.mu * a2 * q0[:, None, None] * TT
            A += h * body * s[None, :, None, None]
    if ker is not None:
        grad = kind != "single_layer"
        zf = z.reshape(-1, 2)
        res = ker.evaluate(zf, grad=grad, weak=ker.has_weak_part, reduce=False)
        nuj = np.repeat(nu, N, axis=0)
        sG, sdG = res["smooth"]
        smooth = sG if not grad else traction(sdG, nuj, mat)
        A += h * smooth.reshape(N, N, d, d) * s[None, :, None, None]
        if ker.has_weak_part:
            wG, wdG, lG, ldG = res["weak"]
            if grad:
                W = traction(wdG, nuj, mat).reshape(N, N, d, d)
                Lam = traction(ldG, nuj, mat).reshape(N, N, d, d)
            else:
                W = wG.reshape(N, N, d, d)
                Lam = lG.reshape(N, N, d, d)
            _log_split_add(A, Lam, W[off], W[idx, idx], geo)
    return _to_matrix(A)


# ---------------------------------------------------------------------------
# Sphere assembly
# ---------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _rotated_rule(order: int, n_theta: int, n_phi: int):
    u, wu = legendre.leggauss(n_theta)
    theta = 0.5 * math.pi * (u + 1.0)
    wt = 0.5 * math.pi * wu
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    th = np.repeat(theta, n_phi)
    ph = np.tile(phi, n_theta)
    local = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=1)
    w = np.sin(th) * np.repeat(wt, n_phi) * (2.0 * math.pi / n_phi)
    kern = (2.0 * np.arange(order + 1) + 1.0) / (4.0 * math.pi)
    return local, w, kern


def _local_frame(e3: np.ndarray) -> np.ndarray:
    helper = np.array([1.0, 0.0, 0.0]) if abs(e3[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(e3, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e3, e1)
    return np.stack([e1, e2, e3])


def hyperinterpolation(disc: BoundaryDiscretization) -> np.ndarray:
    """Nodal projector onto spherical harmonics of degree at most the grid order."""
    _, _, kern = _rotated_rule(disc.order, 1, 1)
    unit = disc.normals
    unit_w = disc.weights / disc.shape.radius**2
    return legendre.legval(unit @ unit.T, kern) * unit_w[None, :]


def _assemble_sphere(disc, kind, include_free, ker, mat, refine: int = 0):
    """Discrete Galerkin matrix on the sphere.

    Densities are represented by their hyperinterpolant, so the operator is
    ``P M P`` with ``P`` the nodal projector onto spherical harmonics of
    degree ``<= p``.  For the single layer the complement of that space is
    mapped by ``-c (I - P)`` with ``c`` the mean of the operator on constants,
    which keeps the matrix nonsingular and ``-S`` positive without changing
    the solution for data in the harmonic space.
    """
    N, d = disc.n_nodes, 3
    p = disc.order
    a = disc.shape.radius
    n_theta = 2 * (p + 1) + refine
    n_phi = 2 * p + 2 + refine
    local, wloc, kern = _rotated_rule(p, n_theta, n_phi)
    unit = disc.normals
    unit_w = disc.weights / (a * a)
    R = local.shape[0]
    A = np.zeros((N, d, N, d), dtype=complex)
    grad = kind != "single_layer"
    singular = include_free or (ker is not None and ker.has_weak_part)
    if singular:
        frames = np.stack([_local_frame(x) for x in unit])  # (N, 3, 3)
        yhat = np.einsum("rm,jmi->jri", local, frames)  # (N, R, 3)
        z = (a * unit[:, None, :] - a * yhat).reshape(-1, 3)
        nuj = np.repeat(unit, R, axis=0)
        K = np.zeros((z.shape[0], d, d), dtype=complex)
        if include_free:
            if grad:
                K += traction(greens.free_static_kernel(z, mat, grad=True)[1], nuj, mat)
            else:
                K += greens.free_static_kernel(z, mat)
        if ker is not None and ker.has_weak_part:
            wG, wdG, _, _ = ker.evaluate_weak(z, grad=grad)
            K += traction(wdG, nuj, mat) if grad else wG
        K = (K.reshape(N, R, d * d) * (a * a * wloc)[None, :, None]).transpose(0, 2, 1)
        for j in range(N):
            L = legendre.legval(yhat[j] @ unit.T, kern) * unit_w[None, :]
            A[j] += (K[j] @ L).reshape(d, d, N).transpose(0, 2, 1)
    if ker is not None:
        zf = (disc.nodes[:, None, :] - disc.nodes[None, :, :]).reshape(-1, 3)
        res = ker.evaluate(zf, grad=grad, weak=False, reduce=False)
        sG, sdG = res["smooth"]
        if grad:
            sG = traction(sdG, np.repeat(unit, N, axis=0), mat)
        A += (sG.reshape(N, N, d, d) * disc.weights[None, :, None, None]).transpose(0, 2, 1, 3)
    P = np.kron(hyperinterpolation(disc), np.eye(d))
    M = P @ A.reshape(N * d, N * d) @ P
    if kind == "single_layer":
        ones = np.tile(np.eye(d), (N, 1))
        c = abs(np.trace(ones.T @ (np.repeat(disc.weights, d)[:, None] * (M @ ones)))) / (d * float(np.sum(disc.weights)))
        M = M - c * (np.eye(N * d) - P)
    return M


def _assemble(disc, kind, include_free, ker, mat, refine: int = 0):
    if disc.d == 2:
        return _assemble_curve(disc, kind, include_free, ker, mat)
    return _assemble_sphere(disc, kind, include_free, ker, mat, refine=refine)


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

OPERATOR_KINDS = ("single_layer", "neumann_poincare")


@dataclass(frozen=True, eq=False)
class LayerOperatorMatrix:
    """Dense discretization of a layer operator.

    Attributes
    ----------
    kind : str
        ``single_layer`` or ``neumann_poincare``.
    alpha : QuasiMomentum or None
        Quasi-momentum, ``None`` for the free-space operator.
    k : complex
        Wavenumber.
    entries : ndarray, shape (dN, dN)
        Node-major matrix.
    disc : BoundaryDiscretization
        Discretization it acts on.
    quadrature : str
        Name of the singular quadrature used.
    """

    kind: str
    alpha: QuasiMomentum | None
    k: complex
    entries: np.ndarray
    disc: BoundaryDiscretization
    quadrature: str
    method: str = "static"

    def __post_init__(self) -> None:
        if self.kind not in OPERATOR_KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        n = self.disc.size
        if self.entries.shape != (n, n):
            raise ValueError("operator size does not match the discretization")
        if not np.all(np.isfinite(self.entries)):
            raise AccuracyError("operator has non-finite entries")

    def apply(self, density: np.ndarray) -> np.ndarray:
        """Apply to a nodal density of shape (N, d) or (dN,)."""
        v = np.asarray(density).reshape(-1)
        return (self.entries @ v).reshape(self.disc.n_nodes, self.disc.d)


@lru_cache(maxsize=96)
def _cached_term(shape, N, cell_check, kind, alpha, mat_key, cfg, order):
    disc = discretize_boundary(shape, N, cell_check)
    mat = LameMaterial(*mat_key)
    if order == 0:
        ker = greens.static_kernel(alpha, mat, cfg)
        M = _assemble(disc, kind, True, ker, mat)
    else:
        ker = greens.series_kernel(alpha, mat, cfg, order)
        M = _assemble(disc, kind, False, ker, mat)
    M.setflags(write=False)
    return M


def _operator_terms(disc, kind, alpha: QuasiMomentum, mat, cfg, L: int) -> list[np.ndarray]:
    key = (mat.lam, mat.mu, mat.rho)
    return [_cached_term(disc.shape, disc.n_nodes, disc.cell_check, kind, alpha, key, cfg, l) for l in range(L + 1)]


def series_terms(disc: BoundaryDiscretization, kind: str, alpha, mat: LameMaterial, cfg: LatticeSumConfig | None, L: int) -> list[np.ndarray]:
    """Read-only coefficient matrices ``M_l`` with ``M(k) = sum_l k^(2l) M_l``, for ``l = 0..L``."""
    if kind not in OPERATOR_KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    a = _resolve_alpha(alpha)
    if a is None:
        raise UnsupportedRegimeError("series terms exist for quasi-periodic kernels only")
    return _operator_terms(disc, kind, a, mat, cfg or LatticeSumConfig(), L)


def _resolve_alpha(alpha):
    if alpha is None or (isinstance(alpha, str) and alpha == FREE_SPACE):
        return None
    a = as_momentum(alpha)
    a.require_nonzero()
    return a


def _assemble_operator(disc, kind, alpha, k, mat, cfg, method):
    cfg = cfg or LatticeSumConfig()
    k = complex(k)
    alpha = _resolve_alpha(alpha)
    quad = "kress-log-split" if disc.d == 2 else "pole-rotation"
    if alpha is None:
        if k != 0:
            raise UnsupportedRegimeError("free-space operators are implemented for k = 0 only")
        M = _assemble(disc, kind, True, None, mat)
        return LayerOperatorMatrix(kind, None, k, M, disc, quad, "free")
    if k == 0:
        M = np.array(_operator_terms(disc, kind, alpha, mat, cfg, 0)[0])
        return LayerOperatorMatrix(kind, alpha, k, M, disc, quad, "static")
    greens.check_wavenumber(alpha, k, mat)
    if method in ("auto", "series"):
        L = greens.series_order(alpha, k, mat, cfg.target_tol * SERIES_TOL_FACTOR)
        terms = _operator_terms(disc, kind, alpha, mat, cfg, L)
        M = np.array(terms[0], dtype=complex)
        for l in range(1, L + 1):
            M += k ** (2 * l) * terms[l]
        return LayerOperatorMatrix(kind, alpha, k, M, disc, quad, f"series(L={L})")
    if method == "direct":
        ker = greens.shifted_kernel(alpha, mat, cfg, k)
        M = _assemble(disc, kind, True, ker, mat)
        return LayerOperatorMatrix(kind, alpha, k, M, disc, quad, "direct")
    raise ValueError(f"unknown method {method!r}")


def _quadrature_self_test(op: LayerOperatorMatrix, mat, cfg, tol: float) -> None:
    """Compare the operator on constant densities with a refined rule."""
    disc = op.disc
    d = disc.d
    ones = [np.tile(np.eye(d)[i], disc.n_nodes) for i in range(d)]
    base = np.stack([op.entries @ e for e in ones])
    if disc.d == 2:
        fine_disc = discretize_boundary(disc.shape, 2 * disc.n_nodes, disc.cell_check)
        fine = _assemble_operator(fine_disc, op.kind, op.alpha, op.k, mat, cfg, "auto")
        ref = np.stack([fine.entries @ np.tile(np.eye(d)[i], fine_disc.n_nodes) for i in range(d)])
        ref = ref.reshape(d, fine_disc.n_nodes, d)[:, ::2, :].reshape(d, -1)
    else:
        if op.k != 0:
            return
        ker = None if op.alpha is None else greens.static_kernel(op.alpha, mat, cfg or LatticeSumConfig())
        fine = _assemble_sphere(disc, op.kind, True, ker, mat, refine=8)
        ref = np.stack([fine @ e for e in ones])
    err = float(np.max(np.abs(base - ref)))
    scale = max(float(np.max(np.abs(ref))), 1.0)
    if err > tol * scale:
        raise AccuracyError(f"quadrature self-test failed: refined rule differs by {err:.3g}")


def assemble_single_layer(
    disc: BoundaryDiscretization,
    alpha,
    k: complex = 0.0,
    mat: LameMaterial | None = None,
    cfg: LatticeSumConfig | None = None,
    method: str = "auto",
    verify: bool = False,
    verify_tol: float = 1e-8,
) -> LayerOperatorMatrix:
    """Single-layer operator ``S`` with the quasi-periodic (or free-space) kernel.

    ``alpha`` is a quasi-momentum or :data:`FREE_SPACE`.  For ``k != 0`` the
    ``auto`` and ``series`` methods sum cached k^2-coefficient matrices and
    ``direct`` assembles the shifted-denominator kernel.  With ``verify`` the
    result on constant densities is compared against a refined rule.
    """
    mat = mat or LameMaterial(1.0, 1.0)
    op = _assemble_operator(disc, "single_layer", alpha, k, mat, cfg, method)
    if verify:
        _quadrature_self_test(op, mat, cfg, verify_tol)
    return op


def assemble_neumann_poincare(
    disc: BoundaryDiscretization,
    alpha,
    k: complex = 0.0,
    mat: LameMaterial | None = None,
    cfg: LatticeSumConfig | None = None,
    method: str = "auto",
    verify: bool = False,
    verify_tol: float = 1e-8,
) -> LayerOperatorMatrix:
    """Traction operator ``K*``: principal value of the conormal derivative of the kernel at the target.

    The one-sided tractions of the single-layer potential are ``(+-1/2 I + K*)``
    applied to the density, with ``+`` outside the inclusion.
    """
    mat = mat or LameMaterial(1.0, 1.0)
    op = _assemble_operator(disc, "neumann_poincare", alpha, k, mat, cfg, method)
    if verify:
        _quadrature_self_test(op, mat, cfg, verify_tol)
    return op


# ---------------------------------------------------------------------------
# Solves, DtN map and Q
# ---------------------------------------------------------------------------


class DenseSolver:
    """LU factorization with a condition guard and one refinement step."""

    def __init__(self, op: LayerOperatorMatrix, condition_limit: float = CONDITION_LIMIT):
        self.op = op
        A = op.entries
        self.condition = float(np.linalg.cond(A))
        if not np.isfinite(self.condition) or self.condition > condition_limit:
            raise ConditioningError(f"condition number {self.condition:.3g} exceeds {condition_limit:.3g}")
        self._lu = scipy.linalg.lu_factor(A)

    def solve(self, b: np.ndarray) -> np.ndarray:
        A = self.op.entries
        x = scipy.linalg.lu_solve(self._lu, b)
        x = x + scipy.linalg.lu_solve(self._lu, b - A @ x)
        return x


def constant_fields(disc: BoundaryDiscretization) -> np.ndarray:
    """Node-major vectors of the constant fields ``e_i``, shape (d, dN)."""
    return np.stack([np.tile(np.eye(disc.d)[i], disc.n_nodes) for i in range(disc.d)]).astype(complex)


def solve_density_for_constants(S: LayerOperatorMatrix, solver_tol: float = SOLVER_TOL) -> np.ndarray:
    """Densities ``phi_i = S^-1[e_i]``, returned with shape (d, N, d)."""
    disc = S.disc
    rhs = constant_fields(disc)
    solver = DenseSolver(S)
    phi = solver.solve(rhs.T).T
    resid = float(np.max(np.abs(phi @ S.entries.T - rhs)))
    if resid > solver_tol:
        raise AccuracyError(f"density residual {resid:.3g} exceeds {solver_tol:.3g}")
    logger.debug("constant-density solve: cond %.3g, residual %.3g", solver.condition, resid)
    return phi.reshape(disc.d, disc.n_nodes, disc.d)


def weighted_inner(disc: BoundaryDiscretization, f: np.ndarray, g: np.ndarray) -> complex:
    """``sum_k w_k f_k . conj(g_k)`` for nodal fields of shape (N, d)."""
    f = np.asarray(f).reshape(disc.n_nodes, disc.d)
    g = np.asarray(g).reshape(disc.n_nodes, disc.d)
    return complex(np.sum(disc.weights[:, None] * f * np.conj(g)))


def dtn_apply(
    disc: BoundaryDiscretization,
    alpha,
    f: np.ndarray,
    mat: LameMaterial | None = None,
    cfg: LatticeSumConfig | None = None,
) -> np.ndarray:
    """Quasi-periodic static Dirichlet-to-Neumann map ``(1/2 I + K*) S^-1 f`` at the nodes.

    ``f`` may hold several traces stacked along a leading axis, each of shape (N, d).
    """
    mat = mat or LameMaterial(1.0, 1.0)
    S = assemble_single_layer(disc, alpha, 0.0, mat, cfg)
    K = assemble_neumann_poincare(disc, alpha, 0.0, mat, cfg)
    f = np.asarray(f, dtype=complex)
    lead = f.shape[:-2] if f.ndim > 2 else ()
    F = f.reshape(-1, disc.size)
    dens = DenseSolver(S).solve(F.T)
    out = 0.5 * dens + K.entries @ dens
    return out.T.reshape(lead + (disc.n_nodes, disc.d))


@dataclass(frozen=True, eq=False)
class QAlphaMatrix:
    """Hermitian capacitance-type matrix with its eigen-decomposition.

    ``beta`` is ascending and the columns of ``h`` are orthonormal
    eigenvectors, each scaled so that its first non-negligible component is
    real and positive.
    """

    alpha: QuasiMomentum | None
    entries: np.ndarray
    beta: np.ndarray
    h: np.ndarray
    asymmetry: float

    @classmethod
    def from_matrix(cls, Q: np.ndarray, alpha, hermitian_tol: float = HERMITIAN_TOL) -> QAlphaMatrix:
        Q = np.asarray(Q, dtype=complex)
        asym = float(np.max(np.abs(Q - Q.conj().T)))
        if asym > hermitian_tol:
            raise AccuracyError(f"Q deviates from Hermitian by {asym:.3g} > {hermitian_tol:.3g}")
        Qh = 0.5 * (Q + Q.conj().T)
        beta, h = np.linalg.eigh(Qh)
        order = np.argsort(beta, kind="stable")
        beta, h = beta[order], h[:, order]
        for c in range(h.shape[1]):
            col = h[:, c]
            lead = np.flatnonzero(np.abs(col) > 1e-8)[0]
            h[:, c] = col * (np.abs(col[lead]) / col[lead])
        if beta[0] <= 0:
            raise PositivityError(f"smallest eigenvalue {beta[0]:.6g} is not positive")
        return cls(alpha, _frozen(Qh), _frozen(beta), _frozen(h), asym)

    @property
    def d(self) -> int:
        return self.entries.shape[0]


def q_from_densities(disc: BoundaryDiscretization, phi: np.ndarray) -> np.ndarray:
    """``Q_ij = -sum_k w_k phi_i(x_k) . e_j`` from densities of shape (d, N, d)."""
    return -np.einsum("k,ikj->ij", disc.weights, phi)


def compute_Q_alpha(
    disc: BoundaryDiscretization,
    alpha,
    mat: LameMaterial | None = None,
    cfg: LatticeSumConfig | None = None,
    hermitian_tol: float = HERMITIAN_TOL,
) -> QAlphaMatrix:
    """Q matrix ``Q_ij = -int S^-1[e_i] . e_j`` (quasi-periodic or free space)."""
    mat = mat or LameMaterial(1.0, 1.0)
    S = assemble_single_layer(disc, alpha, 0.0, mat, cfg)
    phi = solve_density_for_constants(S)
    return QAlphaMatrix.from_matrix(q_from_densities(disc, phi), S.alpha, hermitian_tol)


def inclusion_centroid(disc: BoundaryDiscretization) -> np.ndarray:
    """Centroid of the inclusion, ``(1 / |D|) int x`` evaluated as ``int x_i^2 nu_i / 2`` on the boundary."""
    first = 0.5 * np.einsum("k,ki,ki->i", disc.weights, disc.nodes**2, disc.normals)
    return first / inclusion_measure(disc)


def second_moments(disc: BoundaryDiscretization) -> np.ndarray:
    """``int_D y_k y_l`` about the centroid, reduced to boundary integrals by the divergence theorem."""
    y = disc.nodes - inclusion_centroid(disc)
    d = disc.d
    out = np.empty((d, d))
    for k in range(d):
        for l in range(d):
            if k == l:
                f = y[:, k] ** 3 / 3.0
            else:
                f = 0.5 * y[:, k] ** 2 * y[:, l]
            out[k, l] = np.sum(disc.weights * f * disc.normals[:, k])
    return 0.5 * (out + out.T)


def rigid_motion_fields(disc: BoundaryDiscretization) -> np.ndarray:
    """Translations followed by infinitesimal rotations about the centroid, shape (m, N, d).

    ``m`` is 3 in the plane and 6 in space; the rotation about axis ``e_k`` is
    ``e_k x (x - c)``, and the planar rotation is ``(-(x_2 - c_2), x_1 - c_1)``.
    """
    y = disc.nodes - inclusion_centroid(disc)
    n, d = y.shape
    fields = [np.tile(np.eye(d)[i], (n, 1)) for i in range(d)]
    if d == 2:
        fields.append(np.stack([-y[:, 1], y[:, 0]], axis=1))
    else:
        fields.extend(np.cross(np.eye(3)[k], y) for k in range(3))
    return np.stack(fields)


def rigid_motion_mass(disc: BoundaryDiscretization) -> np.ndarray:
    """Gram matrix ``int_D r_a . r_b`` of :func:`rigid_motion_fields` (density one)."""
    d = disc.d
    area = inclusion_measure(disc)
    J = second_moments(disc)
    if d == 2:
        rot = np.array([[np.trace(J)]])
    else:
        rot = np.trace(J) * np.eye(3) - J
    m = rot.shape[0]
    mass = np.zeros((d + m, d + m))
    mass[:d, :d] = area * np.eye(d)
    mass[d:, d:] = rot
    return mass


@dataclass(frozen=True, eq=False)
class RigidMotionQ:
    """Q matrix over all rigid motions of the inclusion together with their mass matrix.

    ``entries[a, b] = -int S^-1[r_a] . r_b`` for the fields of
    :func:`rigid_motion_fields`; its translational block is the ordinary Q
    matrix.  Resonances of a stiff, heavy inclusion solve the generalized
    problem ``entries h = (rho omega^2 / epsilon) mass h``.
    """

    alpha: QuasiMomentum | None
    entries: np.ndarray
    mass: np.ndarray
    centroid: np.ndarray
    asymmetry: float

    @property
    def d(self) -> int:
        return self.centroid.size

    def eigen(self) -> tuple[np.ndarray, np.ndarray]:
        """Ascending generalized eigenvalues and mass-orthonormal eigenvectors."""
        lam, vec = scipy.linalg.eigh(self.entries, self.mass)
        if lam[0] <= 0:
            raise PositivityError(f"rigid-motion Q has non-positive generalized eigenvalue {lam[0]:.6g}")
        return lam, vec

    def frequencies(self, rho: float, epsilon: float) -> np.ndarray:
        """Ascending leading-order frequencies ``sqrt(lambda / rho) sqrt(epsilon)``."""
        lam, _ = self.eigen()
        return np.sqrt(lam / rho) * math.sqrt(epsilon)

    def coupling(self) -> float:
        """Largest translation-rotation entry relative to the largest translational entry."""
        d = self.d
        return float(np.max(np.abs(self.entries[:d, d:])) / np.max(np.abs(self.entries[:d, :d])))


def compute_rigid_Q(
    disc: BoundaryDiscretization,
    alpha,
    mat: LameMaterial | None = None,
    cfg: LatticeSumConfig | None = None,
    hermitian_tol: float = HERMITIAN_TOL,
) -> RigidMotionQ:
    """Q matrix over translations and rotations (quasi-periodic or free space)."""
    mat = mat or LameMaterial(1.0, 1.0)
    S = assemble_single_layer(disc, alpha, 0.0, mat, cfg)
    R = rigid_motion_fields(disc)
    rhs = R.reshape(R.shape[0], -1).astype(complex)
    phi = DenseSolver(S).solve(rhs.T).T
    resid = float(np.max(np.abs(phi @ S.entries.T - rhs)))
    if resid > SOLVER_TOL:
        raise AccuracyError(f"density residual {resid:.3g} exceeds {SOLVER_TOL:.3g}")
    phi = phi.reshape(R.shape)
    Q = -np.einsum("k,akj,bkj->ab", disc.weights, phi, R)
    asym = float(np.max(np.abs(Q - Q.conj().T)))
    if asym > hermitian_tol * max(1.0, float(np.max(np.abs(Q)))):
        raise AccuracyError(f"rigid-motion Q deviates from Hermitian by {asym:.3g}")
    Q = 0.5 * (Q + Q.conj().T)
    return RigidMotionQ(S.alpha, _frozen(Q), _frozen(rigid_motion_mass(disc)), _frozen(inclusion_centroid(disc)), asym)


# ---------------------------------------------------------------------------
# Potentials off the boundary
# ---------------------------------------------------------------------------


def _point_kernel(alpha, k, mat, cfg):
    if alpha is None:
        if k != 0:
            raise UnsupportedRegimeError("free-space potentials are implemented for k = 0 only")
        return None
    if k == 0:
        return greens.static_kernel(alpha, mat, cfg)
    greens.check_wavenumber(alpha, k, mat)
    return greens.shifted_kernel(alpha, mat, cfg, k)


def _inside(disc: BoundaryDiscretization, pts: np.ndarray) -> np.ndarray:
    if disc.d == 3:
        return np.linalg.norm(pts - np.asarray(disc.shape.center), axis=1) < disc.shape.radius
    rel = disc.nodes[None, :, :] - pts[:, None, :]
    ang = np.arctan2(rel[..., 1], rel[..., 0])
    dang = np.diff(np.concatenate([ang, ang[:, :1]], axis=1), axis=1)
    dang = (dang + math.pi) % (2.0 * math.pi) - math.pi
    return np.abs(np.sum(dang, axis=1)) > math.pi


def check_far_field(disc: BoundaryDiscretization, points: np.ndarray, factor: float = NEAR_FIELD_FACTOR) -> None:
    """Raise :class:`NearFieldError` for points within ``factor`` local spacings of the boundary."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dist = np.linalg.norm(pts[:, None, :] - disc.nodes[None, :, :], axis=-1)
    nearest = np.argmin(dist, axis=1)
    limit = factor * disc.spacing()[nearest]
    bad = dist[np.arange(len(pts)), nearest] < limit
    if np.any(bad):
        raise NearFieldError(f"{int(np.sum(bad))} evaluation point(s) closer than {factor} node spacings to the boundary")


def layer_potential(
    disc: BoundaryDiscretization,
    alpha,
    k: complex,
    density: np.ndarray,
    points: np.ndarray,
    mat: LameMaterial | None = None,
    cfg: LatticeSumConfig | None = None,
    normals: np.ndarray | None = None,
    reduce: bool = True,
):
    """Single-layer potential of a nodal density at off-boundary points.

    Returns the field of shape (P, d) and, when ``normals`` are given, also
    its traction on those normals.  The plain quadrature rule is used, so
    points must keep a few node spacings from the boundary.
    """
    mat = mat or LameMaterial(1.0, 1.0)
    cfg = cfg or LatticeSumConfig()
    alpha = _resolve_alpha(alpha)
    k = complex(k)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    P, N, d = pts.shape[0], disc.n_nodes, disc.d
    dens = np.asarray(density, dtype=complex).reshape(N, d) * disc.weights[:, None]
    z = (pts[:, None, :] - disc.nodes[None, :, :]).reshape(-1, d)
    grad = normals is not None
    ker = _point_kernel(alpha, k, mat, cfg)
    if ker is None:
        out = greens.free_static_kernel(z, mat, grad=grad)
    else:
        out = ker.full(z, mat, grad=grad, reduce=reduce)
    if grad:
        G, dG = out
    else:
        G = out
    field = np.einsum("pkij,kj->pi", G.reshape(P, N, d, d), dens)
    if not grad:
        return field
    nu = np.repeat(np.atleast_2d(np.asarray(normals, dtype=float)), N, axis=0)
    T = traction(dG, nu, mat).reshape(P, N, d, d)
    return field, np.einsum("pkij,kj->pi", T, dens)


def exterior_field(
    disc: BoundaryDiscretization,
    alpha,
    omega: float,
    trace: np.ndarray,
    points: np.ndarray,
    mat: LameMaterial | None = None,
    cfg: LatticeSumConfig | None = None,
) -> np.ndarray:
    """Quasi-periodic exterior solution with boundary values ``trace`` at frequency ``omega``.

    Solves ``S^{alpha,k} phi = trace`` with ``k = sqrt(rho) omega`` and evaluates
    the single-layer potential of ``phi`` at ``points`` (outside the inclusion,
    at least two node spacings from its boundary).
    """
    mat = mat or LameMaterial(1.0, 1.0)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cell = pts - np.floor(pts)
    if np.any(_inside(disc, cell)):
        raise ValueError("evaluation points must lie outside the inclusion")
    check_far_field(disc, cell)
    k = math.sqrt(mat.rho) * omega
    S = assemble_single_layer(disc, alpha, k, mat, cfg)
    phi = DenseSolver(S).solve(np.asarray(trace, dtype=complex).reshape(-1))
    return layer_potential(disc, alpha, k, phi, pts, mat, cfg)

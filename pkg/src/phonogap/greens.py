"""Free-space and quasi-periodic elastic Green's tensors.

The quasi-periodic tensors are Fourier series over the shifted reciprocal
lattice ``xi = 2*pi*n + alpha``.  Every such series used here has the form

    G_ij(x) = -a1 * delta_ij * F1(x) - c * d_i d_j F2(x),
    F(x)    = sum_xi exp(i xi.x) g(|xi|^2),

with a radial spectral weight ``g(s) = int_0^inf exp(-t s) h(t) dt``.  The
t-integral is split at ``T = 1 / (4 eta^2)``: the tail becomes a Gaussian
damped reciprocal sum and the head, after Poisson summation, a rapidly
decaying sum over real-space images built from the heat moments

    W_q(r) = int_0^T t^q (4 pi t)^(-d/2) exp(-r^2 / (4 t)) dt.

The image at the origin carries the singularity.  Its leading moments are
paired with the free-space static tensor so that the remainder is smooth, and
the higher moments (present only for frequency-dependent kernels) are returned
separately as a weakly singular part together with the coefficient of their
``log r`` behaviour in two dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.special import erfc, exp1, gammainc, gammaincc, hankel1

from .errors import AccuracyError, ResonantDenominatorError, SingularPointError
from .materials import LameMaterial, QuasiMomentum, as_momentum

EULER_GAMMA = 0.57721566490153286061
DEFAULT_SPLIT = 3.0
DEFAULT_FOURIER_TRUNCATION = 5
DEFAULT_SPATIAL_TRUNCATION = 2
DEFAULT_TARGET_TOL = 1e-8
IMAGE_CUTOFF = 7.0  # images with eta * r beyond this contribute below 1e-20
SERIES_CROSSOVER = 0.1  # series route when |k| <= 0.1 * min|xi|
RESONANCE_SAFETY = 0.5  # |k| / sqrt(mu) must stay below 0.5 * min|xi|
MAX_SERIES_ORDER = 80
CHUNK = 2048

KINDS = (
    "free_static",
    "free_dynamic",
    "quasi_static",
    "quasi_dynamic",
    "series_coeff",
    "smooth_remainder",
)


@dataclass(frozen=True)
class LatticeSumConfig:
    """Truncation and splitting parameters of the accelerated lattice sums.

    Attributes
    ----------
    split_parameter : float
        Ewald parameter ``eta``; the reciprocal sum is damped by
        ``exp(-|xi|^2 / (4 eta^2))`` and the images by ``erfc(eta r)``.
    fourier_truncation : int
        Largest ``|n|_inf`` kept in the reciprocal sum.
    spatial_truncation : int
        Largest ``|n|_inf`` (relative to the nearest image) kept in the
        real-space sum.
    target_tol : float
        Requested absolute accuracy.
    verify : bool
        When true every evaluation is repeated with doubled truncations and an
        :class:`AccuracyError` is raised if any entry moves by more than
        ``target_tol``.
    """

    split_parameter: float = DEFAULT_SPLIT
    fourier_truncation: int = DEFAULT_FOURIER_TRUNCATION
    spatial_truncation: int = DEFAULT_SPATIAL_TRUNCATION
    target_tol: float = DEFAULT_TARGET_TOL
    verify: bool = False

    def __post_init__(self) -> None:
        if not self.split_parameter > 0:
            raise ValueError("split_parameter must be positive")
        if self.fourier_truncation < 1 or self.spatial_truncation < 1:
            raise ValueError("truncations must be at least 1")
        if not self.target_tol > 0:
            raise ValueError("target_tol must be positive")

    def doubled(self) -> LatticeSumConfig:
        return replace(
            self,
            fourier_truncation=2 * self.fourier_truncation,
            spatial_truncation=2 * self.spatial_truncation,
            verify=False,
        )

    @property
    def split_time(self) -> float:
        return 1.0 / (4.0 * self.split_parameter**2)


@dataclass(frozen=True)
class GreensTensor:
    """A d-by-d Green's tensor evaluated at one point."""

    entries: np.ndarray
    x: tuple[float, ...]
    k: complex
    kind: str
    order: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")


# ---------------------------------------------------------------------------
# Material constants
# ---------------------------------------------------------------------------


def _dyadic_coefficient(mat: LameMaterial) -> float:
    """``1/mu - 1/(lambda + 2 mu)``, the weight of the longitudinal dyad."""
    return 1.0 / mat.mu - 1.0 / mat.p_modulus


# ---------------------------------------------------------------------------
# Free space
# ---------------------------------------------------------------------------


def free_static_kernel(z: np.ndarray, mat: LameMaterial, grad: bool = False):
    """Vectorized static Kelvin tensor at nonzero points ``z`` of shape (B, d).

    Returns ``G`` of shape (B, d, d) and, when ``grad`` is set, ``dG`` with
    ``dG[b, k, i, j] = d_k G_ij``.
    """
    z = np.asarray(z, dtype=float)
    d = z.shape[-1]
    eye = np.eye(d)
    r2 = np.einsum("bi,bi->b", z, z)
    if np.any(r2 == 0):
        raise SingularPointError("the free-space tensor is singular at x = 0")
    zz = z[:, :, None] * z[:, None, :]
    if d == 2:
        a1 = (1.0 / mat.mu + 1.0 / mat.p_modulus) / (4.0 * math.pi)
        a2 = _dyadic_coefficient(mat) / (4.0 * math.pi)
        G = a1 * 0.5 * np.log(r2)[:, None, None] * eye - a2 * zz / r2[:, None, None]
        if not grad:
            return G
        inv = 1.0 / r2
        dG = (
            a1 * np.einsum("ij,bk->bkij", eye, z) * inv[:, None, None, None]
            - a2
            * (np.einsum("ik,bj->bkij", eye, z) + np.einsum("jk,bi->bkij", eye, z))
            * inv[:, None, None, None]
            + 2.0 * a2 * np.einsum("bi,bj,bk->bkij", z, z, z) * (inv * inv)[:, None, None, None]
        )
        return G, dG
    if d == 3:
        b1 = (1.0 / mat.mu + 1.0 / mat.p_modulus) / (8.0 * math.pi)
        b2 = _dyadic_coefficient(mat) / (8.0 * math.pi)
        r = np.sqrt(r2)
        G = -b1 * eye / r[:, None, None] - b2 * zz / (r2 * r)[:, None, None]
        if not grad:
            return G
        r3 = (r2 * r)[:, None, None, None]
        r5 = (r2 * r2 * r)[:, None, None, None]
        dG = (
            b1 * np.einsum("ij,bk->bkij", eye, z) / r3
            - b2 * (np.einsum("ik,bj->bkij", eye, z) + np.einsum("jk,bi->bkij", eye, z)) / r3
            + 3.0 * b2 * np.einsum("bi,bj,bk->bkij", z, z, z) / r5
        )
        return G, dG
    raise ValueError(f"dimension must be 2 or 3, got {d}")


def _radial_hessian(z: np.ndarray, r: np.ndarray, f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    """``d_i d_j f(|z|)`` from the radial derivatives ``f'`` and ``f''``."""
    d = z.shape[-1]
    u = z / r[:, None]
    uu = u[:, :, None] * u[:, None, :]
    return f2[:, None, None] * uu + (f1 / r)[:, None, None] * (np.eye(d) - uu)


def free_dynamic_kernel(z: np.ndarray, k: complex, mat: LameMaterial) -> np.ndarray:
    """Vectorized time-harmonic Kelvin tensor for ``L + k^2`` at points ``z`` (B, d)."""
    z = np.asarray(z, dtype=float)
    d = z.shape[-1]
    r = np.sqrt(np.einsum("bi,bi->b", z, z))
    if np.any(r == 0):
        raise SingularPointError("the free-space tensor is singular at x = 0")
    if k == 0:
        raise ValueError("k = 0: use the static tensor")
    k = complex(k)
    ks = k / math.sqrt(mat.mu)
    kp = k / math.sqrt(mat.p_modulus)
    eye = np.eye(d)
    if d == 2:

        def radial(kap):
            h0 = hankel1(0, kap * r)
            h1 = hankel1(1, kap * r)
            f1 = -kap * h1
            f2 = kap * kap * (-h0 + h1 / (kap * r))
            return h0, f1, f2

        h0s, f1s, f2s = radial(ks)
        _, f1p, f2p = radial(kp)
        hess = _radial_hessian(z, r, f1p - f1s, f2p - f2s)
        return -(1j / (4.0 * mat.mu)) * h0s[:, None, None] * eye + (1j / (4.0 * k * k)) * hess
    if d == 3:

        def radial(kap):
            e = np.exp(1j * kap * r)
            f0 = e / r
            f1 = e * (1j * kap / r - 1.0 / r**2)
            f2 = e * (-(kap * kap) / r - 2j * kap / r**2 + 2.0 / r**3)
            return f0, f1, f2

        f0s, f1s, f2s = radial(ks)
        _, f1p, f2p = radial(kp)
        hess = _radial_hessian(z, r, f1p - f1s, f2p - f2s)
        return -(f0s / (4.0 * math.pi * mat.mu))[:, None, None] * eye + hess / (4.0 * math.pi * k * k)
    raise ValueError(f"dimension must be 2 or 3, got {d}")


def green_free_static(x, mat: LameMaterial, d: int | None = None) -> GreensTensor:
    """Static Kelvin tensor ``G^0(x)`` for ``d = 2`` or ``3``."""
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    if d is not None and xv.size != d:
        raise ValueError(f"point has {xv.size} components, expected {d}")
    G = free_static_kernel(xv[None, :], mat)[0]
    return GreensTensor(G.astype(complex), tuple(xv), 0j, "free_static")


def green_free_dynamic(x, k: complex, mat: LameMaterial, d: int | None = None) -> GreensTensor:
    """Time-harmonic Kelvin tensor ``G^k(x)`` (Hankel form in 2D, exponential form in 3D)."""
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    if d is not None and xv.size != d:
        raise ValueError(f"point has {xv.size} components, expected {d}")
    G = free_dynamic_kernel(xv[None, :], k, mat)[0]
    return GreensTensor(G, tuple(xv), complex(k), "free_dynamic")


# ---------------------------------------------------------------------------
# Incomplete gamma ladders and heat moments
# ---------------------------------------------------------------------------


def _upper_gamma_ladder(a_lo: float, count: int, x: np.ndarray) -> np.ndarray:
    """``Gamma(a_lo + i, x)`` for ``i = 0 .. count-1`` and ``x > 0``.

    ``a_lo`` must be an integer or a half-integer.  The ladder starts from
    ``Gamma(0, x) = E1(x)`` or ``Gamma(1/2, x) = sqrt(pi) erfc(sqrt(x))`` and
    uses the recurrence ``Gamma(a + 1, x) = a Gamma(a, x) + x^a e^-x`` in both
    directions.
    """
    half = abs(a_lo - math.floor(a_lo) - 0.5) < 1e-12
    if half:
        base_a = 0.5
        base = math.sqrt(math.pi) * erfc(np.sqrt(x))
    else:
        base_a = 0.0
        base = exp1(x)
    ex = np.exp(-x)
    a_hi = a_lo + count - 1
    values = {base_a: base}
    a = base_a
    cur = base
    while a < a_hi - 1e-12:
        cur = a * cur + x**a * ex
        a += 1.0
        values[a] = cur
    a = base_a
    cur = base
    while a > a_lo + 1e-12:
        a -= 1.0
        cur = (cur - x**a * ex) / a
        values[a] = cur
    out = np.empty((count,) + np.shape(x))
    for i in range(count):
        out[i] = values[round(2 * (a_lo + i)) / 2.0]
    return out


def _heat_moments(r: np.ndarray, q_lo: int, q_hi: int, eta: float, d: int) -> np.ndarray:
    """``W_q(r)`` for ``q = q_lo .. q_hi`` at ``r > 0``; shape (q_hi - q_lo + 1, len(r))."""
    x = (eta * r) ** 2
    a_lo = d / 2.0 - 1.0 - q_hi
    count = q_hi - q_lo + 1
    gam = _upper_gamma_ladder(a_lo, count, x)  # gam[i] = Gamma(a_lo + i)
    out = np.empty((count, r.size))
    pref = (4.0 * math.pi) ** (-d / 2.0)
    quarter_r2 = 0.25 * r * r
    for i in range(count):
        a = a_lo + i
        q = q_hi - i
        out[q - q_lo] = pref * quarter_r2 ** (-a) * gam[i]
    return out


def _heat_moment_at_origin(q: int, eta: float, d: int) -> float:
    """``W_q(0)``, finite only when ``q + 1 - d/2 > 0``."""
    e = q + 1.0 - d / 2.0
    if e <= 0:
        raise SingularPointError("heat moment is singular at the origin")
    T = 1.0 / (4.0 * eta * eta)
    return (4.0 * math.pi) ** (-d / 2.0) * T**e / e


def _lower_gamma_scaled(a: float, x: np.ndarray) -> np.ndarray:
    """``gamma(a, x) / x^a`` for ``a > 0``, smooth down to ``x = 0``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 2.0
    xs = x[small]
    term = np.ones_like(xs)
    acc = term / a
    for k in range(1, 60):
        term = term * (-xs) / k
        acc = acc + term / (a + k)
    out[small] = acc
    xl = x[~small]
    out[~small] = gammainc(a, xl) * math.gamma(a) / xl**a
    return out


def _ein(x: np.ndarray) -> np.ndarray:
    """Entire exponential integral ``Ein(x) = E1(x) + gamma + ln x``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 2.0
    xs = x[small]
    term = np.ones_like(xs)
    acc = np.zeros_like(xs)
    for k in range(1, 60):
        term = term * (-xs) / k
        acc = acc - term / k
    out[small] = acc
    xl = x[~small]
    out[~small] = exp1(xl) + EULER_GAMMA + np.log(xl)
    return out


def _static_moment_remainder(r: np.ndarray, q: int, eta: float, d: int) -> np.ndarray:
    """``W_q(r) - W_q^inf(r)``: heat moment minus its free-space counterpart.

    ``W_q^inf`` is the integral extended to ``t = inf`` (with the logarithmic
    normalisation ``-log(r) / (2 pi)`` for ``q = 0`` in two dimensions).  The
    difference is smooth at the origin.
    """
    a = d / 2.0 - 1.0 - q
    x = (eta * r) ** 2
    if d == 2 and q == 0:
        return (_ein(x) - EULER_GAMMA - 2.0 * math.log(eta)) / (4.0 * math.pi)
    if a <= 0:
        raise ValueError("remainder only defined for the leading static moments")
    pref = (4.0 * math.pi) ** (-d / 2.0)
    return -pref * (4.0 * eta * eta) ** a * _lower_gamma_scaled(a, x)


def _log_moment(r: np.ndarray, q: int) -> np.ndarray:
    """Coefficient of ``log r`` in ``W_q(r)`` for ``d = 2`` (zero when ``q < 0``)."""
    if q < 0:
        return np.zeros_like(r)
    return (-1.0) ** (q + 1) * (0.25 * r * r) ** q / (2.0 * math.pi * math.factorial(q))


# ---------------------------------------------------------------------------
# Spectral profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Profile:
    """Radial spectral weight ``g(s) = int_0^inf e^{-ts} h(t) dt``.

    kinds: ``power`` (``g = s^-p``), ``shifted`` (``g = 1/(s - a)``) and
    ``product`` (``g = 1/((s - a)(s - b))``).
    """

    kind: str
    p: int = 0
    a: complex = 0j
    b: complex = 0j

    def coefficients(self, T: float) -> dict[int, complex]:
        """Taylor coefficients ``h_j`` of ``h(t)``, truncated where ``|h_j| T^j`` is negligible."""
        if self.kind == "power":
            return {self.p - 1: 1.0 / math.factorial(self.p - 1)}
        scale = max(abs(self.a), abs(self.b)) * T
        coeffs: dict[int, complex] = {}
        if self.kind == "shifted":
            j = 0
            term = 1.0 + 0j
            while True:
                coeffs[j] = term
                j += 1
                term = term * self.a / j
                if j >= 2 and (scale**j) / math.factorial(j) < 1e-18:
                    break
            return coeffs
        # product: h(t) = (e^{at} - e^{bt}) / (a - b)
        j = 1
        while True:
            s = sum(self.a**i * self.b ** (j - 1 - i) for i in range(j))
            coeffs[j] = s / math.factorial(j)
            j += 1
            if j >= 3 and (scale ** (j - 1)) * T / math.factorial(j) < 1e-18:
                break
        return coeffs

    def reciprocal(self, s: np.ndarray, T: float) -> np.ndarray:
        """``int_T^inf e^{-ts} h(t) dt`` at the lattice values ``s = |xi|^2``."""
        if self.kind == "power":
            return gammaincc(self.p, T * s) / s**self.p
        if self.kind == "shifted":
            return np.exp(-T * (s - self.a)) / (s - self.a)
        delta = self.a - self.b
        ratio = T if delta == 0 else np.expm1(T * delta) / delta
        return np.exp(-T * (s - self.b)) * (ratio * (s - self.b) + 1.0) / ((s - self.a) * (s - self.b))


@dataclass(frozen=True)
class _KernelSpec:
    """``G = -a1 delta F1 - c dd F2`` with spectral profiles for F1 and F2."""

    a1: complex
    f1: _Profile
    c: complex
    f2: _Profile
    static_singular: bool


def _static_spec(mat: LameMaterial) -> _KernelSpec:
    return _KernelSpec(1.0 / mat.mu, _Profile("power", p=1), _dyadic_coefficient(mat), _Profile("power", p=2), True)


def _series_spec(mat: LameMaterial, l: int) -> _KernelSpec:
    mu, beta = mat.mu, mat.p_modulus
    return _KernelSpec(
        mu ** -(l + 1),
        _Profile("power", p=l + 1),
        mu ** -(l + 1) - beta ** -(l + 1),
        _Profile("power", p=l + 2),
        False,
    )


def _shifted_spec(mat: LameMaterial, k: complex) -> _KernelSpec:
    a = k * k / mat.mu
    b = k * k / mat.p_modulus
    return _KernelSpec(
        1.0 / mat.mu,
        _Profile("shifted", a=complex(a)),
        _dyadic_coefficient(mat),
        _Profile("product", a=complex(a), b=complex(b)),
        True,
    )


# ---------------------------------------------------------------------------
# Lattice kernel evaluator
# ---------------------------------------------------------------------------


def _integer_box(m: int, d: int) -> np.ndarray:
    axis = np.arange(-m, m + 1)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1).astype(float)


def _compose_scalar(z: np.ndarray, V: dict[int, np.ndarray], order: int) -> np.ndarray:
    """Derivative tensor of order ``order`` of a radial heat sum from its moments ``V_s``."""
    d = z.shape[-1]
    eye = np.eye(d)
    if order == 0:
        return V[0]
    if order == 1:
        return -0.5 * z * V[1][:, None]
    if order == 2:
        return 0.25 * np.einsum("pi,pj->pij", z, z) * V[2][:, None, None] - 0.5 * eye * V[1][:, None, None]
    if order == 3:
        zzz = np.einsum("pi,pj,pk->pkij", z, z, z)
        dz = np.einsum("ij,pk->pkij", eye, z) + np.einsum("ik,pj->pkij", eye, z) + np.einsum("jk,pi->pkij", eye, z)
        return -0.125 * zzz * V[3][:, None, None, None] + 0.25 * dz * V[2][:, None, None, None]
    raise ValueError(order)


# degree of the monomial multiplying V_s in each derivative order
_USES = {0: {0: 0}, 1: {1: 1}, 2: {2: 2, 1: 0}, 3: {3: 3, 2: 1}}


class QuasiPeriodicKernel:
    """Accelerated evaluator for one quasi-periodic elastic lattice kernel.

    Parameters
    ----------
    spec : _KernelSpec
        Elastic composition and spectral profiles.
    alpha : array_like
        Quasi-momentum (nonzero).
    cfg : LatticeSumConfig
        Truncations and split parameter.
    """

    def __init__(self, spec: _KernelSpec, alpha, cfg: LatticeSumConfig):
        self.spec = spec
        self.alpha = np.asarray(alpha, dtype=float)
        self.d = self.alpha.size
        self.cfg = cfg
        self.eta = cfg.split_parameter
        self.T = cfg.split_time
        n = _integer_box(cfg.fourier_truncation, self.d)
        self.xi = 2.0 * math.pi * n + self.alpha
        s = np.einsum("ki,ki->k", self.xi, self.xi)
        self.w1 = spec.f1.reciprocal(s, self.T)
        self.w2 = spec.f2.reciprocal(s, self.T)
        self.images = _integer_box(cfg.spatial_truncation, self.d)
        self.h1 = spec.f1.coefficients(self.T)
        self.h2 = spec.f2.coefficients(self.T)
        self.lead1 = 0 if spec.static_singular else None
        self.lead2 = 1 if spec.static_singular else None
        if spec.static_singular:
            if abs(self.h1.get(0, 0) - 1) > 1e-14 or abs(self.h2.get(1, 0) - 1) > 1e-14:
                raise ValueError("leading moments do not match the static free-space kernel")

    # -- reciprocal part ---------------------------------------------------

    def _phases(self, z: np.ndarray) -> np.ndarray:
        """``exp(i xi . z)`` for all reciprocal vectors, built one axis at a time."""
        m = self.cfg.fourier_truncation
        axis = 2.0 * math.pi * np.arange(-m, m + 1)
        E = None
        for i in range(self.d):
            Ei = np.exp(1j * z[:, i : i + 1] * (axis + self.alpha[i])[None, :])
            E = Ei if E is None else (E[:, :, None] * Ei[:, None, :]).reshape(z.shape[0], -1)
        return E

    def _reciprocal(self, z: np.ndarray, grad: bool):
        d = self.d
        E = self._phases(z)
        xi = self.xi
        cols = [self.w1[:, None], (np.einsum("ki,kj->kij", xi, xi) * self.w2[:, None, None]).reshape(-1, d * d)]
        if grad:
            cols.append(xi * self.w1[:, None])
            cols.append((np.einsum("ki,kj,kl->klij", xi, xi, xi) * self.w2[:, None, None, None]).reshape(-1, d**3))
        W = np.concatenate(cols, axis=1)
        S = E @ W
        eye = np.eye(d)
        G = -self.spec.a1 * S[:, 0][:, None, None] * eye + self.spec.c * S[:, 1 : 1 + d * d].reshape(-1, d, d)
        if not grad:
            return G, None
        off = 1 + d * d
        g1 = S[:, off : off + d]
        g3 = S[:, off + d :].reshape(-1, d, d, d)
        dG = -1j * self.spec.a1 * np.einsum("ij,bk->bkij", eye, g1) + 1j * self.spec.c * g3
        return G, dG

    # -- real-space part ---------------------------------------------------

    def _moments(self, r, coeffs, shifts, log=False, origin=None):
        """Collect ``V_s = sum_j h_j W_{j-s}`` for each shift ``s``.

        ``log`` replaces ``W`` by its 2D logarithmic coefficient and
        ``origin(q, s)`` supplies limits at ``r = 0``.
        """
        js = list(coeffs)
        V = {}
        if not js:
            return {s: np.zeros(r.size, dtype=complex) for s in shifts}
        if not log and origin is None:
            q_lo = min(js) - max(shifts)
            q_hi = max(js) - min(shifts)
            W = _heat_moments(r, q_lo, q_hi, self.eta, self.d)
        for s in shifts:
            acc = np.zeros(r.size, dtype=complex)
            for j in js:
                q = j - s
                if log:
                    acc = acc + coeffs[j] * _log_moment(r, q)
                elif origin is not None:
                    acc = acc + coeffs[j] * origin(q, s)
                else:
                    acc = acc + coeffs[j] * W[q - q_lo]
            V[s] = acc
        return V

    def _elastic(self, zv, V1, V2, grad):
        d = self.d
        eye = np.eye(d)
        F1 = _compose_scalar(zv, V1, 0)
        F2 = _compose_scalar(zv, V2, 2)
        G = -self.spec.a1 * F1[:, None, None] * eye - self.spec.c * F2
        if not grad:
            return G, None
        dF1 = _compose_scalar(zv, V1, 1)
        dF2 = _compose_scalar(zv, V2, 3)
        dG = -self.spec.a1 * np.einsum("ij,pk->pkij", eye, dF1) - self.spec.c * dF2
        return G, dG

    def _origin_limits(self, orders):
        """Values of ``V_s`` at ``r = 0`` following the monomial-degree limit rules."""
        d = self.d

        def value(q, s):
            deg = min(_USES[o][s] for o in orders if s in _USES[o])
            e = 2.0 * (q + 1.0 - d / 2.0)
            if deg == 0:
                return _heat_moment_at_origin(q, self.eta, d)
            if deg + e > 0:
                return 0.0
            raise SingularPointError("kernel derivative has a direction-dependent limit at the origin")

        return value

    def _real_space(self, z: np.ndarray, grad: bool, weak: bool, reduce: bool):
        d = self.d
        B = z.shape[0]
        rz = np.rint(z) if reduce else np.zeros_like(z)
        z0 = z - rz
        row_phase = np.exp(1j * (rz @ self.alpha))
        img = self.images
        I = img.shape[0]
        zz = z0[:, None, :] - img[None, :, :]
        r = np.sqrt(np.einsum("bid,bid->bi", zz, zz))
        origin = np.broadcast_to(np.all(img == 0, axis=-1), (B, I))
        near = (self.eta * r < IMAGE_CUTOFF) & ~origin
        shifts1 = [0, 1] if grad else [0]
        shifts2 = [1, 2, 3] if grad else [1, 2]
        orders1 = [0, 1] if grad else [0]
        orders2 = [2, 3] if grad else [2]

        smooth_G = np.zeros((B, d, d), dtype=complex)
        smooth_dG = np.zeros((B, d, d, d), dtype=complex) if grad else None

        # images other than the origin
        rows, cols = np.nonzero(near)
        if rows.size:
            zv = zz[rows, cols]
            rv = r[rows, cols]
            ph = np.exp(1j * (img[cols] @ self.alpha)) * row_phase[rows]
            V1 = self._moments(rv, self.h1, shifts1)
            V2 = self._moments(rv, self.h2, shifts2)
            G, dG = self._elastic(zv, V1, V2, grad)
            starts = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]])
            urows = rows[starts]
            smooth_G[urows] += np.add.reduceat(G * ph[:, None, None], starts, axis=0)
            if grad:
                smooth_dG[urows] += np.add.reduceat(dG * ph[:, None, None, None], starts, axis=0)

        # the origin image
        orow, ocol = np.nonzero(origin)
        zo = zz[orow, ocol]
        ro = r[orow, ocol]
        # smooth leading part (static free-space kernel removed)
        if self.spec.static_singular:
            V1 = {s: _static_moment_remainder(ro, self.lead1 - s, self.eta, d) for s in shifts1}
            V2 = {s: _static_moment_remainder(ro, self.lead2 - s, self.eta, d) for s in shifts2}
            G, dG = self._elastic(zo, V1, V2, grad)
            smooth_G += G * row_phase[:, None, None]
            if grad:
                smooth_dG += dG * row_phase[:, None, None, None]
        weak_out = None
        if weak:
            weak_out = self._weak(zo, ro, shifts1, shifts2, orders1, orders2, grad)
            weak_out = tuple(
                None if w is None else w * row_phase.reshape((-1,) + (1,) * (w.ndim - 1)) for w in weak_out
            )
        return smooth_G, smooth_dG, weak_out

    def _weak(self, zo, ro, shifts1, shifts2, orders1, orders2, grad):
        d = self.d
        B = zo.shape[0]
        h1 = {j: v for j, v in self.h1.items() if j != self.lead1}
        h2 = {j: v for j, v in self.h2.items() if j != self.lead2}
        G = np.zeros((B, d, d), dtype=complex)
        dG = np.zeros((B, d, d, d), dtype=complex) if grad else None
        logG = np.zeros((B, d, d), dtype=complex) if d == 2 else None
        logdG = np.zeros((B, d, d, d), dtype=complex) if (d == 2 and grad) else None
        if not h1 and not h2:
            return G, dG, logG, logdG
        pos = ro > 0
        if np.any(pos):
            V1 = self._moments(ro[pos], h1, shifts1)
            V2 = self._moments(ro[pos], h2, shifts2)
            g, dg = self._elastic(zo[pos], V1, V2, grad)
            G[pos] = g
            if grad:
                dG[pos] = dg
        if np.any(~pos):
            n0 = int(np.sum(~pos))
            z0 = np.zeros((n0, d))
            r0 = np.zeros(n0)
            V1 = self._moments(r0, h1, shifts1, origin=self._origin_limits(orders1))
            V2 = self._moments(r0, h2, shifts2, origin=self._origin_limits(orders2))
            g, dg = self._elastic(z0, V1, V2, grad)
            G[~pos] = g
            if grad:
                dG[~pos] = dg
        if d == 2:
            V1 = self._moments(ro, h1, shifts1, log=True)
            V2 = self._moments(ro, h2, shifts2, log=True)
            lg, ldg = self._elastic(zo, V1, V2, grad)
            logG[:] = lg
            if grad:
                logdG[:] = ldg
        return G, dG, logG, logdG

    # -- public entry ------------------------------------------------------

    @property
    def has_weak_part(self) -> bool:
        """Whether the origin image carries moments beyond the static free-space ones."""
        return any(j != self.lead1 for j in self.h1) or any(j != self.lead2 for j in self.h2)

    def evaluate_weak(self, z, grad: bool = False):
        """Weakly singular part of the origin image only, at points ``z`` (B, d).

        Returns (G, dG, logG, logdG) exactly as the ``weak`` entry of
        :meth:`evaluate` with ``reduce=False``.
        """
        z = np.atleast_2d(np.asarray(z, dtype=float))
        r = np.sqrt(np.einsum("bi,bi->b", z, z))
        shifts1 = [0, 1] if grad else [0]
        shifts2 = [1, 2, 3] if grad else [1, 2]
        orders1 = [0, 1] if grad else [0]
        orders2 = [2, 3] if grad else [2]
        return self._weak(z, r, shifts1, shifts2, orders1, orders2, grad)

    def evaluate(self, z, grad: bool = False, weak: bool = True, reduce: bool = True):
        """Evaluate the kernel parts at points ``z`` (B, d).

        Returns a dict with ``smooth`` = (G, dG) and, if requested, ``weak`` =
        (G, dG, logG, logdG).  The singular image is the lattice point nearest
        to ``z`` when ``reduce`` is set and the origin otherwise; the weak and
        free-space parts are centred on it and carry its Bloch phase.  The full
        kernel is ``smooth + weak`` plus the phased static free-space tensor
        at the singular image when ``static_singular`` is set.
        """
        z = np.atleast_2d(np.asarray(z, dtype=float))
        B = z.shape[0]
        d = self.d
        sG = np.empty((B, d, d), dtype=complex)
        sdG = np.empty((B, d, d, d), dtype=complex) if grad else None
        parts = []
        for start in range(0, B, CHUNK):
            zc = z[start : start + CHUNK]
            rG, rdG = self._reciprocal(zc, grad)
            G, dG, w = self._real_space(zc, grad, weak, reduce)
            sG[start : start + CHUNK] = rG + G
            if grad:
                sdG[start : start + CHUNK] = rdG + dG
            parts.append(w)
        out = {"smooth": (sG, sdG)}
        if weak:
            stacked = []
            for idx in range(4):
                arrs = [p[idx] for p in parts]
                stacked.append(None if arrs[0] is None else np.concatenate(arrs, axis=0))
            out["weak"] = tuple(stacked)
        return out

    def full(self, z, mat: LameMaterial, grad: bool = False, reduce: bool = True):
        """Full kernel value (and gradient) at nonsingular points."""
        res = self.evaluate(z, grad=grad, weak=True, reduce=reduce)
        G, dG = res["smooth"]
        wG, wdG, _, _ = res["weak"]
        G = G + wG
        if grad:
            dG = dG + wdG
        if self.spec.static_singular:
            z = np.atleast_2d(np.asarray(z, dtype=float))
            rz = np.rint(z) if reduce else np.zeros_like(z)
            z0 = z - rz
            if np.any(np.einsum("bi,bi->b", z0, z0) == 0):
                raise SingularPointError("quasi-periodic tensor is singular on the lattice")
            ph = np.exp(1j * (rz @ self.alpha))
            if grad:
                F, dF = free_static_kernel(z0, mat, grad=True)
                G = G + F * ph[:, None, None]
                dG = dG + dF * ph[:, None, None, None]
            else:
                G = G + free_static_kernel(z0, mat) * ph[:, None, None]
        return (G, dG) if grad else G


# ---------------------------------------------------------------------------
# Cached kernel factories
# ---------------------------------------------------------------------------


def _mat_key(mat: LameMaterial):
    return (mat.lam, mat.mu, mat.rho)


@lru_cache(maxsize=256)
def _cached_kernel(kind: str, alpha: tuple, mat_key: tuple, cfg: LatticeSumConfig, extra) -> QuasiPeriodicKernel:
    mat = LameMaterial(*mat_key)
    if kind == "static":
        spec = _static_spec(mat)
    elif kind == "series":
        spec = _series_spec(mat, extra)
    elif kind == "shifted":
        spec = _shifted_spec(mat, extra)
    else:
        raise ValueError(kind)
    return QuasiPeriodicKernel(spec, alpha, cfg)


def static_kernel(alpha: QuasiMomentum, mat: LameMaterial, cfg: LatticeSumConfig) -> QuasiPeriodicKernel:
    """Evaluator for ``G^{alpha,0}``."""
    alpha = as_momentum(alpha)
    alpha.require_nonzero()
    return _cached_kernel("static", alpha.alpha, _mat_key(mat), cfg, None)


def series_kernel(alpha: QuasiMomentum, mat: LameMaterial, cfg: LatticeSumConfig, l: int) -> QuasiPeriodicKernel:
    """Evaluator for the k^(2l) coefficient ``G_l^alpha`` (``l >= 1``)."""
    alpha = as_momentum(alpha)
    alpha.require_nonzero()
    if l < 1:
        raise ValueError("series order must be at least 1")
    return _cached_kernel("series", alpha.alpha, _mat_key(mat), cfg, int(l))


def shifted_kernel(alpha: QuasiMomentum, mat: LameMaterial, cfg: LatticeSumConfig, k: complex) -> QuasiPeriodicKernel:
    """Evaluator for ``G^{alpha,k}`` with exactly shifted Fourier denominators."""
    alpha = as_momentum(alpha)
    alpha.require_nonzero()
    return _cached_kernel("shifted", alpha.alpha, _mat_key(mat), cfg, complex(k))


# ---------------------------------------------------------------------------
# Public point evaluations
# ---------------------------------------------------------------------------


def min_shifted_norm(alpha) -> float:
    """``min_n |2 pi n + alpha|`` over the integer lattice."""
    a = np.asarray(as_momentum(alpha).alpha)
    n = _integer_box(1, a.size)
    return float(np.min(np.linalg.norm(2.0 * math.pi * n + a, axis=1)))


def check_wavenumber(alpha, k: complex, mat: LameMaterial) -> None:
    """Raise :class:`ResonantDenominatorError` outside the low-frequency window."""
    limit = RESONANCE_SAFETY * min_shifted_norm(alpha)
    if abs(k) / math.sqrt(mat.mu) >= limit:
        raise ResonantDenominatorError(
            f"|k|/sqrt(mu) = {abs(k) / math.sqrt(mat.mu):.6g} is not below "
            f"{RESONANCE_SAFETY} * min|2 pi n + alpha| = {limit:.6g}"
        )


def series_order(alpha, k: complex, mat: LameMaterial, tol: float) -> int:
    """Smallest truncation order L whose first omitted series term is below ``tol``."""
    if k == 0:
        return 0
    smin = min_shifted_norm(alpha) ** 2
    q = abs(k) ** 2 / (mat.mu * smin)
    if q >= 1:
        raise ResonantDenominatorError("k^2-series diverges at this wavenumber")
    lead = 8.0 / (mat.mu * smin)
    for L in range(0, MAX_SERIES_ORDER + 1):
        if lead * q ** (L + 1) / (1.0 - q) < 0.1 * tol:
            return L
    raise AccuracyError("k^2-series needs more than the maximal number of terms")


def _verify(compute, cfg: LatticeSumConfig):
    value = compute(cfg)
    if cfg.verify:
        ref = compute(cfg.doubled())
        err = float(np.max(np.abs(value - ref)))
        if err > cfg.target_tol:
            raise AccuracyError(f"lattice sum changed by {err:.3g} under doubled truncations")
    return value


def _point(x, d_expected: int | None = None) -> np.ndarray:
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    if d_expected is not None and xv.size != d_expected:
        raise ValueError(f"point has {xv.size} components, expected {d_expected}")
    return xv


def green_quasi_static(
    x, alpha, mat: LameMaterial, cfg: LatticeSumConfig | None = None, reduce: bool = True
) -> GreensTensor:
    """Quasi-periodic static tensor ``G^{alpha,0}(x)``.

    With ``reduce`` the point is first mapped to ``[-1/2, 1/2)^d`` and the
    Bloch phase applied; otherwise the accelerated sum is evaluated at ``x``
    directly.
    """
    cfg = cfg or LatticeSumConfig()
    alpha = as_momentum(alpha)
    xv = _point(x, alpha.d)

    def compute(c):
        ker = static_kernel(alpha, mat, c)
        if reduce:
            n = np.floor(xv + 0.5)
            phase = np.exp(1j * float(n @ ker.alpha))
            return ker.full((xv - n)[None, :], mat)[0] * phase
        return ker.full(xv[None, :], mat)[0]

    return GreensTensor(_verify(compute, cfg), tuple(xv), 0j, "quasi_static")


def green_quasi_series_coeff(x, alpha, l: int, mat: LameMaterial, cfg: LatticeSumConfig | None = None) -> GreensTensor:
    """k^(2l) coefficient ``G_l^alpha(x)`` of the quasi-periodic tensor (``l >= 1``).

    Unlike the static tensor it is continuous at the lattice points.
    """
    cfg = cfg or LatticeSumConfig()
    alpha = as_momentum(alpha)
    xv = _point(x, alpha.d)

    def compute(c):
        return series_kernel(alpha, mat, c, l).full(xv[None, :], mat)[0]

    return GreensTensor(_verify(compute, cfg), tuple(xv), 0j, "series_coeff", order=int(l))


def green_quasi_dynamic(
    x, alpha, k: complex, mat: LameMaterial, cfg: LatticeSumConfig | None = None, method: str = "auto"
) -> GreensTensor:
    """Quasi-periodic tensor ``G^{alpha,k}(x)`` for ``L + k^2`` at low frequency.

    ``method`` is ``series`` (truncated k^2-series), ``direct`` (accelerated
    sum with exactly shifted denominators) or ``auto``, which uses the series
    when ``|k| <= 0.1 min|2 pi n + alpha|`` and the direct sum otherwise.
    """
    cfg = cfg or LatticeSumConfig()
    alpha = as_momentum(alpha)
    alpha.require_nonzero()
    xv = _point(x, alpha.d)
    k = complex(k)
    if k == 0:
        g = green_quasi_static(xv, alpha, mat, cfg)
        return GreensTensor(g.entries, g.x, 0j, "quasi_dynamic")
    check_wavenumber(alpha, k, mat)
    if method == "auto":
        method = "series" if abs(k) <= SERIES_CROSSOVER * min_shifted_norm(alpha) else "direct"
    if method == "series":
        L = series_order(alpha, k, mat, cfg.target_tol)

        def compute(c):
            total = static_kernel(alpha, mat, c).full(xv[None, :], mat)[0]
            for l in range(1, L + 1):
                total = total + k ** (2 * l) * series_kernel(alpha, mat, c, l).full(xv[None, :], mat)[0]
            return total

    elif method == "direct":

        def compute(c):
            return shifted_kernel(alpha, mat, c, k).full(xv[None, :], mat)[0]

    else:
        raise ValueError(f"unknown method {method!r}")
    return GreensTensor(_verify(compute, cfg), tuple(xv), k, "quasi_dynamic")


def green_quasi_dynamic_series(x, alpha, k: complex, mat: LameMaterial, L: int, cfg: LatticeSumConfig | None = None):
    """Series ``G^{alpha,0} + sum_{l<=L} k^(2l) G_l^alpha`` with a fixed truncation order."""
    cfg = cfg or LatticeSumConfig()
    alpha = as_momentum(alpha)
    xv = _point(x, alpha.d)
    total = static_kernel(alpha, mat, cfg).full(xv[None, :], mat)[0]
    for l in range(1, L + 1):
        total = total + complex(k) ** (2 * l) * series_kernel(alpha, mat, cfg, l).full(xv[None, :], mat)[0]
    return GreensTensor(total, tuple(xv), complex(k), "quasi_dynamic")


def smooth_remainder(x, alpha, mat: LameMaterial, cfg: LatticeSumConfig | None = None) -> GreensTensor:
    """``R^alpha(x) = G^{alpha,0}(x) - G^0(x)``, smooth near the origin.

    The free-space singularity is cancelled analytically inside the origin
    image of the real-space sum, so ``x = 0`` is evaluated without
    subtraction of large numbers.
    """
    cfg = cfg or LatticeSumConfig()
    alpha = as_momentum(alpha)
    xv = _point(x, alpha.d)

    def compute(c):
        return static_kernel(alpha, mat, c).evaluate(xv[None, :], weak=False)["smooth"][0][0]

    return GreensTensor(_verify(compute, cfg), tuple(xv), 0j, "smooth_remainder")


@lru_cache(maxsize=128)
def _remainder_at_origin(alpha: tuple, mat_key: tuple, cfg: LatticeSumConfig) -> np.ndarray:
    mat = LameMaterial(*mat_key)
    value = smooth_remainder(np.zeros(len(alpha)), alpha, mat, cfg).entries
    value.setflags(write=False)
    return value


def remainder_at_origin(alpha, mat: LameMaterial, cfg: LatticeSumConfig | None = None) -> np.ndarray:
    """Memoized ``R^alpha(0)``."""
    cfg = cfg or LatticeSumConfig()
    return _remainder_at_origin(as_momentum(alpha).alpha, _mat_key(mat), cfg)


# ---------------------------------------------------------------------------
# Independent route: Gaussian-regularized Fourier sums
# ---------------------------------------------------------------------------


def _fourier_coefficients(xi: np.ndarray, mat: LameMaterial) -> np.ndarray:
    s = np.einsum("ki,ki->k", xi, xi)
    d = xi.shape[1]
    return -np.eye(d) / (mat.mu * s)[:, None, None] + _dyadic_coefficient(mat) * np.einsum(
        "ki,kj->kij", xi, xi
    ) / (s * s)[:, None, None]


def _regularized_sum(x: np.ndarray, alpha: np.ndarray, mat: LameMaterial, eps: float, cutoff: float = 40.0) -> np.ndarray:
    """``sum_xi exp(i xi.x - eps |xi|^2) Ghat(xi)`` truncated where the damping is below ``e^-cutoff``."""
    d = alpha.size
    kmax = math.sqrt(cutoff / eps)
    M = int(math.ceil(kmax / (2.0 * math.pi))) + 1
    axis = np.arange(-M, M + 1, dtype=float)
    total = np.zeros((d, d), dtype=complex)
    # loop over the first axis to bound memory
    rest = _integer_box(M, d - 1)
    for n0 in axis:
        xi = np.concatenate([np.full((rest.shape[0], 1), n0), rest], axis=1) * 2.0 * math.pi + alpha
        s = np.einsum("ki,ki->k", xi, xi)
        keep = eps * s < cutoff
        if not np.any(keep):
            continue
        xi = xi[keep]
        w = np.exp(1j * (xi @ x) - eps * s[keep])
        total += np.einsum("k,kij->ij", w, _fourier_coefficients(xi, mat))
    return total


def regularized_fourier_static(x, alpha, mat: LameMaterial, eps: float | None = None) -> np.ndarray:
    """``G^{alpha,0}(x)`` from Gaussian-regularized Fourier sums extrapolated in the regulator.

    The regularized sum differs from the exact one by a term exactly linear in
    the regulator plus contributions of order ``exp(-dist^2 / (4 eps))`` where
    ``dist`` is the distance from ``x`` to the lattice, so a two-level
    extrapolation removes the linear term.  Slow; intended as a cross-check.
    """
    alpha = as_momentum(alpha)
    alpha.require_nonzero()
    a = alpha.as_array()
    xv = _point(x, alpha.d)
    dist = float(np.linalg.norm(xv - np.rint(xv)))
    if dist < 0.05:
        raise SingularPointError("point too close to the lattice for the regularized sum")
    if eps is None:
        eps = dist * dist / 180.0
    g1 = _regularized_sum(xv, a, mat, eps)
    g2 = _regularized_sum(xv, a, mat, eps / 2.0)
    return 2.0 * g2 - g1


def regularized_remainder_at_origin(alpha, mat: LameMaterial, eps_levels=(8e-3, 4e-3, 2e-3, 1e-3)) -> np.ndarray:
    """``R^alpha(0)`` in three dimensions from regularized sums minus regularized free-space integrals.

    ``sum_xi exp(-eps |xi|^2) Ghat(xi)`` minus the matching continuum integral
    is a smooth function of ``eps`` whose limit is ``R^alpha(0)``;
    Richardson extrapolation over the supplied levels removes the polynomial
    error terms.
    """
    alpha = as_momentum(alpha)
    alpha.require_nonzero()
    if alpha.d != 3:
        raise ValueError("the regularized origin remainder is implemented for d = 3")
    a = alpha.as_array()
    c0 = _dyadic_coefficient(mat)
    vals = []
    for eps in eps_levels:
        lattice = _regularized_sum(np.zeros(3), a, mat, eps)
        continuum = (-1.0 / mat.mu + c0 / 3.0) / (4.0 * math.pi**1.5 * math.sqrt(eps)) * np.eye(3)
        vals.append(lattice - continuum)
    # Neville extrapolation to eps = 0 in the variable eps
    xs = list(eps_levels)
    table = [v.copy() for v in vals]
    n = len(xs)
    for m in range(1, n):
        for i in range(n - m):
            table[i] = (xs[i + m] * table[i] - xs[i] * table[i + 1]) / (xs[i + m] - xs[i])
    return table[0]

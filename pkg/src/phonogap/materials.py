"""Lamé materials, contrast regimes and quasi-momenta.

All quantities are nondimensional with the lattice period set to one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContrastError, MaterialError, NearZeroMomentumError

ALPHA_MIN_DEFAULT = 1e-2
PROPORTIONALITY_RTOL = 1e-12
TAU_BAND = (0.1, 10.0)


@dataclass(frozen=True)
class LameMaterial:
    """Isotropic elastic medium.

    Attributes
    ----------
    lam : float
        First Lamé parameter.
    mu : float
        Shear modulus, strictly positive.
    rho : float
        Mass density, strictly positive.
    """

    lam: float
    mu: float
    rho: float = 1.0

    def __post_init__(self) -> None:
        for name in ("lam", "mu", "rho"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise MaterialError(f"{name} must be finite, got {value!r}")
        if self.mu <= 0:
            raise MaterialError(f"shear modulus mu must be positive, got {self.mu}")
        if self.rho <= 0:
            raise MaterialError(f"density rho must be positive, got {self.rho}")

    @property
    def p_modulus(self) -> float:
        """Longitudinal modulus lambda + 2 mu."""
        return self.lam + 2.0 * self.mu

    def scaled(self, c: float) -> LameMaterial:
        """Return the material with both Lamé parameters multiplied by ``c``."""
        return LameMaterial(self.lam * c, self.mu * c, self.rho)


def validate_convexity(mat: LameMaterial, d: int) -> bool:
    """Strong convexity test: ``mu > 0`` and ``d*lambda + 2*mu > 0``."""
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    return mat.mu > 0 and d * mat.lam + 2.0 * mat.mu > 0


def require_convex(mat: LameMaterial, d: int) -> None:
    """Raise :class:`MaterialError` when ``mat`` is not strongly convex in dimension ``d``."""
    if not validate_convexity(mat, d):
        raise MaterialError(
            f"strong convexity requires mu > 0 and {d}*lambda + 2*mu > 0; "
            f"got lambda={mat.lam}, mu={mat.mu} ({d}*lambda + 2*mu = {d * mat.lam + 2 * mat.mu})"
        )


def wave_velocities(mat: LameMaterial, d: int = 3) -> tuple[float, float]:
    """Shear and compressional wave speeds ``(c_s, c_p)``."""
    require_convex(mat, d)
    c_s = math.sqrt(mat.mu / mat.rho)
    c_p = math.sqrt(mat.p_modulus / mat.rho)
    return c_s, c_p


@dataclass(frozen=True)
class ContrastRegime:
    """High-contrast parameters of the inclusion relative to the background.

    ``delta`` is the ratio of background to inclusion Lamé moduli, ``epsilon``
    the ratio of background to inclusion density and ``tau`` the velocity
    contrast ``sqrt(delta / epsilon)``.
    """

    delta: float
    epsilon: float
    tau: float = field(init=False)

    def __post_init__(self) -> None:
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ContrastError(f"delta must be positive, got {self.delta}")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ContrastError(f"epsilon must be positive, got {self.epsilon}")
        object.__setattr__(self, "tau", math.sqrt(self.delta / self.epsilon))

    @classmethod
    def from_delta_tau(cls, delta: float, tau: float) -> ContrastRegime:
        """Build the regime from ``delta`` and the velocity contrast ``tau``."""
        if not tau > 0:
            raise ContrastError(f"tau must be positive, got {tau}")
        return cls(delta, delta / (tau * tau))

    @property
    def tau_in_band(self) -> bool:
        return TAU_BAND[0] <= self.tau <= TAU_BAND[1]


def contrast_from_materials(background: LameMaterial, inclusion: LameMaterial) -> ContrastRegime:
    """Derive ``(delta, epsilon, tau)`` from a background and an inclusion material.

    The inclusion Lamé pair must equal the background pair divided by a single
    factor ``delta``. A velocity contrast outside [0.1, 10] triggers a warning.
    """
    bg = np.array([background.lam, background.mu], dtype=float)
    inc = np.array([inclusion.lam, inclusion.mu], dtype=float)
    delta = background.mu / inclusion.mu
    if not np.allclose(inc * delta, bg, rtol=PROPORTIONALITY_RTOL, atol=0.0):
        raise ContrastError(
            "inclusion Lamé pair is not proportional to the background pair: "
            f"background={tuple(bg)}, inclusion={tuple(inc)}"
        )
    regime = ContrastRegime(delta, background.rho / inclusion.rho)
    if not regime.tau_in_band:
        warnings.warn(
            f"velocity contrast tau={regime.tau:.6g} lies outside the O(1) band {TAU_BAND}",
            stacklevel=2,
        )
    return regime


@dataclass(frozen=True)
class QuasiMomentum:
    """Quasi-momentum in the Brillouin zone ``[-pi, pi]^d``."""

    alpha: tuple[float, ...]
    alpha_min: float = ALPHA_MIN_DEFAULT

    def __post_init__(self) -> None:
        values = tuple(float(a) for a in self.alpha)
        if len(values) not in (2, 3):
            raise ValueError(f"quasi-momentum must have 2 or 3 components, got {len(values)}")
        bound = math.pi * (1.0 + 1e-12)
        for a in values:
            if not (math.isfinite(a) and -bound <= a <= bound):
                raise ValueError(f"quasi-momentum components must lie in [-pi, pi], got {values}")
        object.__setattr__(self, "alpha", values)

    @property
    def d(self) -> int:
        return len(self.alpha)

    @property
    def norm(self) -> float:
        return math.sqrt(sum(a * a for a in self.alpha))

    @property
    def near_zero(self) -> bool:
        return self.norm < self.alpha_min

    def as_array(self) -> np.ndarray:
        return np.array(self.alpha, dtype=float)

    def negated(self) -> QuasiMomentum:
        return QuasiMomentum(tuple(-a for a in self.alpha), self.alpha_min)

    def require_nonzero(self) -> None:
        if self.near_zero:
            raise NearZeroMomentumError(
                f"|alpha| = {self.norm:.3g} is below the cutoff {self.alpha_min:.3g}"
            )


def as_momentum(alpha, alpha_min: float = ALPHA_MIN_DEFAULT) -> QuasiMomentum:
    """Coerce a sequence or :class:`QuasiMomentum` to a :class:`QuasiMomentum`."""
    if isinstance(alpha, QuasiMomentum):
        return alpha
    return QuasiMomentum(tuple(float(a) for a in alpha), alpha_min)

"""Leading-order resonant frequencies, band sweeps and band-gap reports.

For a hard inclusion with density contrast ``epsilon`` the subwavelength
resonances at quasi-momentum ``alpha`` are, to leading order,

    omega_i = sqrt(beta_i / (rho |D|)) * sqrt(epsilon),

where ``beta_i`` are the eigenvalues of the Q matrix.  This module samples
them along a Brillouin-zone path, reports the resulting gap, and provides
the closed forms available for a ball together with the dilute-inclusion
expansion of Q.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bie
from .errors import PhonogapError, PositivityError, SweepError, UnsupportedRegimeError
from .greens import LatticeSumConfig
from .materials import ALPHA_MIN_DEFAULT, ContrastRegime, LameMaterial, QuasiMomentum, as_momentum, require_convex

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = {2: 32, 3: 24}
GAP_MARGIN_FRACTION = 0.05
SWEEP_FAILURE_FRACTION = 0.10
DILUTE_WARN_RATIO = 0.1
DEGENERACY_FACTOR = 10.0
EPSILON_NOTE = (
    "leading-order estimate: the interval is a band gap only for density contrast "
    "epsilon below an unquantified threshold epsilon_0"
)

FLAG_COMPUTED = "computed"
FLAG_ANALYTIC = "analytic"
FLAG_FAILED = "failed"


def leading_frequencies(Q: bie.QAlphaMatrix | np.ndarray, rho: float, measure: float, epsilon: float) -> np.ndarray:
    """Ascending leading-order frequencies ``sqrt(beta / (rho |D|)) sqrt(epsilon)``.

    ``Q`` may be a :class:`~phonogap.bie.QAlphaMatrix` or an array of eigenvalues.
    """
    beta = np.asarray(Q.beta if isinstance(Q, bie.QAlphaMatrix) else Q, dtype=float)
    if np.any(beta <= 0):
        raise PositivityError("Q eigenvalues must be positive")
    if epsilon < 0 or rho <= 0 or measure <= 0:
        raise ValueError("epsilon must be non-negative, rho and measure positive")
    return np.sort(np.sqrt(beta / (rho * measure)) * math.sqrt(epsilon))


# ---------------------------------------------------------------------------
# Brillouin paths
# ---------------------------------------------------------------------------

_VERTICES = {
    2: [("G", (0.0, 0.0)), ("X", (math.pi, 0.0)), ("M", (math.pi, math.pi)), ("G", (0.0, 0.0))],
    3: [
        ("G", (0.0, 0.0, 0.0)),
        ("X", (math.pi, 0.0, 0.0)),
        ("M", (math.pi, math.pi, 0.0)),
        ("R", (math.pi, math.pi, math.pi)),
        ("G", (0.0, 0.0, 0.0)),
    ],
}


def _allocate_steps(lengths: np.ndarray, total: int) -> np.ndarray:
    """Split ``total`` steps proportionally to ``lengths`` by largest remainder (ties to the earlier segment)."""
    exact = total * lengths / lengths.sum()
    steps = np.floor(exact).astype(int)
    rem = exact - steps
    order = sorted(range(len(lengths)), key=lambda i: (-round(rem[i], 12), i))
    for i in order[: total - steps.sum()]:
        steps[i] += 1
    return steps


def brillouin_path(d: int, n_samples: int | None = None, alpha_min: float = ALPHA_MIN_DEFAULT) -> list[QuasiMomentum]:
    """High-symmetry path starting and ending at the zone centre.

    The path is G-X-M-G in two dimensions and G-X-M-R-G in three.  Steps are
    allotted to segments in proportion to their length so every vertex is a
    sample; ``n_samples`` counts the points away from the zone centre, and the
    two centre points are included as well.
    """
    if d not in _VERTICES:
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    n = DEFAULT_SAMPLES[d] if n_samples is None else int(n_samples)
    if n < len(_VERTICES[d]) - 2:
        raise ValueError("too few samples to visit every vertex")
    verts = np.array([v for _, v in _VERTICES[d]])
    lengths = np.linalg.norm(np.diff(verts, axis=0), axis=1)
    steps = _allocate_steps(lengths, n + 1)
    points = [verts[0]]
    for seg, m in enumerate(steps):
        for s in range(1, m + 1):
            points.append(verts[seg] + (verts[seg + 1] - verts[seg]) * s / m)
    return [QuasiMomentum(tuple(float(c) for c in p), alpha_min) for p in points]


def parse_path(spec: str, d: int, n_samples: int, alpha_min: float = ALPHA_MIN_DEFAULT) -> list[QuasiMomentum]:
    """Path through named vertices such as ``"G-X-M-G"``."""
    names = {name: v for name, v in _VERTICES[d]}
    labels = [s.strip() for s in spec.split("-")]
    unknown = [s for s in labels if s not in names]
    if unknown or len(labels) < 2:
        raise ValueError(f"invalid path {spec!r}; vertices are {sorted(names)}")
    verts = np.array([names[s] for s in labels])
    lengths = np.linalg.norm(np.diff(verts, axis=0), axis=1)
    if np.any(lengths == 0):
        raise ValueError("path repeats a vertex")
    steps = _allocate_steps(lengths, n_samples + 1)
    points = [verts[0]]
    for seg, m in enumerate(steps):
        for s in range(1, m + 1):
            points.append(verts[seg] + (verts[seg + 1] - verts[seg]) * s / m)
    return [QuasiMomentum(tuple(float(c) for c in p), alpha_min) for p in points]


# ---------------------------------------------------------------------------
# Band diagrams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BandSample:
    """One quasi-momentum sample of a band diagram."""

    alpha: QuasiMomentum
    beta: tuple[float, ...]
    omega: tuple[float, ...]
    flag: str
    message: str = ""
    omega_rigid: tuple[float, ...] = ()


@dataclass(frozen=True)
class BandDiagram:
    """Leading-order bands sampled over quasi-momenta."""

    samples: tuple[BandSample, ...]
    epsilon: float
    rho: float
    measure: float

    def computed(self) -> list[BandSample]:
        return [s for s in self.samples if s.flag == FLAG_COMPUTED]

    def recompute_omega(self, sample: BandSample) -> tuple[float, ...]:
        """Frequencies from the stored eigenvalues."""
        return tuple(float(w) for w in leading_frequencies(np.array(sample.beta), self.rho, self.measure, self.epsilon))


def _sample(alpha, disc, mat, epsilon, measure, cfg, with_rigid) -> BandSample:
    d = disc.d
    if alpha.near_zero:
        zeros = (0.0,) * d
        return BandSample(alpha, zeros, zeros, FLAG_ANALYTIC, "zero frequency with multiplicity d at the zone centre")
    try:
        Q = bie.compute_Q_alpha(disc, alpha, mat, cfg)
        omega = leading_frequencies(Q, mat.rho, measure, epsilon)
        rigid = bie.compute_rigid_Q(disc, alpha, mat, cfg).frequencies(mat.rho, epsilon) if with_rigid else ()
        return BandSample(
            alpha,
            tuple(float(b) for b in Q.beta),
            tuple(float(w) for w in omega),
            FLAG_COMPUTED,
            omega_rigid=tuple(float(w) for w in rigid),
        )
    except PhonogapError as exc:
        logger.warning("sample alpha=%s failed: %s", alpha.alpha, exc)
        nan = (float("nan"),) * d
        return BandSample(alpha, nan, nan, FLAG_FAILED, str(exc))


def sweep_brillouin(
    path: list[QuasiMomentum],
    disc: bie.BoundaryDiscretization,
    mat: LameMaterial,
    contrast: ContrastRegime,
    cfg: LatticeSumConfig | None = None,
    workers: int | None = None,
    with_rigid: bool = True,
) -> BandDiagram:
    """Q eigenvalues and leading frequencies at every path point.

    Points inside the near-zero cutoff are recorded analytically with zero
    frequencies.  Individual failures are recorded and the sweep continues;
    more than 10% failed points raise :class:`SweepError`.  With
    ``with_rigid`` each sample also carries the frequencies of the
    rigid-motion problem, which includes rotations of the inclusion.
    """
    cfg = cfg or LatticeSumConfig()
    path = [as_momentum(a) for a in path]
    if not path:
        raise ValueError("empty path")
    measure = bie.inclusion_measure(disc)
    workers = workers or min(len(path), os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        samples = list(pool.map(lambda a: _sample(a, disc, mat, contrast.epsilon, measure, cfg, with_rigid), path))
    failed = sum(s.flag == FLAG_FAILED for s in samples)
    if failed > SWEEP_FAILURE_FRACTION * len(samples):
        raise SweepError(f"{failed} of {len(samples)} quasi-momentum samples failed")
    return BandDiagram(tuple(samples), contrast.epsilon, mat.rho, measure)


@dataclass(frozen=True)
class BandgapReport:
    """Leading-order band-gap interval ``[omega_star + eta, omega_sharp]``."""

    omega_star: float
    eta: float
    omega_sharp: float | None
    gap: tuple[float, float] | None
    epsilon_note: str = EPSILON_NOTE
    omega_star_rigid: float | None = None
    rigid_note: str = ""

    @property
    def lower_edge(self) -> float:
        return self.omega_star + self.eta

    @property
    def nonempty(self) -> bool:
        return self.gap is not None


def bandgap_estimate(diagram: BandDiagram, eta: float | None = None, omega_sharp: float | None = None) -> BandgapReport:
    """Band-gap report from the top leading-order branch.

    ``omega_star`` is the largest top-branch frequency over computed samples,
    ``eta`` defaults to ``0.05 * omega_star`` and the gap is empty when the
    ceiling ``omega_sharp`` does not exceed ``omega_star + eta`` (or is absent).

    When the samples carry rigid-motion frequencies, ``omega_star_rigid`` is
    their maximum and ``rigid_note`` says whether rotational resonances of the
    inclusion fall inside the reported interval.
    """
    tops = [s.omega[-1] for s in diagram.computed()]
    if not tops:
        raise ValueError("band diagram has no computed samples")
    omega_star = max(tops)
    if eta is None:
        eta = GAP_MARGIN_FRACTION * omega_star
    if not eta > 0:
        raise ValueError("eta must be positive")
    gap = None
    if omega_sharp is not None and omega_sharp > omega_star + eta:
        gap = (omega_star + eta, float(omega_sharp))
    rigid = [w for s in diagram.computed() for w in s.omega_rigid]
    omega_star_rigid = max(rigid) if rigid else None
    note = ""
    if rigid:
        lo = omega_star + eta
        hi = gap[1] if gap else math.inf
        inside = sorted({round(w, 12) for w in rigid if lo <= w <= hi})
        if inside:
            note = (
                f"{len(inside)} rigid-motion frequencies (rotations of the inclusion) lie in "
                f"[{lo:.6g}, {hi:.6g}], up to {max(inside):.6g}"
            )
        else:
            note = f"no rigid-motion frequency lies in [{lo:.6g}, {hi:.6g}]"
    return BandgapReport(
        omega_star, float(eta), None if omega_sharp is None else float(omega_sharp), gap, EPSILON_NOTE,
        omega_star_rigid, note,
    )


# ---------------------------------------------------------------------------
# Dilute inclusions and balls
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiluteScaling:
    """Shrink factor ``s`` of an inclusion ``B = s D``."""

    s: float
    epsilon: float | None = None
    note: str = field(init=False, default="")

    def __post_init__(self) -> None:
        if not 0 < self.s < 0.5:
            raise ValueError("dilute shrink factor must satisfy 0 < s < 0.5")
        note = "requires epsilon / s^2 << 1"
        if self.epsilon is not None:
            ratio = self.epsilon / self.s**2
            note = f"epsilon / s^2 = {ratio:.3g}"
            if ratio > DILUTE_WARN_RATIO:
                warnings.warn(f"epsilon / s^2 = {ratio:.3g} is not small; dilute expansion unreliable", stacklevel=2)
        object.__setattr__(self, "note", note)


def dilute_Q(QD_free, s: DiluteScaling | float, R0: np.ndarray, xi_sums: np.ndarray) -> np.ndarray:
    """Two-term dilute expansion of the quasi-periodic Q matrix of ``B = s D``.

    Parameters
    ----------
    QD_free : QAlphaMatrix or ndarray
        Free-space Q matrix of the reference shape ``D``.
    s : DiluteScaling or float
        Shrink factor.
    R0 : ndarray
        Smooth remainder of the quasi-periodic tensor at the origin.
    xi_sums : ndarray, shape (d, d)
        Row ``i`` is the integral of the free-space density solving ``S_D phi = e_i``.

    Returns
    -------
    ndarray
        ``s Q^D_ij - s^2 sum_l (R0 xi_i)_l Q^D_lj``; the neglected terms are O(s^3).
    """
    QD = np.asarray(QD_free.entries if isinstance(QD_free, bie.QAlphaMatrix) else QD_free)
    sv = s.s if isinstance(s, DiluteScaling) else float(s)
    d = QD.shape[0]
    if d != 3:
        raise UnsupportedRegimeError("the dilute expansion is available in three dimensions only")
    xi = np.asarray(xi_sums)
    corr = np.einsum("lm,im,lj->ij", np.asarray(R0), xi, QD)
    return sv * QD - sv * sv * corr


def density_integrals(disc: bie.BoundaryDiscretization, mat: LameMaterial) -> np.ndarray:
    """Integrals of the free-space densities ``S_D^-1[e_i]``; row ``i`` is a d-vector."""
    S = bie.assemble_single_layer(disc, bie.FREE_SPACE, 0.0, mat)
    phi = bie.solve_density_for_constants(S)
    return np.einsum("k,ikj->ij", disc.weights, phi)


@dataclass(frozen=True)
class BallClosedForm:
    """Closed-form Q diagonal and frequency coefficients of a ball."""

    q_diag: float
    beta: tuple[float, float, float]
    omega_min_coeff: float
    omega_max_coeff: float
    single_layer_constant: float


def ball_closed_form(r: float, mat: LameMaterial) -> BallClosedForm:
    """Free-space quantities of a ball of radius ``r``.

    ``single_layer_constant`` is the value ``c`` with ``S[e_i] = c e_i`` on the
    sphere; frequency coefficients multiply ``sqrt(epsilon)``.
    """
    if not r > 0:
        raise ValueError("radius must be positive")
    require_convex(mat, 3)
    lam, mu, rho = mat.lam, mat.mu, mat.rho
    q = 12.0 * mu * math.pi * r * (2.0 * mu + lam) / (5.0 * mu + 2.0 * lam)
    wmin = math.sqrt(9.0 * mu * (2.0 * mu + lam) / ((5.0 * mu + 2.0 * lam) * rho * r * r))
    wmax = math.sqrt(15.0 * mu / (rho * r * r))
    s0 = -(5.0 * mu + 2.0 * lam) * r / (3.0 * mu * (2.0 * mu + lam))
    return BallClosedForm(q, (q, q, q), wmin, wmax, s0)


# ---------------------------------------------------------------------------
# Leading-order modes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ResonantMode:
    """Leading-order resonant mode of branch ``branch``.

    ``interior`` is the constant displacement inside the inclusion,
    ``h_i / |D|``.  When the eigenvalue is repeated, ``eigenspace`` holds an
    orthonormal basis of the whole eigenspace and ``degenerate`` is set.
    """

    branch: int
    beta: float
    interior: np.ndarray
    eigenspace: np.ndarray
    degenerate: bool
    measure: float
    alpha: QuasiMomentum | None

    def exterior_trace(self, disc: bie.BoundaryDiscretization) -> np.ndarray:
        """Boundary trace ``h_i / |D|`` at every node, shape (N, d)."""
        return np.tile(self.interior, (disc.n_nodes, 1))

    def exterior(self, disc, points, mat: LameMaterial, cfg: LatticeSumConfig | None = None) -> np.ndarray:
        """Leading-order exterior field from the static quasi-periodic layer potential."""
        return bie.exterior_field(disc, self.alpha, 0.0, self.exterior_trace(disc), points, mat, cfg)


def resonant_mode_leading(Q: bie.QAlphaMatrix, i: int, measure: float) -> ResonantMode:
    """Leading-order interior mode ``h_i / |D|`` for branch ``i`` (0-based)."""
    beta = np.asarray(Q.beta)
    if not 0 <= i < beta.size:
        raise IndexError(f"branch {i} out of range")
    tol = DEGENERACY_FACTOR * bie.HERMITIAN_TOL * max(1.0, float(np.max(np.abs(beta))))
    members = np.flatnonzero(np.abs(beta - beta[i]) <= tol)
    h = np.asarray(Q.h)
    return ResonantMode(
        branch=i,
        beta=float(beta[i]),
        interior=h[:, i] / measure,
        eigenspace=h[:, members],
        degenerate=members.size > 1,
        measure=measure,
        alpha=Q.alpha,
    )

"""Transmission-problem resonances located as singular points of a block integral system.

The displacement is sought as ``S[phi]`` inside the inclusion, with wavenumber
``sqrt(rho) tau omega``, and as ``S[psi]`` outside, with wavenumber
``sqrt(rho) omega``.  Continuity of displacement and the scaled traction
condition ``delta * traction_outside = traction_inside`` give

    [ S_in              -S_out                 ] [phi]
    [ -1/2 I + K*_in    -delta (1/2 I + K*_out)] [psi] = 0.

A subwavelength resonance is a frequency at which this matrix is singular.
The smallest singular value is swept over a frequency grid and each dip is
refined by golden-section search.  Nothing here uses the Q matrix to locate
dips; it is consulted only to report the predicted leading-order coefficients.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import bie, greens
from .errors import AccuracyError, PairingError, ResonantDenominatorError, WindowError
from .greens import LatticeSumConfig
from .materials import ContrastRegime, LameMaterial, as_momentum

logger = logging.getLogger(__name__)

DIP_THRESHOLD = 1e-3
GOLDEN_RTOL = 1e-6
GOLDEN_MAX_ITER = 40
DEFAULT_GRID_POINTS = 120
DEFAULT_WINDOW_MULTIPLIERS = (0.2, 20.0)
LIPSCHITZ_SLACK = 1e-8
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _contrast(contrast) -> tuple[float, float]:
    """``(delta, tau)`` from a :class:`ContrastRegime` or a pair; ``delta = 0`` is allowed."""
    if isinstance(contrast, ContrastRegime):
        return contrast.delta, contrast.tau
    delta, tau = (float(c) for c in contrast)
    if delta < 0 or not tau > 0 or not (math.isfinite(delta) and math.isfinite(tau)):
        raise ValueError(f"need delta >= 0 and tau > 0, got delta={delta}, tau={tau}")
    return delta, tau


@dataclass(frozen=True, eq=False)
class TransmissionSystem:
    """Assembled block system at one trial frequency.

    ``blocks`` is the 2x2 nested tuple of dN x dN matrices; ``matrix`` the
    assembled 2dN x 2dN array.
    """

    alpha: object
    omega: float
    delta: float
    tau: float
    blocks: tuple
    matrix: np.ndarray

    def __post_init__(self) -> None:
        n = self.blocks[0][0].shape[0]
        if any(b.shape != (n, n) for row in self.blocks for b in row) or self.matrix.shape != (2 * n, 2 * n):
            raise ValueError("inconsistent block sizes")
        if not np.all(np.isfinite(self.matrix)):
            raise AccuracyError("transmission matrix has non-finite entries")

    def singular_values(self) -> np.ndarray:
        """Singular values in ascending order."""
        return scipy.linalg.svdvals(self.matrix)[::-1]


def wavenumbers(omega: float, tau: float, mat: LameMaterial) -> tuple[float, float]:
    """Interior and exterior wavenumbers ``(sqrt(rho) tau omega, sqrt(rho) omega)``."""
    root = math.sqrt(mat.rho)
    return root * tau * omega, root * omega


def admissible_limit(alpha, tau: float, mat: LameMaterial) -> float:
    """Supremum of frequencies whose two wavenumbers lie in the low-frequency window."""
    kmax = greens.RESONANCE_SAFETY * greens.min_shifted_norm(alpha) * math.sqrt(mat.mu)
    return kmax / (math.sqrt(mat.rho) * max(tau, 1.0))


def _check_window(alpha, omega: float, tau: float, mat: LameMaterial) -> None:
    if not (math.isfinite(omega) and omega >= 0):
        raise WindowError(f"trial frequency must be finite and non-negative, got {omega}")
    for k in wavenumbers(omega, tau, mat):
        try:
            greens.check_wavenumber(alpha, k, mat)
        except ResonantDenominatorError as exc:
            raise WindowError(f"omega = {omega:.6g} is outside the admissible window: {exc}") from exc


def assemble_transmission(
    disc: bie.BoundaryDiscretization,
    alpha,
    omega: float,
    contrast,
    mat: LameMaterial,
    cfg: LatticeSumConfig | None = None,
) -> TransmissionSystem:
    """Block transmission matrix at frequency ``omega``.

    ``contrast`` is a :class:`ContrastRegime` or a ``(delta, tau)`` pair; the
    pair form admits ``delta = 0``.  Raises :class:`WindowError` when either
    wavenumber leaves the admissible window.
    """
    alpha = as_momentum(alpha)
    delta, tau = _contrast(contrast)
    _check_window(alpha, omega, tau, mat)
    k_in, k_out = wavenumbers(omega, tau, mat)
    S_in = bie.assemble_single_layer(disc, alpha, k_in, mat, cfg).entries
    K_in = bie.assemble_neumann_poincare(disc, alpha, k_in, mat, cfg).entries
    if k_out == k_in:
        S_out, K_out = S_in, K_in
    else:
        S_out = bie.assemble_single_layer(disc, alpha, k_out, mat, cfg).entries
        K_out = bie.assemble_neumann_poincare(disc, alpha, k_out, mat, cfg).entries
    eye = np.eye(disc.size)
    blocks = ((S_in, -S_out), (-0.5 * eye + K_in, -delta * (0.5 * eye + K_out)))
    matrix = np.block([[blocks[0][0], blocks[0][1]], [blocks[1][0], blocks[1][1]]])
    return TransmissionSystem(alpha, float(omega), delta, tau, blocks, matrix)


@dataclass(frozen=True)
class ResonanceEstimate:
    """A located dip of the smallest singular value.

    ``multiplicity`` counts the singular values below the dip threshold at
    ``omega_hat``, so a repeated resonance appears once with multiplicity > 1.
    """

    omega_hat: float
    dip_value: float
    bracket: tuple[float, float]
    converged: bool
    multiplicity: int = 1
    iterations: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.bracket
        if not lo <= self.omega_hat <= hi:
            raise ValueError("omega_hat lies outside its bracket")
        if self.dip_value < 0:
            raise ValueError("dip value must be non-negative")


def _jump_bounds(disc, alpha, grid, delta, tau, mat, cfg) -> np.ndarray:
    """Upper bounds on ``||A(w_{i+1}) - A(w_i)||_F`` from the k^2-series of the blocks.

    The smallest singular value is 1-Lipschitz in the spectral norm, so it may
    change between neighbouring grid points by at most this bound.
    """
    kmax = max(wavenumbers(float(grid[-1]), tau, mat))
    L = greens.series_order(alpha, kmax, mat, (cfg or LatticeSumConfig()).target_tol * bie.SERIES_TOL_FACTOR)
    S = bie.series_terms(disc, "single_layer", alpha, mat, cfg, L)
    K = bie.series_terms(disc, "neumann_poincare", alpha, mat, cfg, L)
    norm_in = np.array([math.hypot(np.linalg.norm(S[l]), np.linalg.norm(K[l])) for l in range(L + 1)])
    norm_out = np.array([math.hypot(np.linalg.norm(S[l]), delta * np.linalg.norm(K[l])) for l in range(L + 1)])
    l = np.arange(1, L + 1)
    w = np.asarray(grid, dtype=float)
    a, b = w[:-1, None], w[1:, None]
    growth = np.abs(b ** (2 * l) - a ** (2 * l))
    bound = growth @ ((mat.rho * tau * tau) ** l * norm_in[1:] + mat.rho**l * norm_out[1:])
    # the truncated tail of the series is below the tolerance used to pick L
    return bound + 2.0 * (cfg or LatticeSumConfig()).target_tol


def _golden(f, lo: float, hi: float, rtol: float, max_iter: int):
    c = hi - _INVPHI * (hi - lo)
    d = lo + _INVPHI * (hi - lo)
    fc, fd = f(c), f(d)
    it = 0
    while it < max_iter and (hi - lo) > rtol * max(abs(c), abs(d)):
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _INVPHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INVPHI * (hi - lo)
            fd = f(d)
        it += 1
    return (c, fc, it) if fc < fd else (d, fd, it)


def min_singular_sweep(
    disc: bie.BoundaryDiscretization,
    alpha,
    contrast,
    mat: LameMaterial,
    omega_grid,
    cfg: LatticeSumConfig | None = None,
    dip_threshold: float = DIP_THRESHOLD,
    workers: int | None = None,
) -> list[ResonanceEstimate]:
    """Locate and refine local minima of the smallest singular value over ``omega_grid``.

    Interior grid minima are refined by golden-section search on the
    neighbouring grid interval to relative accuracy 1e-6.  A dip is converged
    when its value is below ``dip_threshold`` times the median sweep value.
    An empty list means no dip was found.
    """
    alpha = as_momentum(alpha)
    delta, tau = _contrast(contrast)
    grid = np.asarray(omega_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3 or np.any(np.diff(grid) <= 0):
        raise ValueError("omega grid must be strictly increasing with at least 3 points")
    for w in (grid[0], grid[-1]):
        _check_window(alpha, float(w), tau, mat)

    def smallest(w: float) -> np.ndarray:
        return assemble_transmission(disc, alpha, w, (delta, tau), mat, cfg).singular_values()

    workers = workers or min(grid.size, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        spectra = list(pool.map(smallest, grid))
    sigma = np.array([s[0] for s in spectra])
    if not np.all(np.isfinite(sigma)):
        bad = grid[~np.isfinite(sigma)]
        logger.error("non-finite singular values at omega = %s", bad)
        raise AccuracyError(f"non-finite smallest singular value at {bad.size} grid points")
    bound = _jump_bounds(disc, alpha, grid, delta, tau, mat, cfg)
    jumps = np.abs(np.diff(sigma))
    violated = np.flatnonzero(jumps > bound * (1.0 + LIPSCHITZ_SLACK))
    if violated.size:
        i = int(violated[0])
        logger.error(
            "singular value jump %.3g exceeds bound %.3g between omega %.8g and %.8g; sweep=%s",
            jumps[i], bound[i], grid[i], grid[i + 1], sigma.tolist(),
        )
        raise AccuracyError(f"smallest singular value discontinuous between omega={grid[i]:.6g} and {grid[i + 1]:.6g}")

    level = dip_threshold * float(np.median(sigma))
    results = []
    for i in range(1, grid.size - 1):
        if not (sigma[i] < sigma[i - 1] and sigma[i] <= sigma[i + 1]):
            continue
        lo, hi = float(grid[i - 1]), float(grid[i + 1])
        w, value, iters = _golden(lambda x: smallest(x)[0], lo, hi, GOLDEN_RTOL, GOLDEN_MAX_ITER)
        if sigma[i] < value:
            w, value = float(grid[i]), float(sigma[i])
        spectrum = smallest(w)
        multiplicity = max(1, int(np.sum(spectrum < level)))
        results.append(ResonanceEstimate(float(w), float(max(value, 0.0)), (lo, hi), bool(value < level), multiplicity, iters))
        logger.info("dip at omega=%.10g value=%.3g multiplicity=%d", w, value, multiplicity)
    return results


@dataclass(frozen=True)
class AsymptoticsFit:
    """Log-log fit of located resonances against the contrast ``delta``.

    ``omega_hat[j][i]`` is branch ``i`` at ``deltas[j]``.  ``exponents`` and
    ``free_coefficients`` come from an unconstrained fit ``omega = C delta^p``;
    ``coefficients`` from the fit with ``p = 1/2`` fixed.  Each Q eigenvalue is
    matched to one branch (``matched[i]`` is the branch of ``beta[i]``) and its
    prediction ``sqrt(beta_i / (rho tau^2 |D|))`` is compared with that branch.
    Branches left unmatched are resonances outside the translational family,
    such as the rigid rotation of the inclusion.  ``predicted_rigid`` holds
    the coefficients of the rigid-motion problem (translations and rotations),
    matched to branches in ``matched_rigid`` when enough branches were found.
    """

    deltas: tuple[float, ...]
    tau: float
    omega_hat: tuple[tuple[float, ...], ...]
    exponents: tuple[float, ...]
    free_coefficients: tuple[float, ...]
    residuals: tuple[float, ...]
    coefficients: tuple[float, ...]
    beta: tuple[float, ...]
    predicted: tuple[float, ...]
    matched: tuple[int, ...]
    predicted_rigid: tuple[float, ...] = ()
    matched_rigid: tuple[int, ...] = ()

    @property
    def relative_errors(self) -> tuple[float, ...]:
        return tuple(abs(self.coefficients[b] - p) / p for b, p in zip(self.matched, self.predicted))

    @property
    def relative_errors_rigid(self) -> tuple[float, ...]:
        return tuple(abs(self.coefficients[b] - p) / p for b, p in zip(self.matched_rigid, self.predicted_rigid))

    @property
    def unmatched(self) -> tuple[int, ...]:
        return tuple(i for i in range(len(self.coefficients)) if i not in self.matched)

    def passed(self, exponent_tol: float = 0.02, coefficient_rtol: float = 0.01) -> bool:
        ok_exp = all(abs(p - 0.5) <= exponent_tol for p in self.exponents)
        return ok_exp and all(e <= coefficient_rtol for e in self.relative_errors)


def default_grid(delta: float, tau: float, disc, mat: LameMaterial, alpha, n: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    """Logarithmic frequency grid scaled by ``sqrt(mu delta / (rho |D|)) / tau``.

    The scale uses only the geometry and material, never the Q matrix.  The
    grid is clipped to the admissible window.
    """
    scale = math.sqrt(mat.mu * delta / (mat.rho * bie.inclusion_measure(disc))) / tau
    lo, hi = (m * scale for m in DEFAULT_WINDOW_MULTIPLIERS)
    hi = min(hi, 0.95 * admissible_limit(alpha, tau, mat))
    if not lo < hi:
        raise WindowError("contrast too large for the admissible low-frequency window")
    return np.geomspace(lo, hi, n)


def verify_asymptotics(
    disc: bie.BoundaryDiscretization,
    alpha,
    mat: LameMaterial,
    tau: float,
    delta_list,
    cfg: LatticeSumConfig | None = None,
    grids=None,
    dip_threshold: float = DIP_THRESHOLD,
    workers: int | None = None,
) -> AsymptoticsFit:
    """Fit the located resonances against ``delta`` branch by branch.

    Each converged dip contributes as many branches as its multiplicity.  The
    branch count must agree across all ``delta`` values and cover the Q
    eigenvalues, otherwise :class:`PairingError` is raised.
    """
    alpha = as_momentum(alpha)
    deltas = tuple(sorted((float(x) for x in delta_list), reverse=True))
    if len(deltas) < 2 or deltas[0] / deltas[-1] < 10.0 * (1.0 - 1e-12):
        raise ValueError("delta_list needs at least two values spanning one decade")
    if any(x <= 0 for x in deltas):
        raise ValueError("delta values must be positive")
    rows = []
    for j, delta in enumerate(deltas):
        grid = default_grid(delta, tau, disc, mat, alpha) if grids is None else np.asarray(grids[j])
        dips = min_singular_sweep(disc, alpha, (delta, tau), mat, grid, cfg, dip_threshold, workers)
        branches = sorted(w for r in dips if r.converged for w in [r.omega_hat] * r.multiplicity)
        logger.info("delta=%.3g: resonances %s", delta, branches)
        rows.append(tuple(branches))
    counts = {len(r) for r in rows}
    if len(counts) != 1 or 0 in counts:
        raise PairingError(f"resonance counts differ across delta values: {[len(r) for r in rows]}")
    logd = np.log(deltas)
    W = np.log(np.array(rows))
    exps, frees, res, coefs = [], [], [], []
    for i in range(W.shape[1]):
        (p, c), resid, *_ = np.polyfit(logd, W[:, i], 1, full=True)
        exps.append(float(p))
        frees.append(float(math.exp(c)))
        res.append(float(math.sqrt(resid[0] / len(deltas))) if resid.size else 0.0)
        coefs.append(float(math.exp(np.mean(W[:, i] - 0.5 * logd))))
    Q = bie.compute_Q_alpha(disc, alpha, mat, cfg)
    measure = bie.inclusion_measure(disc)
    beta = tuple(float(b) for b in Q.beta)
    predicted = tuple(math.sqrt(b / (mat.rho * tau * tau * measure)) for b in beta)
    matched = _match(predicted, coefs)
    lam, _ = bie.compute_rigid_Q(disc, alpha, mat, cfg).eigen()
    predicted_rigid = tuple(float(math.sqrt(x / mat.rho) / tau) for x in lam)
    matched_rigid = _match(predicted_rigid, coefs) if len(coefs) >= len(predicted_rigid) else ()
    return AsymptoticsFit(
        deltas, float(tau), tuple(rows), tuple(exps), tuple(frees), tuple(res), tuple(coefs), beta, predicted, matched,
        predicted_rigid, matched_rigid,
    )


def _match(predicted, coefficients) -> tuple[int, ...]:
    """Assign each prediction to a distinct branch, closest relative distance first."""
    if len(coefficients) < len(predicted):
        raise PairingError(f"found {len(coefficients)} branches but Q has {len(predicted)} eigenvalues")
    pairs = sorted(
        (abs(c - p) / p, i, b) for i, p in enumerate(predicted) for b, c in enumerate(coefficients)
    )
    assigned: dict[int, int] = {}
    used: set[int] = set()
    for _, i, b in pairs:
        if i not in assigned and b not in used:
            assigned[i] = b
            used.add(b)
    return tuple(assigned[i] for i in range(len(predicted)))

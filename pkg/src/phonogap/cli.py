"""Command-line interface: configuration, orchestration and serialization.

Commands
--------
``bands --config FILE --out DIR [--figure]``
    Band sweep along a Brillouin path; writes ``bands.csv`` and
    ``gap_report.json`` (and ``bands.png`` with ``--figure``).
``ball-check --config FILE``
    Compares the discrete free-space operators on a sphere with the closed forms.
``oracle --config FILE``
    Fits located transmission resonances against the contrast.
``qmatrix --config FILE --alpha a1,a2[,a3]``
    Q matrix, its eigenvalues and leading frequencies at one quasi-momentum.

Every output begins with a header recording the code version, a SHA-256 of
the resolved configuration and the resolved configuration itself, so all
defaults actually used are on record.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, bie, greens, oracle, spectrum
from .errors import ContrastError, GeometryError, MaterialError, PairingError, PhonogapError, SweepError
from .materials import ContrastRegime, LameMaterial, QuasiMomentum, require_convex

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_PHYSICS = 3
EXIT_SWEEP = 4
EXIT_BALL = 5
EXIT_FIT = 6

CSV_FLOAT = ".17g"
BALL_TOLERANCES = {"single_layer": 1e-6, "q_matrix": 1e-5, "omega": 1e-5}
MIN_ORACLE_DELTAS = 3

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC2 = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}


def _closed(properties: dict, required=()) -> dict:
    return {"type": "object", "properties": properties, "required": list(required), "additionalProperties": False}


def _shape_case(name: str, properties: dict, required) -> dict:
    properties = {"type": {"const": name}, "in_cell": {"type": "boolean"}, **properties}
    return {
        "if": {"properties": {"type": {"const": name}}, "required": ["type"]},
        "then": _closed(properties, ["type", *required]),
    }


_SHAPE_DEFAULTS = {
    "circle": {"center": [0.5, 0.5]},
    "ellipse": {"center": [0.5, 0.5], "angle": 0.0},
    "curve": {"cos": [], "sin": []},
    "sphere": {"center": [0.5, 0.5, 0.5]},
}


CONFIG_SCHEMA = _closed(
    {
        "dimension": {"enum": [2, 3]},
        "material": _closed({"lambda": _NUM, "mu": _NUM, "rho": _NUM}),
        "contrast": _closed({"delta": _POS, "epsilon": _POS, "tau": _POS}, ["delta"]),
        "shape": {
            "type": "object",
            "required": ["type"],
            "properties": {"type": {"enum": ["circle", "ellipse", "curve", "sphere"]}},
            "allOf": [
                _shape_case("circle", {"radius": _POS, "center": _VEC2}, ["radius"]),
                _shape_case("ellipse", {"a": _POS, "b": _POS, "center": _VEC2, "angle": _NUM}, ["a", "b"]),
                _shape_case(
                    "curve",
                    {
                        "center": _VEC2,
                        "cos": {"type": "array", "items": _VEC2},
                        "sin": {"type": "array", "items": _VEC2},
                    },
                    ["center"],
                ),
                _shape_case("sphere", {"radius": _POS, "center": _VEC3}, ["radius"]),
            ],
        },
        "resolution": {"type": "integer", "minimum": 1},
        "path": _closed({"vertices": {"type": "string"}, "samples": {"type": "integer", "minimum": 1}}),
        "alphas": {"type": "array", "minItems": 1, "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 3}},
        "alpha_min": _POS,
        "lattice_sum": _closed(
            {
                "split_parameter": _POS,
                "fourier_truncation": {"type": "integer", "minimum": 1},
                "spatial_truncation": {"type": "integer", "minimum": 1},
                "target_tol": _POS,
                "verify": {"type": "boolean"},
            }
        ),
        "bandgap": _closed({"eta": {"anyOf": [_POS, {"type": "null"}]}, "omega_sharp": {"anyOf": [_POS, {"type": "null"}]}}),
        "oracle": _closed(
            {
                "deltas": {"type": "array", "items": _POS, "minItems": 1},
                "tau": _POS,
                "alpha": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 3},
                "grid_points": {"type": "integer", "minimum": 3},
            }
        ),
        "ball_check": _closed({"single_layer": _POS, "q_matrix": _POS, "omega": _POS}),
        "output": _closed({"dir": {"type": "string"}, "figure": {"type": "boolean"}}),
        "workers": {"type": "integer", "minimum": 1},
    },
    ["dimension"],
)


class ConfigError(PhonogapError, ValueError):
    """Configuration violates the schema; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _defaults(d: int) -> dict:
    shape = {"type": "circle", "radius": 0.25, "center": [0.5, 0.5]}
    if d == 3:
        shape = {"type": "sphere", "radius": 0.25, "center": [0.5, 0.5, 0.5]}
    return {
        "dimension": d,
        "material": {"lambda": 1.0, "mu": 1.0, "rho": 1.0},
        "contrast": {"delta": 1e-4},
        "shape": shape,
        "resolution": bie.DEFAULT_CURVE_NODES if d == 2 else bie.DEFAULT_SPHERE_ORDER,
        "path": {"vertices": "G-X-M-G" if d == 2 else "G-X-M-R-G", "samples": spectrum.DEFAULT_SAMPLES[d]},
        "alpha_min": 1e-2,
        "lattice_sum": {
            "split_parameter": greens.DEFAULT_SPLIT,
            "fourier_truncation": greens.DEFAULT_FOURIER_TRUNCATION,
            "spatial_truncation": greens.DEFAULT_SPATIAL_TRUNCATION,
            "target_tol": greens.DEFAULT_TARGET_TOL,
            "verify": False,
        },
        "bandgap": {"eta": None, "omega_sharp": None},
        "oracle": {
            "deltas": [1e-3, 3e-4, 1e-4],
            "tau": 1.0,
            "alpha": [math.pi] * d,
            "grid_points": oracle.DEFAULT_GRID_POINTS,
        },
        "ball_check": dict(BALL_TOLERANCES),
        "output": {"dir": ".", "figure": False},
        "workers": 1,
    }


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key == "shape" or not (isinstance(value, dict) and isinstance(out.get(key), dict)):
            out[key] = copy.deepcopy(value)
        else:
            out[key] = _merge(out[key], value)
    return out


def _schema_error(errors: list[jsonschema.ValidationError]) -> ConfigError:
    """Report unknown keys first, since a misspelt key also triggers a missing-key error."""
    unknown = [e for e in errors if e.validator == "additionalProperties"]
    best = unknown[0] if unknown else jsonschema.exceptions.best_match(errors)
    path = ".".join(str(p) for p in best.absolute_path)
    return ConfigError(path, best.message)


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated run configuration.

    ``resolved`` is the configuration with every default filled in (output
    paths excluded) and ``digest`` its SHA-256 over canonical JSON.
    """

    dimension: int
    material: LameMaterial
    contrast: ContrastRegime
    shape: object
    disc: bie.BoundaryDiscretization
    path: tuple[QuasiMomentum, ...]
    lattice: greens.LatticeSumConfig
    eta: float | None
    omega_sharp: float | None
    oracle_deltas: tuple[float, ...]
    oracle_tau: float
    oracle_alpha: tuple[float, ...]
    oracle_grid_points: int
    ball_tolerances: dict
    output_dir: str
    figure: bool
    workers: int
    resolved: dict
    digest: str

    def header_lines(self) -> list[str]:
        return [
            f"phonogap {__version__}",
            f"config_sha256 {self.digest}",
            "config " + _canonical(self.resolved),
        ]

    def header_dict(self) -> dict:
        return {"tool": "phonogap", "version": __version__, "config_sha256": self.digest, "config": self.resolved}


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _build_shape(spec: dict, d: int):
    kind = spec["type"]
    if (kind == "sphere") != (d == 3):
        raise ConfigError("shape.type", f"shape {kind!r} does not match dimension {d}")
    if kind == "circle":
        return bie.circle(spec["radius"], tuple(spec.get("center", (0.5, 0.5))))
    if kind == "ellipse":
        return bie.ellipse(spec["a"], spec["b"], tuple(spec.get("center", (0.5, 0.5))), spec.get("angle", 0.0))
    if kind == "curve":
        return bie.FourierCurve(tuple(spec["center"]), spec.get("cos", []), spec.get("sin", []))
    return bie.Sphere(spec["radius"], tuple(spec.get("center", (0.5, 0.5, 0.5))))


def parse_config(text: str) -> RunConfig:
    """Validate a JSON configuration and fill in defaults.

    Raises
    ------
    ConfigError
        Malformed JSON, unknown keys or wrongly typed values (exit code 2).
    MaterialError, ContrastError, GeometryError
        Physically invalid parameters (exit code 3).
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("", "configuration must be a JSON object")
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        raise _schema_error(errors)
    d = raw["dimension"]
    if "alphas" in raw and "path" in raw:
        raise ConfigError("alphas", "give either an explicit alpha list or a path, not both")
    contrast = raw.get("contrast", {})
    if "epsilon" in contrast and "tau" in contrast:
        raise ConfigError("contrast", "give either epsilon or tau, not both")
    cfg = _merge(_defaults(d), raw)
    if "alphas" in raw:
        del cfg["path"]
    cfg["shape"] = {"in_cell": True, **_SHAPE_DEFAULTS[cfg["shape"]["type"]], **cfg["shape"]}
    if "epsilon" not in cfg["contrast"] and "tau" not in cfg["contrast"]:
        cfg["contrast"]["tau"] = 1.0
    for i, a in enumerate(cfg.get("alphas", [])):
        if len(a) != d:
            raise ConfigError(f"alphas.{i}", f"expected {d} components")
    if len(cfg["oracle"]["alpha"]) != d:
        raise ConfigError("oracle.alpha", f"expected {d} components")

    m = cfg["material"]
    material = LameMaterial(m["lambda"], m["mu"], m["rho"])
    require_convex(material, d)
    c = cfg["contrast"]
    regime = ContrastRegime(c["delta"], c["epsilon"]) if "epsilon" in c else ContrastRegime.from_delta_tau(c["delta"], c["tau"])
    shape = _build_shape(cfg["shape"], d)
    n = cfg["resolution"]
    disc = bie.discretize_boundary(shape, n if d == 2 else bie.sphere_node_count(n), cfg["shape"]["in_cell"])
    alpha_min = cfg["alpha_min"]
    try:
        if "alphas" in cfg:
            path = tuple(QuasiMomentum(tuple(a), alpha_min) for a in cfg["alphas"])
        else:
            path = tuple(spectrum.parse_path(cfg["path"]["vertices"], d, cfg["path"]["samples"], alpha_min))
        oracle_alpha = QuasiMomentum(tuple(cfg["oracle"]["alpha"]), alpha_min)
    except ValueError as exc:
        raise ConfigError("alphas" if "alphas" in cfg else "path", str(exc)) from exc
    try:
        lattice = greens.LatticeSumConfig(**cfg["lattice_sum"])
    except ValueError as exc:
        raise ConfigError("lattice_sum", str(exc)) from exc

    output = cfg.pop("output")
    resolved = json.loads(_canonical(cfg))
    digest = hashlib.sha256(_canonical(resolved).encode()).hexdigest()
    o = cfg["oracle"]
    return RunConfig(
        dimension=d,
        material=material,
        contrast=regime,
        shape=shape,
        disc=disc,
        path=path,
        lattice=lattice,
        eta=cfg["bandgap"]["eta"],
        omega_sharp=cfg["bandgap"]["omega_sharp"],
        oracle_deltas=tuple(o["deltas"]),
        oracle_tau=o["tau"],
        oracle_alpha=oracle_alpha.alpha,
        oracle_grid_points=o["grid_points"],
        ball_tolerances=dict(cfg["ball_check"]),
        output_dir=output["dir"],
        figure=output["figure"],
        workers=cfg["workers"],
        resolved=resolved,
        digest=digest,
    )


def _f(x: float) -> str:
    return format(float(x), CSV_FLOAT)


# ---------------------------------------------------------------------------
# bands
# ---------------------------------------------------------------------------


def band_csv(cfg: RunConfig, diagram: spectrum.BandDiagram) -> str:
    """Band table as text: '#' header lines, then one row per sample and branch."""
    buf = io.StringIO()
    for line in cfg.header_lines():
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"alpha_{i + 1}" for i in range(cfg.dimension)] + ["branch", "beta", "omega_leading", "flag"])
    for s in diagram.samples:
        for b, (beta, omega) in enumerate(zip(s.beta, s.omega), start=1):
            writer.writerow([_f(a) for a in s.alpha.alpha] + [b, _f(beta), _f(omega), s.flag])
    return buf.getvalue()


def gap_report_dict(cfg: RunConfig, report: spectrum.BandgapReport) -> dict:
    return {
        "header": cfg.header_dict(),
        "omega_star": report.omega_star,
        "eta": report.eta,
        "lower_edge": report.lower_edge,
        "omega_sharp": report.omega_sharp,
        "interval": list(report.gap) if report.gap else None,
        "epsilon_note": report.epsilon_note,
        "omega_star_rigid": report.omega_star_rigid,
        "rigid_note": report.rigid_note,
    }


def _write_figure(path: Path, diagram: spectrum.BandDiagram, report: spectrum.BandgapReport) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    alphas = np.array([s.alpha.alpha for s in diagram.samples])
    x = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(alphas, axis=0), axis=1))])
    omega = np.array([s.omega for s in diagram.samples], dtype=float)
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for b in range(omega.shape[1]):
        ax.plot(x, omega[:, b], "-", color="C0", lw=1.5, label="leading order" if b == 0 else None)
    rigid = [s.omega_rigid for s in diagram.samples]
    if all(len(r) for r in rigid if r) and any(rigid):
        m = max(len(r) for r in rigid)
        R = np.array([r if r else (np.nan,) * m for r in rigid], dtype=float)
        for b in range(m):
            ax.plot(x, R[:, b], "--", color="C1", lw=1.0, label="rigid motions" if b == 0 else None)
    if report.gap:
        ax.axhspan(*report.gap, color="0.85", label="gap estimate")
    ax.axhline(report.lower_edge, color="0.4", lw=0.8, ls=":")
    ax.set_xlim(x[0], x[-1])
    ax.set_xlabel("path length in the Brillouin zone")
    ax.set_ylabel(r"$\omega$")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata={"Software": None})
    plt.close(fig)


def _require_in_cell(cfg: RunConfig) -> None:
    if not cfg.disc.cell_check:
        raise GeometryError("this command needs an inclusion inside the unit cell (shape.in_cell = true)")


def run_bands(cfg: RunConfig, out_dir: str | Path, figure: bool | None = None) -> dict:
    """Sweep, write ``bands.csv`` and ``gap_report.json``; returns the written paths."""
    _require_in_cell(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    diagram = spectrum.sweep_brillouin(list(cfg.path), cfg.disc, cfg.material, cfg.contrast, cfg.lattice, cfg.workers)
    report = spectrum.bandgap_estimate(diagram, cfg.eta, cfg.omega_sharp)
    paths = {"csv": out / "bands.csv", "report": out / "gap_report.json"}
    paths["csv"].write_bytes(band_csv(cfg, diagram).encode("utf-8"))
    paths["report"].write_text(json.dumps(gap_report_dict(cfg, report), indent=2) + "\n", encoding="utf-8")
    if cfg.figure if figure is None else figure:
        paths["figure"] = out / "bands.png"
        _write_figure(paths["figure"], diagram, report)
    return paths


# ---------------------------------------------------------------------------
# ball-check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckLine:
    name: str
    computed: float
    expected: float
    rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.rel_error <= self.tol

    def render(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name}: computed={self.computed:.12g} expected={self.expected:.12g} "
            f"rel_error={self.rel_error:.3g} tol={self.tol:.3g}"
        )


def run_ball_check(cfg: RunConfig) -> list[CheckLine]:
    """Discrete free-space sphere quantities against their closed forms."""
    if cfg.dimension != 3 or not isinstance(cfg.shape, bie.Sphere):
        raise ConfigError("shape", "ball-check needs a three-dimensional sphere")
    r = cfg.shape.radius
    disc = bie.discretize_boundary(bie.Sphere(r, cfg.shape.center), cfg.disc.n_nodes, cell_check=False)
    mat = cfg.material
    ref = spectrum.ball_closed_form(r, mat)
    tol = cfg.ball_tolerances
    lines = []
    S = bie.assemble_single_layer(disc, bie.FREE_SPACE, 0.0, mat)
    for i in range(3):
        e = np.zeros((disc.n_nodes, 3))
        e[:, i] = 1.0
        v = S.apply(e).real
        err = float(np.max(np.linalg.norm(v - ref.single_layer_constant * e, axis=1)) / abs(ref.single_layer_constant))
        lines.append(CheckLine(f"single_layer_e{i + 1}", float(np.mean(v[:, i])), ref.single_layer_constant, err, tol["single_layer"]))
    Q = bie.compute_Q_alpha(disc, bie.FREE_SPACE, mat)
    qerr = float(np.max(np.abs(Q.entries - ref.q_diag * np.eye(3))) / ref.q_diag)
    lines.append(CheckLine("q_matrix", float(np.mean(Q.beta)), ref.q_diag, qerr, tol["q_matrix"]))
    measure = bie.inclusion_measure(disc)
    wmin = float(math.sqrt(Q.beta[0] / (mat.rho * measure)))
    lines.append(CheckLine("omega_min_coeff", wmin, ref.omega_min_coeff, abs(wmin - ref.omega_min_coeff) / ref.omega_min_coeff, tol["omega"]))
    wmax = float(bie.compute_rigid_Q(disc, bie.FREE_SPACE, mat).frequencies(mat.rho, 1.0)[-1])
    lines.append(CheckLine("omega_max_coeff", wmax, ref.omega_max_coeff, abs(wmax - ref.omega_max_coeff) / ref.omega_max_coeff, tol["omega"]))
    return lines


# ---------------------------------------------------------------------------
# oracle and qmatrix
# ---------------------------------------------------------------------------


def run_oracle(cfg: RunConfig) -> tuple[oracle.AsymptoticsFit, list[str]]:
    """Asymptotic fit of the transmission resonances and a rendered report."""
    _require_in_cell(cfg)
    deltas = cfg.oracle_deltas
    if len(deltas) < MIN_ORACLE_DELTAS or max(deltas) / min(deltas) < 10.0 * (1 - 1e-12):
        raise ValueError(f"the fit needs at least {MIN_ORACLE_DELTAS} delta values spanning a decade, got {list(deltas)}")
    tau = cfg.oracle_tau
    alpha = cfg.oracle_alpha
    grids = [
        oracle.default_grid(dl, tau, cfg.disc, cfg.material, alpha, cfg.oracle_grid_points)
        for dl in sorted(deltas, reverse=True)
    ]
    fit = oracle.verify_asymptotics(cfg.disc, alpha, cfg.material, tau, deltas, cfg.lattice, grids, workers=cfg.workers)
    lines = [f"alpha {' '.join(_f(a) for a in alpha)}", f"tau {_f(tau)}"]
    lines.append("delta," + ",".join(f"omega_hat_{i + 1}" for i in range(len(fit.coefficients))))
    for dl, row in zip(fit.deltas, fit.omega_hat):
        lines.append(",".join([_f(dl)] + [_f(w) for w in row]))
    for i, (p, c, res) in enumerate(zip(fit.exponents, fit.coefficients, fit.residuals)):
        lines.append(f"branch {i + 1}: exponent={p:.6f} coefficient={c:.8g} residual={res:.3g}")
    for i, (b, pred, br, err) in enumerate(zip(fit.beta, fit.predicted, fit.matched, fit.relative_errors)):
        lines.append(f"beta_{i + 1}={b:.12g} predicted={pred:.8g} branch={br + 1} rel_error={err:.3g}")
    for i, (pred, br, err) in enumerate(zip(fit.predicted_rigid, fit.matched_rigid, fit.relative_errors_rigid)):
        lines.append(f"rigid_{i + 1} predicted={pred:.8g} branch={br + 1} rel_error={err:.3g}")
    if fit.unmatched:
        lines.append("branches outside the translational family: " + ",".join(str(b + 1) for b in fit.unmatched))
    exp_ok = all(abs(p - 0.5) <= 0.02 for p in fit.exponents)
    coef_ok = all(e <= 0.01 for e in fit.relative_errors)
    lines.append(f"{'PASS' if exp_ok else 'FAIL'} exponent within 0.5 +- 0.02")
    lines.append(f"{'PASS' if coef_ok else 'FAIL'} coefficients within 1% of sqrt(beta / (rho tau^2 |D|))")
    return fit, lines


def run_qmatrix(cfg: RunConfig, alpha: tuple[float, ...]) -> dict:
    """Q matrix, eigen-decomposition and frequencies at one quasi-momentum."""
    _require_in_cell(cfg)
    a = QuasiMomentum(alpha, cfg.path[0].alpha_min if cfg.path else 1e-2)
    Q = bie.compute_Q_alpha(cfg.disc, a, cfg.material, cfg.lattice)
    measure = bie.inclusion_measure(cfg.disc)
    omega = spectrum.leading_frequencies(Q, cfg.material.rho, measure, cfg.contrast.epsilon)
    rigid = bie.compute_rigid_Q(cfg.disc, a, cfg.material, cfg.lattice)
    pair = lambda z: [float(z.real), float(z.imag)]  # noqa: E731
    return {
        "header": cfg.header_dict(),
        "alpha": list(a.alpha),
        "Q": [[pair(z) for z in row] for row in Q.entries],
        "hermitian_defect": Q.asymmetry,
        "beta": [float(b) for b in Q.beta],
        "eigenvectors": [[pair(z) for z in row] for row in Q.h],
        "omega_leading": [float(w) for w in omega],
        "measure": measure,
        "omega_rigid": [float(w) for w in rigid.frequencies(cfg.material.rho, cfg.contrast.epsilon)],
        "translation_rotation_coupling": rigid.coupling(),
    }


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phonogap", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"phonogap {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    b = sub.add_parser("bands", help="band sweep and gap report")
    b.add_argument("--config", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--figure", action="store_true", help="also render bands.png")
    c = sub.add_parser("ball-check", help="closed-form checks on a sphere")
    c.add_argument("--config", required=True)
    o = sub.add_parser("oracle", help="asymptotic fit of transmission resonances")
    o.add_argument("--config", required=True)
    q = sub.add_parser("qmatrix", help="Q matrix at one quasi-momentum")
    q.add_argument("--config", required=True)
    q.add_argument("--alpha", required=True, help="comma-separated components")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out = sys.stdout
    try:
        cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (MaterialError, ContrastError, GeometryError) as exc:
        print(f"physics error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS

    try:
        return _dispatch(args, cfg, out)
    except (MaterialError, ContrastError, GeometryError) as exc:
        print(f"physics error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except PhonogapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args, cfg: RunConfig, out) -> int:
    if args.command == "bands":
        try:
            paths = run_bands(cfg, args.out, figure=args.figure or None)
        except SweepError as exc:
            print(f"sweep failed: {exc}", file=sys.stderr)
            return EXIT_SWEEP
        for key, path in paths.items():
            print(f"{key}: {path}", file=out)
        return EXIT_OK

    if args.command == "ball-check":
        try:
            lines = run_ball_check(cfg)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_SCHEMA
        for line in cfg.header_lines():
            print(f"# {line}", file=out)
        for line in lines:
            print(line.render(), file=out)
        return EXIT_OK if all(line.passed for line in lines) else EXIT_BALL

    if args.command == "oracle":
        try:
            fit, lines = run_oracle(cfg)
        except GeometryError:
            raise
        except (ValueError, PairingError, PhonogapError) as exc:
            print(f"fit failed: {exc}", file=sys.stderr)
            return EXIT_FIT
        for line in cfg.header_lines():
            print(f"# {line}", file=out)
        for line in lines:
            print(line, file=out)
        return EXIT_OK if fit.passed() else EXIT_FIT

    try:
        alpha = tuple(float(a) for a in args.alpha.split(","))
        if len(alpha) != cfg.dimension:
            raise ValueError(f"expected {cfg.dimension} components")
        result = run_qmatrix(cfg, alpha)
    except ValueError as exc:
        print(f"invalid --alpha: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    print(json.dumps(result, indent=2), file=out)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())

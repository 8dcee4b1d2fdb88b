import csv
import io
import json
import math

import pytest

from phonogap import __version__, cli, spectrum
from phonogap.errors import SweepError

SMALL_2D = {"dimension": 2, "resolution": 48, "path": {"samples": 8}}
UNIT_BALL = {"dimension": 3, "shape": {"type": "sphere", "radius": 1.0, "center": [0, 0, 0], "in_cell": False}}


def _write(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return str(path)


def _run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestConfig:
    def test_defaults_filled_in(self):
        cfg = cli.parse_config('{"dimension": 2}')
        r = cfg.resolved
        assert r["material"] == {"lambda": 1.0, "mu": 1.0, "rho": 1.0}
        assert r["shape"]["type"] == "circle" and r["shape"]["radius"] == 0.25
        assert r["contrast"] == {"delta": 1e-4, "tau": 1.0}
        assert r["path"] == {"vertices": "G-X-M-G", "samples": 32}
        assert r["lattice_sum"]["split_parameter"] == 3.0
        assert "output" not in r
        assert len(cfg.path) == 34

    def test_header_lines(self):
        cfg = cli.parse_config('{"dimension": 2}')
        version, digest, echoed = cfg.header_lines()
        assert version == f"phonogap {__version__}"
        assert digest == f"config_sha256 {cfg.digest}" and len(cfg.digest) == 64
        assert json.loads(echoed.removeprefix("config ")) == cfg.resolved

    def test_digest_ignores_output_location(self):
        a = cli.parse_config(json.dumps({"dimension": 2, "output": {"dir": "a"}}))
        b = cli.parse_config(json.dumps({"dimension": 2, "output": {"dir": "b", "figure": True}}))
        c = cli.parse_config(json.dumps({"dimension": 2, "contrast": {"delta": 1e-3}}))
        assert a.digest == b.digest != c.digest

    def test_explicit_defaults_hash_like_omitted_ones(self):
        a = cli.parse_config('{"dimension": 2}')
        b = cli.parse_config(json.dumps({"dimension": 2, "material": {"mu": 1.0}, "resolution": 128}))
        assert a.digest == b.digest

    @pytest.mark.parametrize(
        "cfg, where",
        [
            ({"dimension": 2, "material": {"lamda": 1.0}}, "lamda"),
            ({"dimension": 2, "shape": {"type": "circle", "radus": 0.2}}, "radus"),
            ({"dimension": 4}, "dimension"),
            ({"dimension": 2, "resolution": "many"}, "resolution"),
        ],
    )
    def test_schema_rejections_name_the_field(self, cfg, where):
        with pytest.raises(cli.ConfigError) as info:
            cli.parse_config(json.dumps(cfg))
        assert where in str(info.value)

    def test_epsilon_and_tau_exclusive(self):
        with pytest.raises(cli.ConfigError):
            cli.parse_config(json.dumps({"dimension": 2, "contrast": {"delta": 1e-4, "tau": 1.0, "epsilon": 1e-4}}))

    def test_explicit_alpha_list(self):
        cfg = cli.parse_config(json.dumps({"dimension": 2, "alphas": [[1.0, 0.5], [0.0, 0.0]]}))
        assert [a.alpha for a in cfg.path] == [(1.0, 0.5), (0.0, 0.0)]


class TestExitCodes:
    def test_schema_error_is_2(self, tmp_path, capsys):
        code, _, err = _run(capsys, "qmatrix", "--config", _write(tmp_path, {"dimension": 2, "material": {"lamda": 1}}), "--alpha", "1,1")
        assert code == cli.EXIT_SCHEMA
        assert "lamda" in err

    def test_invalid_json_is_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{dimension: 2", encoding="utf-8")
        assert _run(capsys, "bands", "--config", str(path), "--out", str(tmp_path))[0] == cli.EXIT_SCHEMA

    def test_nonconvex_material_is_3(self, tmp_path, capsys):
        cfg = {"dimension": 3, "material": {"lambda": -1.0, "mu": 1.0}}
        code, _, err = _run(capsys, "ball-check", "--config", _write(tmp_path, cfg))
        assert code == cli.EXIT_PHYSICS
        assert "convexity" in err

    def test_inclusion_outside_cell_is_3(self, tmp_path, capsys):
        cfg = {"dimension": 2, "shape": {"type": "circle", "radius": 0.6}}
        assert _run(capsys, "bands", "--config", _write(tmp_path, cfg), "--out", str(tmp_path))[0] == cli.EXIT_PHYSICS

    def test_sweep_failure_is_4(self, tmp_path, capsys, monkeypatch):
        def broken(*args, **kwargs):
            raise SweepError("5 of 10 quasi-momentum samples failed")

        monkeypatch.setattr(spectrum, "sweep_brillouin", broken)
        code, _, err = _run(capsys, "bands", "--config", _write(tmp_path, SMALL_2D), "--out", str(tmp_path / "o"))
        assert code == cli.EXIT_SWEEP
        assert "sweep failed" in err

    def test_ball_check_negative_control_is_5(self, tmp_path, capsys):
        """A coarse grid carries errors near 1e-9, so a 1e-12 tolerance must fail."""
        cfg = {**UNIT_BALL, "resolution": 2, "ball_check": {"single_layer": 1e-12, "q_matrix": 1e-12, "omega": 1e-12}}
        code, out, _ = _run(capsys, "ball-check", "--config", _write(tmp_path, cfg))
        assert code == cli.EXIT_BALL
        assert "FAIL single_layer_e1" in out

    def test_ball_check_needs_sphere(self, tmp_path, capsys):
        assert _run(capsys, "ball-check", "--config", _write(tmp_path, {"dimension": 2}))[0] == cli.EXIT_SCHEMA

    def test_single_delta_oracle_is_6(self, tmp_path, capsys):
        cfg = {**SMALL_2D, "oracle": {"deltas": [1e-4]}}
        code, _, err = _run(capsys, "oracle", "--config", _write(tmp_path, cfg))
        assert code == cli.EXIT_FIT
        assert "spanning a decade" in err

    def test_bad_alpha_argument_is_2(self, tmp_path, capsys):
        assert _run(capsys, "qmatrix", "--config", _write(tmp_path, SMALL_2D), "--alpha", "1,2,3")[0] == cli.EXIT_SCHEMA


class TestBands:
    def test_outputs_deterministic_and_well_formed(self, tmp_path, capsys):
        config = _write(tmp_path, SMALL_2D)
        for name in ("a", "b"):
            assert _run(capsys, "bands", "--config", config, "--out", str(tmp_path / name))[0] == cli.EXIT_OK
        raw = (tmp_path / "a" / "bands.csv").read_bytes()
        assert raw == (tmp_path / "b" / "bands.csv").read_bytes()
        assert b"\r" not in raw
        text = raw.decode("utf-8")
        header = [line for line in text.splitlines() if line.startswith("#")]
        assert header[0] == f"# phonogap {__version__}"
        rows = list(csv.DictReader(io.StringIO("\n".join(l for l in text.splitlines() if not l.startswith("#")))))
        assert len(rows) == 2 * 10
        assert {r["flag"] for r in rows} == {"computed", "analytic"}

        report = json.loads((tmp_path / "a" / "gap_report.json").read_text())
        tops = [float(r["omega_leading"]) for r in rows if r["branch"] == "2" and r["flag"] == "computed"]
        assert report["omega_star"] == max(tops)
        assert report["lower_edge"] == report["omega_star"] + report["eta"]
        assert report["header"]["config_sha256"] in header[1]

    def test_floats_round_trip(self, tmp_path, capsys):
        _run(capsys, "bands", "--config", _write(tmp_path, SMALL_2D), "--out", str(tmp_path))
        lines = (tmp_path / "bands.csv").read_text().splitlines()
        row = next(csv.reader([lines[4]]))
        value = float(row[3])
        assert format(value, ".17g") == row[3]

    def test_figure_is_opt_in(self, tmp_path, capsys):
        config = _write(tmp_path, SMALL_2D)
        _run(capsys, "bands", "--config", config, "--out", str(tmp_path / "plain"))
        assert not (tmp_path / "plain" / "bands.png").exists()
        _run(capsys, "bands", "--config", config, "--out", str(tmp_path / "fig"), "--figure")
        assert (tmp_path / "fig" / "bands.png").read_bytes()[:4] == b"\x89PNG"


class TestQmatrix:
    def test_report(self, tmp_path, capsys):
        code, out, _ = _run(capsys, "qmatrix", "--config", _write(tmp_path, SMALL_2D), "--alpha", f"{math.pi},{math.pi}")
        assert code == cli.EXIT_OK
        result = json.loads(out)
        assert result["hermitian_defect"] <= 1e-8
        assert 0 < result["beta"][0] <= result["beta"][1]
        assert len(result["omega_rigid"]) == 3
        assert result["translation_rotation_coupling"] < 1e-8
        assert result["header"]["version"] == __version__

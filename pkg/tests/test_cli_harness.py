import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracsde import registry
from fracsde.cli import _floats, _probes, main
from fracsde.config import ConfigError, ExperimentConfig, load_config
from fracsde.convergence import ConvergenceReport, fit_slope, fit_slope_with_residual, format_value
from fracsde.experiments import run_experiment


def _cfg(**kw):
    doc = {"version": 1, "kind": "bracket", "seed": 1, "paths": 20, "eps_schedule": [2.0**-4, 2.0**-5, 2.0**-6]}
    doc.update(kw)
    return ExperimentConfig.from_dict(doc)


class TestFitSlope:
    def test_power_law(self):
        assert fit_slope([(s, s * s) for s in (0.5, 0.25, 0.125, 0.0625)]) == pytest.approx(2.0, abs=1e-12)

    def test_constant(self):
        assert fit_slope([(s, 3.0) for s in (1.0, 0.5, 0.25)]) == pytest.approx(0.0, abs=1e-12)

    def test_noisy_square_root(self):
        g = np.random.default_rng(0)
        eps = 2.0 ** -np.arange(4, 12)
        stat = eps**0.5 * np.exp(0.05 * g.standard_normal(len(eps)))
        slope, resid = fit_slope_with_residual(zip(eps, stat))
        # slope standard error = resid / sd(log eps) / sqrt(n)
        se = resid / np.std(np.log(eps)) / np.sqrt(len(eps))
        assert abs(slope - 0.5) < 3 * se + 1e-12
        assert 0 < resid < 0.1

    @given(st.floats(-3, 3), st.floats(0.1, 10))
    def test_exact_power_recovered(self, p, c):
        pts = [(s, c * s**p) for s in (1.0, 0.5, 0.25, 0.125)]
        assert fit_slope(pts) == pytest.approx(p, abs=1e-9)

    @pytest.mark.parametrize("pts", [[(1, 1), (0.5, 0.5)], [(1, 1), (0.5, 0.0), (0.25, 1)], [(1, 1), (-0.5, 1), (0.25, 1)]])
    def test_domain(self, pts):
        with pytest.raises(ValueError):
            fit_slope(pts)


class TestConfig:
    def test_hurst_out_of_range(self):
        with pytest.raises(ConfigError, match="hurst"):
            _cfg(hurst=0.4)

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            _cfg(colour="red")

    def test_unknown_coefficient(self):
        with pytest.raises(ConfigError, match="known"):
            _cfg(kind="bsde", coefficients={"g": "tan"})

    def test_unknown_bound_coefficient(self):
        with pytest.raises(ConfigError):
            _cfg(kind="doss_check", doss={"bound_g": ["nope"]})

    def test_schedule_must_decrease(self):
        with pytest.raises(ConfigError):
            _cfg(eps_schedule=[0.1, 0.2, 0.05])

    def test_overrides_merge(self):
        cfg = _cfg(grid={"ratio": 8, "batch": 4}).with_overrides(grid={"ratio": 16}, seed=None, paths=7)
        assert cfg.grid == {"ratio": 16, "batch": 4}
        assert cfg.seed == 1 and cfg.paths == 7

    def test_digest_tracks_content(self):
        assert _cfg().digest() == _cfg().digest()
        assert _cfg().digest() != _cfg(seed=2).digest()

    def test_load_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{nope")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_shipped_configs_validate(self):
        from pathlib import Path

        files = sorted((Path(__file__).resolve().parents[1] / "configs").glob("c*.json"))
        assert len(files) == 10
        for f in files:
            assert load_config(f).name == f.stem


class TestRegistry:
    def test_unknown(self):
        with pytest.raises(registry.UnknownCoefficient):
            registry.lookup("g", "tan")

    def test_fresh_objects(self):
        assert registry.lookup("g", "sin") is not registry.lookup("g", "sin")

    def test_names(self):
        assert "identity_clamped" in registry.names("g")
        assert set(registry.TABLES) == {"b", "sigma", "f", "g", "phi", "field1", "field2"}

    def test_reference_values(self):
        assert registry.reference_value("heat_cos", 1.0, 0.0) == pytest.approx(np.exp(-0.5))
        assert registry.reference_value("heat_cos_linear", 1.0, 0.0, 0.3) == pytest.approx(np.exp(-0.2))
        with pytest.raises(registry.UnknownCoefficient):
            registry.reference_value("nope", 1.0, 0.0)

    def test_phi_bounds_dominate(self):
        x = np.linspace(-5, 5, 101)[:, None]
        for name in registry.names("phi"):
            fn, bound = registry.lookup("phi", name)
            assert np.max(np.abs(fn(x))) <= bound


class TestReport:
    def test_format(self):
        assert format_value(0.1) == "0.1"
        assert format_value(np.float64(1 / 3)) == repr(1 / 3)
        assert format_value(True) == "true" and format_value(np.int64(4)) == "4"

    def test_csv_quoting_and_line_ends(self):
        rep = ConvergenceReport("x", ["a", "b"], [("p,q", 1.5), ('say "hi"', 2)])
        text = rep.to_csv()
        assert text == 'a,b\r\n"p,q",1.5\r\n"say ""hi""",2\r\n'
        assert list(csv.reader(io.StringIO(text))) == [["a", "b"], ["p,q", "1.5"], ['say "hi"', "2"]]

    def test_write_and_json(self, tmp_path):
        rep = run_experiment(_cfg(), out=tmp_path / "run")
        body = json.loads((tmp_path / "run.json").read_text())
        assert body["meta"]["config_sha256"] == _cfg().digest()
        assert (tmp_path / "run.csv").read_bytes() == rep.to_csv().encode()
        assert "config_sha256" not in rep.to_csv()

    def test_bracket_slope(self):
        rep = run_experiment(_cfg(paths=100, hurst=0.75))
        assert rep.slope == pytest.approx(0.5, abs=0.15)
        assert rep.header == ["eps", "delta", "median_sup_residual", "slope"]

    def test_csv_byte_stable(self):
        assert run_experiment(_cfg()).to_csv() == run_experiment(_cfg(), threads=3).to_csv()


class TestMain:
    def test_parsers(self):
        assert _floats("2^-4, 0.5") == [0.0625, 0.5]
        assert _probes("1:0,0.5:-1") == [[1.0, 0.0], [0.5, -1.0]]

    def test_doss_json(self, capsys):
        assert main(["doss", "--g", "identity", "--y", "1", "--z", "1"]) == 0
        jet = json.loads(capsys.readouterr().out)
        assert jet["alpha"] == pytest.approx(np.e, rel=1e-10)
        assert set(jet) >= {"alpha", "d1", "d2", "d3", "g", "y", "z"}

    def test_schema_error_exit(self, capsys):
        assert main(["bracket", "--hurst", "0.4", "--paths", "5"]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "config"

    def test_unknown_name_exit(self, capsys):
        assert main(["doss", "--g", "tan"]) == 2
        assert "unknown" in json.loads(capsys.readouterr().err)["message"]

    def test_config_file_required(self, capsys):
        assert main(["bsde"]) == 2

    def test_failed_check_exit(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        doc = dict(_cfg().raw, checks={"final_max": 1e-9})
        cfg.write_text(json.dumps(doc))
        assert main(["bracket", "--config", str(cfg)]) == 1
        assert json.loads(capsys.readouterr().err)["failures"] == ["final_median"]

    def test_fbm_csv(self, tmp_path):
        out = tmp_path / "paths.csv"
        assert main(["fbm", "--hurst", "0.7", "--grid-n", "8", "--paths", "2", "--out", str(out)]) == 0
        raw = out.read_bytes()
        assert raw.startswith(b"path_id,t,value\r\n")
        rows = list(csv.reader(io.StringIO(raw.decode())))
        assert len(rows) == 1 + 2 * 9
        assert rows[1] == ["0", "0.0", "0.0"]

    def test_convergence_table(self, capsys):
        assert main(["convergence", "--config", "configs/c02_zero_bracket.json", "--seed", "3"]) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0] == "level,scale,delta,median,p90,slope"
        assert len(out.splitlines()) == 6

    def test_json_format(self, capsys):
        assert main(["ito-check", "--case", "half_square", "--paths", "10", "--eps-schedule", "2^-4,2^-5,2^-6", "--format", "json"]) == 0
        body = json.loads(capsys.readouterr().out)
        assert body["kind"] == "ito_check" and len(body["levels"]) == 3

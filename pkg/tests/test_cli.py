import json
from pathlib import Path

import pytest

from statereduction.cli import main
from statereduction.config import parse_config, parse_override
from statereduction.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(args, capsys):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def load(path):
    return json.loads(Path(path).read_text())


def strip_meta(report):
    return {k: v for k, v in report.items() if k != "meta"}


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


SG = """kind = "sterngerlach"
seed = 5
[sterngerlach]
c_plus = 0.7071067811865476
c_minus = 0.7071067811865476
n_trials = 100000
"""


class TestConfigParsing:
    @pytest.mark.parametrize("name", ["screening", "sterngerlach", "squid_spectrum", "squid_evolve"])
    def test_shipped_examples_parse(self, name):
        data, settings = parse_config((CONFIGS / f"{name}.toml").read_text())
        assert data["kind"] in ("screening", "sterngerlach", "squid-spectrum", "squid-evolve")
        assert settings

    def test_unknown_key_located(self):
        with pytest.raises(ConfigError) as info:
            parse_config(SG + "bogus = 1\n")
        assert info.value.key == "sterngerlach.bogus"
        assert info.value.line == 7 and info.value.column == 1

    def test_syntax_error_located(self):
        with pytest.raises(ConfigError) as info:
            parse_config('kind = "screening"\n[screening\n')
        assert info.value.line == 2

    @pytest.mark.parametrize("text,key", [
        ('kind = "nonsense"\n', "kind"),
        ('kind = "sterngerlach"\n[sterngerlach]\nc_plus = 1\n', "sterngerlach"),
        ('kind = "sterngerlach"\n[sterngerlach]\nc_plus = "a"\nc_minus = 0\n', "sterngerlach.c_plus"),
        ('kind = "squid-spectrum"\n[squid]\nbeta = 1.2\ncritical_current = 0.1\n', "squid"),
        ('kind = "squid-spectrum"\n[squid]\nbeta = 1.2\nlevels = 2.5\n', "squid.levels"),
        ('kind = "screening"\n[screening]\n[tolerances]\nfoo = 1e-3\n', "tolerances.foo"),
        ('kind = "screening"\n', "kind"),
    ])
    def test_schema_errors_name_key(self, text, key):
        with pytest.raises(ConfigError) as info:
            parse_config(text)
        assert info.value.key == key

    def test_complex_amplitudes(self):
        _, s = parse_config(SG.replace("c_minus = 0.7071067811865476", "c_minus = [0.0, 0.7071067811865476]"))
        assert s["sterngerlach"]["c_minus"] == 0.7071067811865476j

    def test_override(self):
        assert parse_override("covariance=1e-9") == ("covariance", 1e-9)
        for bad in ("covariance", "nope=1", "covariance=x", "covariance=-1"):
            with pytest.raises(ConfigError):
                parse_override(bad)


class TestRun:
    def test_sterngerlach_report(self, tmp_path, capsys):
        cfg = write(tmp_path, SG)
        code, _, _ = run(["run", "--config", cfg, "--out", tmp_path / "o"], capsys)
        assert code == 0
        rep = load(tmp_path / "o" / "report.json")
        assert rep["seed"] == 5
        tally = rep["results"]["tally"]
        assert tally["n_trials"] == 100000 and all(tally["within_3sigma"])
        assert abs(tally["frequencies"][0] - 0.5) <= 0.0047
        assert all(c["passed"] for c in rep["checks"].values())
        assert rep["tolerances"]["covariance"] == 1e-8
        lines = (tmp_path / "o" / "trials.csv").read_text().splitlines()
        assert lines[0] == "trial,seed,j,strip,grain" and len(lines) == 100001
        assert lines[1].split(",")[1] == "5"

    def test_byte_identical_modulo_timestamp(self, tmp_path, capsys):
        cfg = write(tmp_path, SG.replace("n_trials = 100000", "n_trials = 2000"))
        for d in ("a", "b"):
            assert run(["run", "--config", cfg, "--out", tmp_path / d, "--jobs", "1" if d == "a" else "2"],
                       capsys)[0] == 0
        a, b = load(tmp_path / "a" / "report.json"), load(tmp_path / "b" / "report.json")
        assert "timestamp" in a["meta"]
        assert json.dumps(strip_meta(a), sort_keys=True) == json.dumps(strip_meta(b), sort_keys=True)
        assert (tmp_path / "a" / "trials.csv").read_bytes() == (tmp_path / "b" / "trials.csv").read_bytes()

    def test_seed_flag_wins(self, tmp_path, capsys):
        cfg = write(tmp_path, SG.replace("n_trials = 100000", "n_trials = 10"))
        run(["run", "--config", cfg, "--out", tmp_path / "o", "--seed", "99"], capsys)
        assert load(tmp_path / "o" / "report.json")["seed"] == 99

    def test_tolerance_override_embedded(self, tmp_path, capsys):
        cfg = write(tmp_path, SG.replace("n_trials = 100000", "n_trials = 10"))
        run(["run", "--config", cfg, "--out", tmp_path / "o", "--tolerance", "covariance=1e-9"], capsys)
        assert load(tmp_path / "o" / "report.json")["tolerances"]["covariance"] == 1e-9

    @pytest.mark.parametrize("name,artifact", [("screening", "weights.csv"),
                                               ("squid_evolve", "trajectory.csv")])
    def test_other_kinds(self, tmp_path, capsys, name, artifact):
        code, _, _ = run(["run", "--config", CONFIGS / f"{name}.toml", "--out", tmp_path], capsys)
        assert code == 0
        assert (tmp_path / artifact).exists()
        rep = load(tmp_path / "report.json")
        assert all(c["passed"] for c in rep["checks"].values())

    def test_scatter_screen_reports_no_reduction(self, tmp_path, capsys):
        cfg = write(tmp_path, 'kind = "screening"\nseed = 1\n[screening]\nbuilder = "scatter"\n')
        assert run(["run", "--config", cfg, "--out", tmp_path], capsys)[0] == 0
        assert load(tmp_path / "report.json")["results"]["reduced"] is False

    def test_squid_spectrum_sweep_minimum(self, tmp_path, capsys):
        code, _, _ = run(["run", "--config", CONFIGS / "squid_spectrum.toml", "--out", tmp_path], capsys)
        assert code == 0
        rep = load(tmp_path / "report.json")
        assert rep["results"]["sweep"]["min_splitting_at"] == pytest.approx(0.5)
        header = (tmp_path / "sweep.csv").read_text().splitlines()[0]
        assert header == "phi_ext,phi1,phi2,vbar,E1,E2,splitting,beta"

    def test_sweep_subcommand(self, tmp_path, capsys):
        code, _, _ = run(["sweep", "--config", CONFIGS / "squid_spectrum.toml", "--out", tmp_path,
                          "--jobs", "2"], capsys)
        assert code == 0 and (tmp_path / "sweep.csv").exists()
        code, _, err = run(["sweep", "--config", CONFIGS / "screening.toml", "--out", tmp_path], capsys)
        assert code == 2 and json.loads(err)["key"] == "squid.sweep"


class TestErrors:
    def test_malformed_config(self, tmp_path, capsys):
        cfg = write(tmp_path, SG + "wrong_key = 3\n")
        code, _, err = run(["run", "--config", cfg, "--out", tmp_path / "o"], capsys)
        assert code != 0
        rec = json.loads(err)
        assert rec["key"] == "sterngerlach.wrong_key" and rec["line"] == 7
        assert load(tmp_path / "o" / "error.json") == rec

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(["run", "--config", tmp_path / "none.toml", "--out", tmp_path], capsys)
        assert code == 2 and json.loads(err)["error"] == "config"

    def test_amplitudes_not_normalized(self, tmp_path, capsys):
        cfg = write(tmp_path, SG.replace("c_minus = 0.7071067811865476", "c_minus = 0.5"))
        code, _, err = run(["run", "--config", cfg, "--out", tmp_path], capsys)
        assert code == 2 and json.loads(err)["key"] == "sterngerlach.c_plus"

    def test_bad_model_parameters(self, tmp_path, capsys):
        cfg = write(tmp_path, SG + "ancilla_levels = 7\n")
        code, _, err = run(["run", "--config", cfg, "--out", tmp_path], capsys)
        assert code == 2 and "multiple of 6" in json.loads(err)["message"]

    def test_single_well_grid_error(self, tmp_path, capsys):
        cfg = write(tmp_path, 'kind = "squid-evolve"\n[squid]\nbeta = 0.5\n')
        code, _, err = run(["run", "--config", cfg, "--out", tmp_path], capsys)
        assert code == 1 and json.loads(err)["error"] == "NoDoubleWell"


class TestVerify:
    def test_fresh_defaults_pass(self, tmp_path, capsys):
        code, out, _ = run(["verify", "--out", tmp_path, "--instances", "20"], capsys)
        assert code == 0 and json.loads(out)["passed"]
        rep = load(tmp_path / "verify.json")
        assert rep["seed"] == 0 and rep["tolerances"]["covariance"] == 1e-8

    def test_injected_nonunitary_coupling(self, tmp_path, capsys):
        code, out, _ = run(["verify", "--out", tmp_path, "--instances", "5", "--inject-nonunitary"],
                           capsys)
        assert code == 3
        suites = {s["name"]: s for s in load(tmp_path / "verify.json")["suites"]}
        cov = suites["reduction.unitary_covariance"]
        assert not cov["passed"] and cov["details"]["error"] == "ContractViolation"
        others = [s["passed"] for n, s in suites.items() if n != "reduction.unitary_covariance"]
        assert all(others)

    def test_hundred_instance_reduction_suite(self, tmp_path, capsys):
        code, _, _ = run(["verify", "--out", tmp_path, "--instances", "100"], capsys)
        assert code == 0
        suites = {s["name"]: s for s in load(tmp_path / "verify.json")["suites"]}
        assert suites["reduction.unitary_covariance"]["max_deviation"] < 1e-8
        assert suites["reduction.weights_and_resummation"]["instances"] == 100

    def test_hidden_flag_not_in_help(self, capsys):
        with pytest.raises(SystemExit):
            main(["verify", "--help"])
        assert "inject" not in capsys.readouterr().out

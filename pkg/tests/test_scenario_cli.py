import numpy as np
import pytest

from ksprofile import experiments as ex
from ksprofile.cli import EXIT_INADMISSIBLE, EXIT_OK, EXIT_PARSE, EXIT_SOLVER, EXIT_VALIDATION, main
from ksprofile.errors import ParseError, ValidationError
from ksprofile.report import Verdict
from ksprofile.scenario import KEYS, parse_scenario

BOUNDED = """\
n = 3
m = 2
q = 1
eta = 0.5
grid.N = 96
grid.grading = 1
init.mass = 2
init.width = 0.3
solver.t_end = 0.3
solver.record_every = 0.01
"""


class TestParse:
    def test_minimal_defaults(self):
        sc = parse_scenario("n=3\nm=1\nq=1\ngrid.N=256\n")
        assert sc["grid.N"] == 256
        assert sc.params.theta == 12 and sc.params.beta == 2.5
        assert sc.params.M == sc["init.mass"]
        assert sc["analysis.alpha"] == (6.5,)
        assert sc["analysis.r_cut"] == pytest.approx(0.2)
        assert set(dict(sc.items())) == set(KEYS)
        assert sc.solver_config().blowup_threshold == 1e10

    def test_comments_and_spacing(self):
        sc = parse_scenario("# header\n\n  m = 2   # inline\nsolver.t_end=0.5\n")
        assert sc.params.m == 2 and sc["solver.t_end"] == 0.5

    def test_alpha_below_critical(self):
        with pytest.raises(ValidationError, match="critical_alpha"):
            parse_scenario("n=3\nm=1\nq=1\nanalysis.alpha=3\nanalysis.check_bounds=true\n")

    @pytest.mark.parametrize("text,key", [
        ("n=3\nn=3\n", "n"),
        ("bogus=1\n", "bogus"),
        ("grid.N=abc\n", "grid.N"),
        ("grid.N=2.5\n", "grid.N"),
        ("m=\n", "m"),
        ("kinetics.eta_floor=maybe\n", "kinetics.eta_floor"),
    ])
    def test_parse_errors(self, text, key):
        with pytest.raises(ParseError) as err:
            parse_scenario(text)
        assert err.value.key == key and err.value.line is not None

    def test_missing_equals(self):
        with pytest.raises(ParseError) as err:
            parse_scenario("n=3\njunk\n")
        assert err.value.line == 2

    @pytest.mark.parametrize("text", [
        "mode=regularized\nmode.epsilon=1.5\n",
        "mode=twin\nmode.perturb=w\n",
        "mode=sweep\n",
        "mode=other\n",
        "grid.N=4\n",
        "grid.grading=1.5\n",
        "init.mass=0\n",
        "n=1\n",
        "analysis.r_in=0.5\nanalysis.r_out=0.4\n",
        "solver.dt_init=1\nsolver.dt_max=0.1\n",
        "kinetics=table\n",
    ])
    def test_validation_errors(self, text):
        with pytest.raises(ValidationError):
            parse_scenario(text)

    def test_with_values(self):
        sc = parse_scenario("n=3\nm=2\ninit.mass=3\n")
        sub = sc.with_values(init__width=0.2, q=1.5)
        assert sub["init.width"] == 0.2 and sub.params.q == 1.5 and sub["init.mass"] == 3
        # defaults resolved from other keys are recomputed
        assert sub["analysis.alpha"] != sc["analysis.alpha"]


def cfg(tmp_path, text, name="s.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestExponentsCommand:
    def test_classical(self, tmp_path, capsys):
        assert main(["exponents", "--config", cfg(tmp_path, "n=3\nm=1\nq=1\n")]) == EXIT_OK
        out = capsys.readouterr().out.splitlines()
        assert "critical_alpha=6" in out
        assert "lower_bound_alpha=2" in out
        assert "admissible_ks=true" in out

    def test_inadmissible(self, tmp_path, capsys):
        code = main(["exponents", "--config", cfg(tmp_path, "n=3\nm=1\nq=0.5\n")])
        assert code == EXIT_INADMISSIBLE
        assert "admissible_ks=false" in capsys.readouterr().out.splitlines()

    def test_planar(self, tmp_path, capsys):
        main(["exponents", "--config", cfg(tmp_path, "n=2\nm=1.5\nq=1.5\n")])
        assert "critical_alpha=2" in capsys.readouterr().out.splitlines()


class TestExitCodes:
    def test_parse(self, tmp_path):
        assert main(["exponents", "--config", cfg(tmp_path, "n=3\nn=3\n")]) == EXIT_PARSE
        assert main(["exponents", "--config", str(tmp_path / "missing.cfg")]) == EXIT_PARSE

    def test_validation(self, tmp_path):
        text = "analysis.alpha=3\nanalysis.check_bounds=true\n"
        assert main(["simulate", "--config", cfg(tmp_path, text), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION
        assert main(["simulate", "--config", cfg(tmp_path, "mode=twin\n"), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION

    def test_solver_failure(self, tmp_path):
        text = BOUNDED + "solver.max_steps=3\n"
        assert main(["simulate", "--config", cfg(tmp_path, text), "--out", str(tmp_path / "o")]) == EXIT_SOLVER

    def test_usage(self):
        with pytest.raises(SystemExit) as err:
            main(["nonsense"])
        assert err.value.code == 2
        assert main(["verify", "--seed", "-1"]) == 2


class TestSimulate:
    def test_bounded_outputs(self, tmp_path):
        out = tmp_path / "run"
        assert main(["simulate", "--config", cfg(tmp_path, BOUNDED), "--out", str(out)]) == EXIT_OK
        report = (out / "report.txt").read_text()
        assert "verdict=Completed" in report
        assert "scenario.solver.dt_init=1e-06" in report
        assert (out / "series.csv").read_text().startswith("t,sup_u,mass,")
        snaps = sorted((out / "snapshots").glob("snapshot_*.csv"))
        assert snaps and snaps[0].read_text().startswith("r,u,v\n")
        assert not (out / "profile.csv").exists()

    def test_deterministic(self, tmp_path):
        path = cfg(tmp_path, BOUNDED)
        for name in ("a", "b"):
            assert main(["simulate", "--config", path, "--out", str(tmp_path / name)]) == EXIT_OK
        for f in ("report.txt", "series.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_blowup_outputs(self, tmp_path):
        out = tmp_path / "bu"
        assert main(["simulate", "--config", cfg(tmp_path, "n=3\nm=1\nq=1\n"), "--out", str(out)]) == EXIT_OK
        report = dict(line.split("=", 1) for line in (out / "report.txt").read_text().splitlines())
        assert report["verdict"] == "BlownUp"
        assert float(report["blowup.t_low"]) < float(report["blowup.t_high"])
        assert "fit.p_star" in report
        assert (out / "profile.csv").read_text().startswith("r,U,V\n")
        assert "fit.p_star=" in (out / "fit.txt").read_text()

    def test_regularized(self, tmp_path):
        out = tmp_path / "reg"
        text = "n=3\nm=1\nq=1\ngrid.N=128\nsolver.t_end=0.02\nmode=regularized\nmode.epsilon=1e-9\n"
        assert main(["simulate", "--config", cfg(tmp_path, text), "--out", str(out)]) == EXIT_OK
        report = dict(line.split("=", 1) for line in (out / "report.txt").read_text().splitlines())
        assert float(report["agreement.max_deviation"]) < 1e-8


class TestTwin:
    def test_zero_delta(self):
        res = ex.twin(parse_scenario(BOUNDED), 0.0)
        assert np.all(res.diff == 0) and np.all(res.diff_half == 0)

    def test_halving(self):
        res = ex.twin(parse_scenario(BOUNDED), 1e-6)
        assert res.verdict is Verdict.COMPLETED
        assert abs(res.C_hat_half - res.C_hat) <= 0.2 * abs(res.C_hat)
        ratio = res.diff_half / res.diff
        assert np.all((ratio > 0.4) & (ratio < 0.6))

    def test_v_perturbation(self):
        delta = 1e-6
        res = ex.twin(parse_scenario(BOUNDED), delta, "v")
        assert res.diff_u[0] == 0 and res.diff_u[-1] > 0
        bound = res.envelope * delta * np.exp(res.C_hat * res.times)
        assert np.all(res.diff_u <= bound * (1 + 1e-12))

    def test_cli(self, tmp_path):
        out = tmp_path / "twin"
        assert main(["twin", "--config", cfg(tmp_path, BOUNDED + "mode=twin\n"), "--out", str(out)]) == EXIT_OK
        assert (out / "twin.csv").read_text().startswith("t,diff,diff_half,diff_u,half_ratio\n")


class TestSweep:
    TEXT = BOUNDED.replace("solver.t_end = 0.3", "solver.t_end = 0.05") + \
        "mode=sweep\nsweep.mass=1,3\nsweep.width=0.2,0.4\n"

    def test_rows_and_order(self, tmp_path):
        rows = list(ex.sweep(parse_scenario(self.TEXT)))
        assert [r["cell"] for r in rows] == [0, 1, 2, 3]
        assert [(r["init.mass"], r["init.width"]) for r in rows] == [(1, 0.2), (1, 0.4), (3, 0.2), (3, 0.4)]
        assert all(r["verdict"] == "Completed" for r in rows)

    def test_parallel_matches_serial(self, tmp_path):
        path = cfg(tmp_path, self.TEXT)
        assert main(["sweep", "--config", path, "--out", str(tmp_path / "s1")]) == EXIT_OK
        assert main(["sweep", "--config", path, "--out", str(tmp_path / "s2"), "--jobs", "2"]) == EXIT_OK
        a = (tmp_path / "s1" / "sweep.csv").read_text()
        assert a == (tmp_path / "s2" / "sweep.csv").read_text()
        assert len(a.splitlines()) == 5
        assert (tmp_path / "s1" / "cell_0003" / "report.txt").exists()

    def test_cell_failure_recorded(self):
        text = self.TEXT + "solver.max_steps=2\n"
        rows = list(ex.sweep(parse_scenario(text)))
        assert len(rows) == 4 and all(r["verdict"] == "Failed" for r in rows)

"""End-to-end command tests: solve/evaluate/compare/stability/quantizer.

Everything runs in-process through cli.main so exit codes and stdout are
observable without spawning subprocesses.
"""

import json
import os
import shutil

import numpy as np
import pytest

from robustbell import artifacts, cli, gp
from robustbell.artifacts import load_artifact
from robustbell.config import load_config
from robustbell.numerics import gaussian_rule
from robustbell.solver import solve

CFG_TEXT = """\
[problem]
kind = portfolio
r = 0.02
dt = 0.05
n_steps = 3
alpha = 0.1
gamma = 4
mu0 = 0.10
sigma0 = 0.08

[solver]
n_pilot = 20
n_qmc = 12
n_adaptive = 0
quad_points = 6
seed = 11

[evaluation]
n_paths = 200
strategies = adaptive_robust, constant
constant_u = 0.5

[output]
directory = art
"""

HEDGING_CFG_TEXT = """\
[problem]
kind = hedging
r = 0.0
dt = 0.1
n_steps = 3
alpha = 0.1
strike = 100
mu0 = 0.12
sigma0 = 0.40

[solver]
n_pilot = 12
n_qmc = 10
quad_points = 6
seed = 3
"""


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """One config file and one solved artifact shared by the module."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "portfolio.cfg"
    cfg.write_text(CFG_TEXT)
    hcfg = root / "hedging.cfg"
    hcfg.write_text(HEDGING_CFG_TEXT)
    art = root / "art"
    assert cli.main(["solve", "--config", str(cfg), "--out", str(art)]) == 0
    return {"root": root, "cfg": cfg, "hcfg": hcfg, "art": art}


def _artifact_bytes(art) -> dict:
    out = {"bundle.json": (art / "bundle.json").read_bytes()}
    for name in sorted(os.listdir(art / "steps")):
        out[name] = (art / "steps" / name).read_bytes()
    return out


class TestSolve:
    def test_artifact_layout(self, ws):
        art = ws["art"]
        assert (art / "manifest.json").is_file()
        assert (art / "bundle.json").is_file()
        names = sorted(os.listdir(art / "steps"))
        assert names == ["step_0001.json", "step_0002.json"]  # interior steps of a 3-step horizon
        manifest = json.loads((art / "manifest.json").read_text())
        assert manifest["version"] == "0.1.0"
        assert int(manifest["seed"]) == 11
        assert manifest["mode"] == "adaptive"
        assert manifest["timings"]["solve_seconds"] > 0

    def test_reload_matches_in_process_solve(self, ws):
        bundle, _ = load_artifact(str(ws["art"]))
        rc = load_config(str(ws["cfg"]))
        fresh = solve(rc.spec, rc.solver)
        assert bundle.spec == fresh.spec
        assert bundle.mode == fresh.mode == "adaptive"
        rows = [[0.06, 0.08], [0.10, 0.08], [0.14, 0.10]]
        for got, want in zip(bundle.steps, fresh.steps):
            assert got.k == want.k
            assert np.array_equal(got.raw_values, want.raw_values)
            assert np.array_equal(
                gp.predict_mean(got.value_surrogate, rows),
                gp.predict_mean(want.value_surrogate, rows),
            )
            assert np.array_equal(
                gp.predict_mean(got.control_surrogate, rows),
                gp.predict_mean(want.control_surrogate, rows),
            )

    def test_rerun_is_byte_identical(self, ws):
        art2 = ws["root"] / "art_rerun"
        assert cli.main(["solve", "--config", str(ws["cfg"]), "--out", str(art2)]) == 0
        assert _artifact_bytes(ws["art"]) == _artifact_bytes(art2)

    def test_seed_override_changes_solution_reproducibly(self, ws):
        a = ws["root"] / "art_seed99a"
        b = ws["root"] / "art_seed99b"
        assert cli.main(["solve", "--config", str(ws["cfg"]), "--out", str(a), "--seed", "99"]) == 0
        assert cli.main(["solve", "--config", str(ws["cfg"]), "--out", str(b), "--seed", "99"]) == 0
        assert _artifact_bytes(a) == _artifact_bytes(b)
        assert _artifact_bytes(a) != _artifact_bytes(ws["art"])
        manifest = json.loads((a / "manifest.json").read_text())
        assert int(manifest["seed"]) == 99

    def test_threads_env_same_bytes(self, ws, monkeypatch):
        monkeypatch.setenv("ROBUSTBELL_THREADS", "2")
        art2 = ws["root"] / "art_threads"
        assert cli.main(["solve", "--config", str(ws["cfg"]), "--out", str(art2)]) == 0
        assert _artifact_bytes(ws["art"]) == _artifact_bytes(art2)

    def test_threads_env_invalid(self, ws, monkeypatch, capsys):
        monkeypatch.setenv("ROBUSTBELL_THREADS", "two")
        art2 = ws["root"] / "art_badenv"
        assert cli.main(["solve", "--config", str(ws["cfg"]), "--out", str(art2)]) == 1
        assert "ROBUSTBELL_THREADS" in capsys.readouterr().err

    def test_diagnostics_flag(self, ws):
        art2 = ws["root"] / "art_diag"
        assert cli.main(["solve", "--config", str(ws["cfg"]), "--out", str(art2), "--diagnostics"]) == 0
        diag = art2 / "diagnostics"
        assert sorted(os.listdir(diag)) == ["design_step_01.csv", "design_step_02.csv"]
        header = (diag / "design_step_01.csv").read_text().splitlines()[0]
        assert header.startswith("mu_bar,sigma_bar,provenance,value,control")

    def test_invalid_config_exits_1(self, ws, capsys):
        bad = ws["root"] / "bad.cfg"
        bad.write_text(CFG_TEXT.replace("gamma = 4", "gamma = -1"))
        assert cli.main(["solve", "--config", str(bad), "--out", str(ws["root"] / "x")]) == 1
        assert "problem.gamma" in capsys.readouterr().err


class TestEvaluate:
    def test_reports_and_byte_stable_rerun(self, ws, capsys):
        art = str(ws["art"])
        assert cli.main(["evaluate", art]) == 0
        out = capsys.readouterr().out
        assert "adaptive_robust: mean=" in out and "constant: mean=" in out
        reports = ws["art"] / "reports"
        for name in ("adaptive_robust", "constant"):
            assert (reports / f"report_{name}.json").is_file()
            assert (reports / f"paths_{name}.csv").is_file()
            assert (reports / f"hist_{name}.csv").is_file()
        again = ws["root"] / "reports2"
        assert cli.main(["evaluate", art, "--out", str(again)]) == 0
        for name in ("adaptive_robust", "constant"):
            assert (reports / f"report_{name}.json").read_bytes() == (
                again / f"report_{name}.json"
            ).read_bytes()
            assert (reports / f"paths_{name}.csv").read_bytes() == (
                again / f"paths_{name}.csv"
            ).read_bytes()

    def test_report_fields(self, ws):
        doc = json.loads((ws["art"] / "reports" / "report_constant.json").read_text())
        assert doc["n_paths"] == 200
        assert doc["stats"]["std"] > 0
        assert doc["config"]["problem"]["kind"] == "portfolio"

    def test_missing_artifact_exits_3(self, ws, capsys):
        assert cli.main(["evaluate", str(ws["root"] / "nowhere")]) == 3
        assert "not an artifact directory" in capsys.readouterr().err

    def test_version_mismatch_exits_1(self, ws, capsys):
        stale = ws["root"] / "art_stale"
        shutil.copytree(ws["art"], stale, ignore=shutil.ignore_patterns("reports"))
        manifest = json.loads((stale / "manifest.json").read_text())
        manifest["version"] = "0.0.9"
        (stale / "manifest.json").write_text(json.dumps(manifest))
        assert cli.main(["evaluate", str(stale)]) == 1
        assert "does not match package" in capsys.readouterr().err

    def test_config_spec_mismatch_exits_1(self, ws, capsys):
        assert cli.main(["evaluate", str(ws["art"]), "--config", str(ws["hcfg"])]) == 1
        assert "does not match the artifact" in capsys.readouterr().err


class TestCompare:
    def test_two_artifacts(self, ws, capsys):
        art2 = ws["root"] / "art_seed12"
        assert cli.main(["solve", "--config", str(ws["cfg"]), "--out", str(art2), "--seed", "12"]) == 0
        out_csv = ws["root"] / "compare.csv"
        code = cli.main(["compare", str(ws["art"]), str(art2), "--out", str(out_csv)])
        assert code == 0
        lines = out_csv.read_text().splitlines()
        assert lines[0] == "method,lambda,mean,std,q95,V0"
        assert len(lines) == 3  # portfolio: one row per artifact
        assert lines[1].startswith("adaptive_robust,")
        assert lines[2].startswith("adaptive_robust_2,")  # duplicate labels get a suffix
        stdout = capsys.readouterr().out
        assert "adaptive_robust_2" in stdout

    def test_single_artifact_exits_1(self, ws, capsys):
        assert cli.main(["compare", str(ws["art"])]) == 1
        assert "need >= 2 artifacts" in capsys.readouterr().err

    def test_inconsistent_specs_exit_1(self, ws, capsys):
        other = ws["root"] / "art_gamma2"
        cfg2 = ws["root"] / "gamma2.cfg"
        cfg2.write_text(CFG_TEXT.replace("gamma = 4", "gamma = 2"))
        assert cli.main(["solve", "--config", str(cfg2), "--out", str(other)]) == 0
        assert cli.main(["compare", str(ws["art"]), str(other)]) == 1
        assert "inconsistent problem specs" in capsys.readouterr().err


class TestStability:
    def test_tables(self, ws):
        out_dir = ws["root"] / "stab"
        code = cli.main(
            ["stability", "--config", str(ws["cfg"]), "--reps", "2", "--sizes", "10,12",
             "--out", str(out_dir)]
        )
        assert code == 0
        raw = (out_dir / "stability_raw.csv").read_text().splitlines()
        assert raw[0] == "n,rep,probe,mu_bar,sigma_bar,k,u_hat"
        assert len(raw) == 1 + 2 * 3 * 2  # sizes x probes x reps
        summary = (out_dir / "stability_summary.csv").read_text().splitlines()
        assert summary[0] == "n,probe,mu_bar,sigma_bar,k,min,q25,median,q75,max"
        assert len(summary) == 1 + 2 * 3
        for line in summary[1:]:
            cells = line.split(",")
            q = [float(v) for v in cells[5:]]
            assert q == sorted(q)  # min <= q25 <= median <= q75 <= max

    def test_hedging_config_rejected(self, ws, capsys):
        assert cli.main(["stability", "--config", str(ws["hcfg"])]) == 1
        assert "portfolio" in capsys.readouterr().err

    def test_bad_reps_and_sizes(self, ws, capsys):
        assert cli.main(["stability", "--config", str(ws["cfg"]), "--reps", "1"]) == 1
        assert cli.main(["stability", "--config", str(ws["cfg"]), "--sizes", "ten"]) == 1
        err = capsys.readouterr().err
        assert "--reps" in err and "--sizes" in err

    def test_solver_failure_exits_2(self, ws, capsys):
        bad = ws["root"] / "quad1.cfg"
        bad.write_text(CFG_TEXT.replace("quad_points = 6", "quad_points = 1"))
        code = cli.main(["stability", "--config", str(bad), "--reps", "2", "--sizes", "10",
                         "--out", str(ws["root"] / "stab2")])
        assert code == 2
        assert "macro-replication 0" in capsys.readouterr().err


class TestQuantizer:
    def test_round_trip(self, ws, capsys):
        out = ws["root"] / "rule.csv"
        assert cli.main(["quantizer", "--points", "12", "--out", str(out)]) == 0
        assert "wrote 12-point rule" in capsys.readouterr().out
        lines = out.read_text().splitlines()
        assert lines[0] == "knot,weight"
        rule = gaussian_rule(12)
        got = np.array([[float(c) for c in line.split(",")] for line in lines[1:]])
        assert np.array_equal(got[:, 0], rule.knots)  # repr round-trips exactly
        assert np.array_equal(got[:, 1], rule.weights)

    def test_unwritable_path_exits_3(self, ws):
        target = str(ws["root"] / "no_such_dir" / "rule.csv")
        assert cli.main(["quantizer", "--points", "8", "--out", target]) == 3


class TestParser:
    def test_version_flag(self, capsys):
        assert cli.main(["--version"]) == 0
        assert "robustbell 0.1.0" in capsys.readouterr().out

    def test_missing_required_args(self, capsys):
        assert cli.main([]) == 1
        assert cli.main(["solve"]) == 1
        capsys.readouterr()


class TestArtifactHelpers:
    def test_spec_doc_round_trip(self, ws):
        bundle, _ = load_artifact(str(ws["art"]))
        doc = artifacts._spec_doc(bundle.spec)
        assert artifacts._spec_doc(artifacts._spec_from_doc(doc)) == doc

    def test_worst_case_nan_round_trip(self):
        rows = np.array([[0.5, 1.0, np.nan, 0.1], [0.2, 0.3, 0.4, 0.5]])
        back = artifacts._none_to_nan(artifacts._nan_to_none(rows))
        assert np.array_equal(back, rows, equal_nan=True)

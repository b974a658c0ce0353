"""Command line pipeline: exit codes, artifacts, reproducibility.

Every test drives the installed entry point in a subprocess, the same
way a shell user would.
"""

import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from ppvc import records


def cli(*argv, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "ppvc.cli", *argv],
        capture_output=True, text=True, cwd=cwd)


def small_doc():
    return {
        "name": "cli_small",
        "seed": 4242,
        "agents": 6,
        "faulty": [5],
        "dim": 2,
        "horizon": 40,
        "policy": {"kind": "random_subset_in"},
        "noise": {"scale": 1.0, "decay": 0.75},
        "gamma": {"low": 0.8},
        "initial": {"box": [[-1, 1], [-1, 1]]},
        "byzantine": {"kind": "box", "box": [[-0.5, -0.2], [0.2, 0.5]]},
        "runs": 25,
        "keep": ["finals", "trajectories", "transmitted"],
        "analysis": {"chis": [2, 4]},
        "plots": ["initials", "finals_hulls", "mahalanobis"],
        "privacy": {"alphas": [2.0, 4.0], "n_shifts": 3, "max_shift": 0.2,
                    "dp_horizons": [0, 1, 2]},
    }


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "exp.yaml"
    cfg.write_text(yaml.safe_dump(small_doc()))
    return root, cfg


@pytest.fixture(scope="module")
def pipeline(workdir):
    """Run the full chain once; individual tests inspect the leftovers."""
    root, cfg = workdir
    out = root / "out"
    steps = {}
    steps["run"] = cli("run", "--config", str(cfg), "--out", str(out))
    steps["ensemble"] = cli("ensemble", "--config", str(cfg),
                            "--out", str(out))
    steps["analyze"] = cli("analyze", "--config", str(cfg), "--out", str(out))
    steps["privacy"] = cli("privacy", "--config", str(cfg), "--out", str(out))
    return out, steps


class TestHappyPath:
    def test_all_stages_exit_zero(self, pipeline):
        out, steps = pipeline
        for name, proc in steps.items():
            assert proc.returncode == 0, (name, proc.stderr)

    def test_run_artifacts(self, pipeline):
        out, _ = pipeline
        assert (out / "run.ndrec").is_file()
        assert (out / "traj.ndrec").is_file()
        assert (out / "transmitted.ndrec").is_file()
        finals, meta = records.read_run(out / "run.ndrec")
        assert finals.shape == (5, 2)
        traj, tmeta = records.read_trajectory(out / "traj.ndrec")
        assert traj.shape == (41, 5, 2)
        assert np.array_equal(traj[-1], finals)

    def test_ensemble_artifacts(self, pipeline):
        out, steps = pipeline
        ens, seed = records.read_ensemble(out / "ensemble.ndrec")
        assert ens.finals.shape == (25, 2)
        assert seed == 4242
        summary = (out / "summary.txt").read_text()
        assert "mean_in_initial_hull" in summary
        assert "runs 25" in summary

    def test_analysis_artifacts(self, pipeline):
        out, steps = pipeline
        report = json.loads((out / "report.json").read_text())
        assert report["runs"] == 25
        assert report["all_passed"] is True
        assert len(report["coverage"]["empirical"]) == 2
        assert report["variance"]["bound"] > 0
        text = (out / "report.txt").read_text()
        assert "coverage" in text

    def test_plots_rendered(self, pipeline):
        out, _ = pipeline
        for kind in ("initials", "finals_hulls", "mahalanobis"):
            svg = out / ("fig_%s.svg" % kind)
            assert svg.is_file()
            assert b"<svg" in svg.read_bytes()[:500]

    def test_privacy_artifacts(self, pipeline):
        out, steps = pipeline
        blob = json.loads((out / "privacy.json").read_text())
        assert blob["all_passed"] is True
        assert blob["defect"] is False
        assert blob["transmitted_gap"] <= 1e-9
        assert [a["alpha"] for a in blob["audits"]] == [2.0, 4.0]
        for audit in blob["audits"]:
            assert audit["value"] <= audit["bound"]
        assert len(blob["dp"]["epsilons"]) == 3
        text = (out / "report_privacy.txt").read_text()
        assert "cgp_rho" in text
        assert "shift_matrices 3" in text

    def test_plot_command_with_kinds(self, workdir, pipeline):
        root, cfg = workdir
        out, _ = pipeline
        dest = root / "replot"
        proc = cli("plot", "--config", str(cfg),
                   "--ensemble", str(out / "ensemble.ndrec"),
                   "--out", str(dest), "--kinds", "initials")
        assert proc.returncode == 0, proc.stderr
        assert (dest / "fig_initials.svg").is_file()
        assert not (dest / "fig_mahalanobis.svg").exists()


class TestReproducibility:
    def test_ensemble_bytes_identical(self, workdir):
        root, cfg = workdir
        a, b = root / "rep_a", root / "rep_b"
        for out in (a, b):
            proc = cli("ensemble", "--config", str(cfg), "--out", str(out),
                       "--runs", "8")
            assert proc.returncode == 0, proc.stderr
        assert (a / "ensemble.ndrec").read_bytes() \
            == (b / "ensemble.ndrec").read_bytes()

    def test_reports_and_figures_identical(self, workdir):
        root, cfg = workdir
        a, b = root / "rep_a", root / "rep_b"
        for out in (a, b):
            proc = cli("analyze", "--config", str(cfg), "--out", str(out))
            assert proc.returncode == 0, proc.stderr
        for name in ("report.txt", "report.json", "fig_initials.svg",
                     "fig_finals_hulls.svg", "fig_mahalanobis.svg"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_seed_override_changes_output(self, workdir):
        root, cfg = workdir
        out = root / "seeded"
        proc = cli("ensemble", "--config", str(cfg), "--out", str(out),
                   "--runs", "8", "--seed", "1")
        assert proc.returncode == 0
        base, _ = records.read_ensemble(root / "rep_a" / "ensemble.ndrec")
        other, seed = records.read_ensemble(out / "ensemble.ndrec")
        assert seed == 1
        assert base.config_digest != other.config_digest
        assert not np.array_equal(base.finals, other.finals)


class TestFailureExits:
    def test_missing_config_exits_2(self, tmp_path):
        proc = cli("run", "--config", str(tmp_path / "ghost.yaml"))
        assert proc.returncode == 2
        err = json.loads(proc.stderr.strip().splitlines()[-1])
        assert err["error"] == "ConfigError"

    def test_invalid_yaml_exits_2(self, tmp_path):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("agents: [unclosed\n")
        proc = cli("run", "--config", str(cfg))
        assert proc.returncode == 2

    def test_bad_field_exits_2_and_names_it(self, tmp_path):
        doc = small_doc()
        doc["runs"] = 0
        cfg = tmp_path / "bad.yaml"
        cfg.write_text(yaml.safe_dump(doc))
        proc = cli("ensemble", "--config", str(cfg), "--out",
                   str(tmp_path / "o"))
        assert proc.returncode == 2
        err = json.loads(proc.stderr.strip().splitlines()[-1])
        assert err["field"] == "runs"

    def test_unknown_subcommand_exits_2(self):
        proc = cli("frobnicate")
        assert proc.returncode == 2

    def test_digest_mismatch_exits_2(self, workdir, pipeline, tmp_path):
        root, cfg = workdir
        out, _ = pipeline
        proc = cli("ensemble", "--config", str(cfg), "--out", str(tmp_path),
                   "--runs", "4", "--seed", "777")
        assert proc.returncode == 0
        proc = cli("analyze", "--config", str(cfg), "--out", str(tmp_path))
        assert proc.returncode == 2
        err = json.loads(proc.stderr.strip().splitlines()[-1])
        assert err["error"] == "ConfigError"
        assert "different configuration" in err["message"]

    def test_infeasible_policy_exits_3(self, tmp_path):
        doc = small_doc()
        doc.update(agents=5, faulty=[3, 4],
                   policy={"kind": "random_k_in", "k": 3})
        cfg = tmp_path / "in.yaml"
        cfg.write_text(yaml.safe_dump(doc))
        proc = cli("run", "--config", str(cfg), "--out", str(tmp_path / "o"))
        assert proc.returncode == 3
        err = json.loads(proc.stderr.strip().splitlines()[-1])
        assert err["error"] == "InfeasiblePolicy"

    def test_failed_check_exits_4(self, workdir, pipeline, tmp_path):
        root, cfg = workdir
        out, _ = pipeline
        ens, seed = records.read_ensemble(out / "ensemble.ndrec")
        doctored = type(ens)(finals=ens.finals * 100.0,
                             config_digest=ens.config_digest)
        records.write_ensemble(tmp_path / "ensemble.ndrec", doctored, seed)
        proc = cli("analyze", "--config", str(cfg), "--out", str(tmp_path))
        assert proc.returncode == 4
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["all_passed"] is False
        assert not all(report["variance"]["passes"])

    def test_privacy_without_request_exits_2(self, tmp_path):
        doc = small_doc()
        del doc["privacy"]
        cfg = tmp_path / "np.yaml"
        cfg.write_text(yaml.safe_dump(doc))
        proc = cli("privacy", "--config", str(cfg), "--out",
                   str(tmp_path / "o"))
        assert proc.returncode == 2
        err = json.loads(proc.stderr.strip().splitlines()[-1])
        assert err["field"] == "privacy"

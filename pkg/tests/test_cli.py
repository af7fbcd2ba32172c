import csv

import pytest

from rankmfg.artifacts import read_kv, sha256_file
from rankmfg.cli import main


def _run(tmp_path, *argv):
    out = tmp_path / "runs"
    code = main([*argv, "--out", str(out)])
    return code, out


def _only_dir(root, command):
    dirs = sorted(root.glob(f"{command}-*"))
    assert len(dirs) == 1
    return dirs[0]


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text("n_steps = 100\nn_agents = 200\nn_replications = 100\n")
    return path


def test_solve_target_first_row(tmp_path):
    code, out = _run(tmp_path, "solve-target")
    assert code == 0
    run = _only_dir(out, "solve-target")
    with (run / "target_paths.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["t", "eta", "pi", "v", "phi", "qbar", "m"]
    assert round(float(rows[0]["qbar"]), 6) == 0.822427
    assert len(rows) == 1001
    manifest = read_kv(run / "manifest.txt")
    assert manifest["artifact.target_paths.csv.sha256"] == sha256_file(run / "target_paths.csv")
    assert manifest["seed"] == "2024" and manifest["n_steps"] == "1000"


def test_refuses_to_overwrite(tmp_path):
    assert _run(tmp_path, "solve-target")[0] == 0
    assert _run(tmp_path, "solve-target")[0] == 4


def test_manifest_replay_is_byte_identical(tmp_path, small_cfg):
    code, out = _run(tmp_path, "simulate", "--config", str(small_cfg), "--seed", "11")
    assert code == 0
    first = _only_dir(out, "simulate")
    again = tmp_path / "again"
    assert main(["simulate", "--manifest", str(first / "manifest.txt"), "--out", str(again)]) == 0
    second = _only_dir(again, "simulate")
    assert first.name == second.name
    for f in first.iterdir():
        assert f.read_bytes() == (second / f.name).read_bytes()


def test_seed_changes_only_monte_carlo(tmp_path, small_cfg):
    for seed in ("1", "2"):
        assert main(["solve-target", "--config", str(small_cfg), "--seed", seed,
                     "--out", str(tmp_path / f"t{seed}")]) == 0
        assert main(["simulate", "--config", str(small_cfg), "--seed", seed,
                     "--out", str(tmp_path / f"s{seed}")]) == 0
    t1, t2 = (_only_dir(tmp_path / f"t{s}", "solve-target") for s in "12")
    s1, s2 = (_only_dir(tmp_path / f"s{s}", "simulate") for s in "12")
    assert sha256_file(t1 / "target_paths.csv") == sha256_file(t2 / "target_paths.csv")
    assert sha256_file(s1 / "agents.csv") != sha256_file(s2 / "agents.csv")


def test_grid_change_changes_solver_output(tmp_path, small_cfg):
    other = tmp_path / "other.cfg"
    other.write_text("n_steps = 200\n")
    assert main(["solve-target", "--config", str(small_cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["solve-target", "--config", str(other), "--out", str(tmp_path / "b")]) == 0
    a = _only_dir(tmp_path / "a", "solve-target") / "target_paths.csv"
    b = _only_dir(tmp_path / "b", "solve-target") / "target_paths.csv"
    assert sha256_file(a) != sha256_file(b)


def test_sweep_alpha_monotone(tmp_path, small_cfg):
    code, out = _run(tmp_path, "sweep-alpha", "--config", str(small_cfg))
    assert code == 0
    run = _only_dir(out, "sweep-alpha")
    summary = read_kv(run / "summary.txt")
    assert summary["target_strictly_increasing"] == "true"
    assert summary["threshold_strictly_increasing"] == "true"
    with (run / "sweep_alpha.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["alpha"]) for r in rows] == [0.25, 0.5, 0.75, 0.9, 0.95]


def test_compare_and_clt_commands(tmp_path, small_cfg):
    assert _run(tmp_path, "compare-formulations", "--config", str(small_cfg))[0] == 0
    summary = read_kv(_only_dir(tmp_path / "runs", "compare-formulations") / "summary.txt")
    assert float(summary["relative_difference"]) > 0
    assert _run(tmp_path, "clt-check", "--config", str(small_cfg), "--agents", "100")[0] == 0
    run = _only_dir(tmp_path / "runs", "clt-check")
    with (run / "replications.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["replication", "N", "sample_quantile_T"] and len(rows) == 100


def test_threshold_exports(tmp_path, small_cfg):
    code, out = _run(tmp_path, "solve-threshold", "--config", str(small_cfg), "--time-stride", "50")
    assert code == 0
    run = _only_dir(out, "solve-threshold")
    with (run / "threshold_trace.csv").open() as fh:
        header = fh.readline().strip()
    assert header == "iteration,q_candidate,q_mapped,residual"
    with (run / "threshold_policy.csv").open() as fh:
        assert sum(1 for _ in fh) == 1 + 3 * 1024


def test_bad_inputs_exit_nonzero(tmp_path, capsys):
    assert _run(tmp_path, "solve-target", "--alpha", "1.0")[0] == 2
    assert "AlphaOutOfRange" in capsys.readouterr().err
    assert _run(tmp_path, "sweep-alpha", "--alphas", "0.5,0.25")[0] == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("volatility = 1\n")
    assert _run(tmp_path, "solve-target", "--config", str(bad))[0] == 2
    coarse = tmp_path / "coarse.cfg"
    coarse.write_text("n_steps = 5\n")
    assert _run(tmp_path, "solve-target", "--config", str(coarse))[0] == 3

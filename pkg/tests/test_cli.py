import json
import shutil
import subprocess

import numpy as np
import pytest

import blockgreedy as bg
from blockgreedy.cli import auto_lambda0, lambda_max, main
from blockgreedy.dataio import read_kv, read_weights, write_libsvm
from synth import planted_groups, random_sparse


@pytest.fixture
def data(tmp_path):
    rng = np.random.default_rng(7)
    X = random_sparse(rng, 80, 40, 0.15, normalize=False)
    path = tmp_path / "data.svm"
    write_libsvm(X, rng.choice([-1.0, 1.0], size=80), path)
    return path


def solve(data, out, *extra):
    return main(["solve", "--data", str(data), "--out", str(out), "--trace-seconds", "0", "--trace-every", "5", *extra])


def test_solve_writes_outputs(data, tmp_path, capsys):
    out = tmp_path / "run"
    code = solve(data, out, "--lambda", "0.01,0.001", "--algorithm", "block-greedy", "--blocks", "4", "--parallel", "2", "--normalize")
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["num_blocks"] == 4 and manifest["parallelism"] == 2
    for tag in ("0.01", "0.001"):
        assert bg.read_trace(out / f"trace_lambda={tag}.csv")[0].iteration == 0
        assert (out / f"weights_original_lambda={tag}.txt").exists()
    table = capsys.readouterr().out
    assert "reason" in table and "converged" in table
    assert (out / "summary.txt").read_text() in table


def test_solve_is_reproducible(data, tmp_path):
    args = ("--lambda", "0.001", "--algorithm", "shotgun", "--parallel", "4", "--seed", "3")
    assert solve(data, tmp_path / "a", *args) == 0
    assert solve(data, tmp_path / "b", *args) == 0
    ta = bg.read_trace(tmp_path / "a" / "trace_lambda=0.001.csv")
    tb = bg.read_trace(tmp_path / "b" / "trace_lambda=0.001.csv")
    strip = lambda t: [(r.iteration, r.objective, r.nnz, r.max_abs_eta) for r in t]  # noqa: E731
    assert strip(ta) == strip(tb)
    wa = (tmp_path / "a" / "weights_lambda=0.001.txt").read_bytes()
    assert wa == (tmp_path / "b" / "weights_lambda=0.001.txt").read_bytes()


def test_auto_lambda0(data, tmp_path):
    problem, _ = bg.cli.load_problem(data, "logistic", True)
    lam0 = auto_lambda0(problem)
    # largest power of ten strictly below lambda_max
    assert lam0 < lambda_max(problem) <= 10 * lam0
    assert np.log10(lam0) == round(np.log10(lam0))
    out = tmp_path / "auto"
    assert solve(data, out, "--auto-lambda0", "--loss", "logistic", "--normalize", "--algorithm", "greedy") == 0
    lambdas = json.loads((out / "manifest.json").read_text())["lambdas"]
    assert len(lambdas) == 4 and lambdas[0] == lam0
    first = read_weights(out / f"weights_lambda={lam0:g}.txt")
    assert np.count_nonzero(first) > 0


def test_exit_codes(data, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--data", str(data), "--out", str(tmp_path)])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 1
    assert solve(data, tmp_path / "x", "--lambda", "-1") == 1
    assert solve(data, tmp_path / "x", "--lambda", "0.1", "--algorithm", "block-greedy", "--blocks", "4", "--parallel", "9") == 1
    assert solve(tmp_path / "missing.svm", tmp_path / "x", "--lambda", "0.1") == 2
    bad = tmp_path / "bad.svm"
    bad.write_text("1 2:1 1:1\n")
    assert solve(bad, tmp_path / "x", "--lambda", "0.1") == 2


def test_threads_env(data, tmp_path, monkeypatch):
    monkeypatch.setenv("BLOCKGREEDY_THREADS", "two")
    assert solve(data, tmp_path / "x", "--lambda", "0.1") == 1
    monkeypatch.setenv("BLOCKGREEDY_THREADS", "2")
    assert solve(data, tmp_path / "y", "--lambda", "0.1", "--blocks", "4") == 0


def test_cluster_and_spectral(tmp_path):
    X, groups = planted_groups(np.random.default_rng(0), 3, 3)
    data = tmp_path / "g.svm"
    write_libsvm(X, np.ones(X.n_rows), data)
    out = tmp_path / "c"
    assert main(["cluster", "--data", str(data), "--blocks", "3", "--out", str(out)]) == 0
    part = bg.Partition.load(out / "partition.txt")
    assert part.same_grouping(bg.Partition.from_blocks(groups, 9))
    stats = read_kv(out / "partition_stats.txt")
    assert float(stats["epsilon_hat"]) == 0.0 and stats["epsilon_hat_exact"] == "true"

    report = tmp_path / "s.txt"
    code = main(["spectral", "--data", str(data), "--partition", f"file:{out / 'partition.txt'}", "--parallel", "1,3", "--out", str(report)])
    assert code == 0
    kv = read_kv(report)
    assert kv["method"] == "exact_enumeration"
    assert float(kv["rho_estimate"]) == pytest.approx(1.0)
    assert kv["guarantee.P3"] == "holds" and kv["prop1_bound_holds"] == "true"
    assert main(["spectral", "--data", str(data)]) == 1


@pytest.mark.skipif(shutil.which("blockgreedy") is None, reason="console script not installed")
def test_console_script(data, tmp_path):
    proc = subprocess.run(
        ["blockgreedy", "solve", "--data", str(data), "--out", str(tmp_path / "o"), "--lambda", "0.01", "--algorithm", "greedy"],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert "converged" in proc.stdout

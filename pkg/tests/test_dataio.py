import numpy as np
import pytest

import blockgreedy as bg
from blockgreedy.dataio import read_kv, read_weights, write_kv, write_libsvm, write_weights


def write(tmp_path, text, name="d.svm"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_read_small_file(tmp_path):
    path = write(tmp_path, "1 1:0.5 3:2\n-1 2:-1.5\n\n# comment only\n+1 3:1e-3  # trailing\n")
    X, y = bg.read_libsvm(path)
    assert X.shape == (3, 3) and X.nnz == 4
    assert np.array_equal(X.to_dense(), [[0.5, 0, 2], [0, -1.5, 0], [0, 0, 1e-3]])
    assert y.tolist() == [1.0, -1.0, 1.0]


def test_n_features_override(tmp_path):
    path = write(tmp_path, "1 2:1\n")
    assert bg.read_libsvm(path, n_features=5)[0].shape == (1, 5)
    with pytest.raises(bg.DataError):
        bg.read_libsvm(path, n_features=1)


def test_sample_without_features(tmp_path):
    X, y = bg.read_libsvm(write(tmp_path, "1\n0 1:2\n"))
    assert X.shape == (2, 1) and X.column_nnz().tolist() == [1]


@pytest.mark.parametrize(
    "text",
    ["1 0:1\n", "1 2:1 2:3\n", "1 3:1 2:1\n", "1 1:abc\n", "x 1:1\n", "1 1\n", "1 1:0\n", "1 1:nan\n", "", "# nothing\n"],
)
def test_malformed_input_rejected(tmp_path, text):
    with pytest.raises(bg.DataError):
        bg.read_libsvm(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(bg.DataError):
        bg.read_libsvm(tmp_path / "nope.svm")


def test_logistic_labels(tmp_path):
    _, y = bg.read_libsvm(write(tmp_path, "0 1:1\n1 1:2\n"), logistic=True)
    assert y.tolist() == [-1.0, 1.0]
    with pytest.raises(bg.DataError):
        bg.read_libsvm(write(tmp_path, "2 1:1\n1 1:2\n"), logistic=True)


def test_libsvm_round_trip_exact_floats(tmp_path):
    vals = np.array([[0.1 + 0.2, 0.0], [0.0, 1 / 3]])
    X = bg.SparseColMatrix.from_dense(vals)
    path = tmp_path / "rt.svm"
    write_libsvm(X, np.array([1.0, -1.0]), path)
    X2, _ = bg.read_libsvm(path)
    assert X2 == X


def test_trace_round_trip(tmp_path):
    recs = [bg.TraceRecord(0, 0.0, 1.5, 0, float("nan")), bg.TraceRecord(10, 0.25, 0.1 + 0.2, 3, 1e-7)]
    path = tmp_path / "t.csv"
    bg.write_trace(recs, path)
    assert path.read_text().splitlines()[0] == "iteration,elapsed_seconds,objective,nnz,max_abs_eta"
    back = bg.read_trace(path)
    assert back[1] == recs[1] and back[0].iteration == 0 and np.isnan(back[0].max_abs_eta)


def test_weights_and_kv_round_trip(tmp_path):
    w = np.array([0.0, -1 / 7, 0.0, 2.5])
    write_weights(w, tmp_path / "w.txt")
    assert np.array_equal(read_weights(tmp_path / "w.txt"), w)
    write_kv({"a": 1, "b": "x y"}, tmp_path / "r.txt")
    assert read_kv(tmp_path / "r.txt") == {"a": "1", "b": "x y"}

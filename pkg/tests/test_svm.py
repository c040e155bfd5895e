import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sigr.errors import FormatError
from sigr.svm import (SvmModel, load_model, load_models, rbf_kernel, rbf_matrix, save_models,
                      smo_solve, train_ovr, train_smo)

from oracles import dual_objective, solve_dual_slsqp

XOR_X = np.array([[0, 0], [1, 1], [0, 1], [1, 0]], dtype=float)
XOR_Y = np.array([-1, -1, 1, 1], dtype=float)


def _blobs(seed, n=30, sep=3.0, dim=2):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, 1, (n, dim))
    b = rng.normal(sep, 1, (n, dim))
    return np.vstack([a, b]), np.r_[-np.ones(n), np.ones(n)]


def _kkt_gap(alpha, y, K, b, C):
    f = K @ (alpha * y) + b
    m = y * f
    viol = np.where(alpha <= 1e-9, np.maximum(0, 1 - m),
                    np.where(alpha >= C - 1e-9, np.maximum(0, m - 1), np.abs(m - 1)))
    return viol.max()


def test_rbf_values():
    assert rbf_kernel([0.0], [0.0], 1.0) == 1.0
    assert rbf_kernel([0.0], [1.0], np.log(2)) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        rbf_kernel([1.0, 2.0], [1.0], 1.0)
    with pytest.raises(ValueError):
        rbf_kernel([1.0], [1.0], 0.0)


def test_rbf_matrix_matches_pairwise():
    rng = np.random.default_rng(0)
    a, b = rng.random((5, 3)), rng.random((4, 3))
    ref = np.array([[rbf_kernel(p, q, 0.7) for q in b] for p in a])
    assert np.allclose(rbf_matrix(a, b, 0.7), ref, atol=1e-12)


def test_xor_separable_matches_reference_dual():
    res = smo_solve(XOR_X, XOR_Y, 10.0, 1.0, tol=1e-6)
    K = rbf_matrix(XOR_X, XOR_X, 1.0)
    ref = solve_dual_slsqp(K, XOR_Y, 10.0)
    assert dual_objective(res.alpha, XOR_Y, K) == pytest.approx(dual_objective(ref, XOR_Y, K), abs=1e-5)
    m = train_smo(XOR_X, XOR_Y, c=10.0, gamma=1.0, tol=1e-6)
    assert np.array_equal(m.predict(XOR_X), XOR_Y.astype(int))


@pytest.mark.parametrize("seed", range(4))
def test_overlapping_blobs_match_reference_dual(seed):
    x, y = _blobs(seed, n=12, sep=1.5)
    K = rbf_matrix(x, x, 0.5)
    res = smo_solve(x, y, 1.0, 0.5, tol=1e-6)
    ref = solve_dual_slsqp(K, y, 1.0)
    assert dual_objective(res.alpha, y, K) >= dual_objective(ref, y, K) - 1e-5
    assert np.all((res.alpha >= 0) & (res.alpha <= 1.0))
    assert abs(res.alpha @ y) < 1e-9


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.5, 1.0, 10.0]))
def test_kkt_within_tolerance(seed, C):
    x, y = _blobs(seed, n=20, sep=2.0)
    res = smo_solve(x, y, C, 1.0, tol=1e-3)
    assert res.converged
    K = rbf_matrix(x, x, 1.0)
    assert _kkt_gap(res.alpha, y, K, res.bias, C) <= 1e-3 + 1e-9


def test_dual_objective_monotone():
    x, y = _blobs(3, n=40, sep=1.0)
    hist = smo_solve(x, y, 1.0, 1.0, record=True).dual_objective
    assert len(hist) > 2
    assert np.all(np.diff(hist) >= -1e-12)


def test_conflicting_duplicates_terminate():
    x = np.vstack([np.zeros((5, 3)), np.zeros((5, 3)), np.ones((4, 3))])
    y = np.r_[np.ones(5), -np.ones(5), np.ones(4)]
    res = smo_solve(x, y, 1.0, 1.0, max_epochs=50)
    assert res.iterations <= 50 * len(y)
    assert np.all((res.alpha >= 0) & (res.alpha <= 1.0))


def test_order_invariance():
    x, y = _blobs(7, n=25, sep=2.5)
    a = train_smo(x, y, seed=0, tol=1e-6)
    b = train_smo(x, y, seed=5, tol=1e-6)
    probe = np.random.default_rng(1).normal(1.5, 2, (30, 2))
    assert np.allclose(a.decision(probe), b.decision(probe), atol=1e-3)
    assert np.array_equal(a.predict(probe), b.predict(probe))


def test_train_input_errors():
    with pytest.raises(ValueError):
        train_smo(np.zeros((3, 2)), [1, 1, 1])
    with pytest.raises(ValueError):
        train_smo(np.zeros((3, 2)), [1, -1, 2])
    with pytest.raises(ValueError):
        train_smo(np.zeros((3, 2)), [1, -1])


def test_decision_dim_mismatch():
    m = train_smo(XOR_X, XOR_Y)
    with pytest.raises(ValueError):
        m.decision(np.zeros(3))


def test_persistence_bit_exact(tmp_path):
    x, y = _blobs(1, n=30)
    m = train_smo(x, y)
    save_models(tmp_path / "m.ssvm", m)
    back = load_model(tmp_path / "m.ssvm")
    probe = np.random.default_rng(2).normal(1.5, 2, (50, 2))
    assert back.decision(probe).tobytes() == m.decision(probe).tobytes()
    assert back.decision(x).tobytes() == m.decision(x).tobytes()
    save_models(tmp_path / "n.ssvm", back)
    assert (tmp_path / "m.ssvm").read_bytes() == (tmp_path / "n.ssvm").read_bytes()
    assert (tmp_path / "m.ssvm").read_bytes()[:4] == b"SSVM"


def test_model_file_errors(tmp_path):
    (tmp_path / "bad").write_bytes(b"SBVW" + bytes(40))
    with pytest.raises(FormatError):
        load_model(tmp_path / "bad")
    m = SvmModel(np.ones((2, 3)), [0.5, -0.5], 0.1, 1.0, 1.0)
    save_models(tmp_path / "m", m)
    (tmp_path / "t").write_bytes((tmp_path / "m").read_bytes()[:-2])
    with pytest.raises(OSError):
        load_model(tmp_path / "t")


def test_ovr_three_blobs(tmp_path):
    rng = np.random.default_rng(0)
    centres = [(0, 0), (6, 0), (0, 6)]
    x = np.vstack([rng.normal(c, 0.7, (20, 2)) for c in centres])
    labels = [n for n in ("a", "b", "c") for _ in range(20)]
    ovr = train_ovr(x, labels, gamma=0.5)
    assert ovr.classes == ["a", "b", "c"]
    assert ovr.predict(x) == labels
    save_models(tmp_path / "m", ovr.models)
    back = load_models(tmp_path / "m")
    assert len(back) == 3
    assert np.array_equal(np.stack([b.decision(x) for b in back], 1), ovr.decision(x))


def test_ovr_two_classes_reduces_to_binary():
    x, y = _blobs(4, n=20, sep=1.2)
    labels = ["neg" if v < 0 else "pos" for v in y]
    ovr = train_ovr(x, labels)
    m = train_smo(x, y)
    probe = np.random.default_rng(3).normal(0.6, 2, (40, 2))
    want = ["pos" if s > 0 else "neg" for s in m.decision(probe)]
    assert ovr.predict(probe) == want
    d = ovr.decision(probe)
    assert np.array_equal(d[:, 0], -d[:, 1])


def test_ovr_label_errors():
    with pytest.raises(ValueError):
        train_ovr(np.zeros((3, 2)), ["a", "a", "a"])
    with pytest.raises(ValueError):
        train_ovr(np.zeros((3, 2)), ["a", "b", "z"], classes=["a", "b"])

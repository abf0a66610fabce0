import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from motionq.numkit import (
    ParamStore,
    Rng,
    cosine_sim,
    cosine_sim_grad,
    grad_check,
    sample_gaussian,
    sigmoid,
)

GOLDEN = os.path.join(os.path.dirname(__file__), "golden", "rng_seed42.txt")


def naive_matmul(a, b):
    """Triple-loop matrix multiply oracle."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for l in range(k):
                s += a[i, l] * b[l, j]
            out[i, j] = s
    return out


# ---------------------------------------------------------------- activations


@given(st.floats(min_value=-30, max_value=30))
def test_sigmoid_symmetry(x):
    assert abs(float(sigmoid(x)) + float(sigmoid(-x)) - 1.0) <= 1e-12


@given(st.floats(min_value=-15, max_value=15))
def test_tanh_sigmoid_identity(x):
    assert abs(np.tanh(x) - (2.0 * float(sigmoid(2.0 * x)) - 1.0)) <= 1e-12


def test_sigmoid_extremes_finite():
    out = sigmoid(np.array([-1e4, -50.0, 0.0, 50.0, 1e4]))
    assert np.all(np.isfinite(out))
    assert out[0] == 0.0 and out[-1] == 1.0
    assert out[2] == 0.5


def test_matmul_matches_triple_loop_oracle():
    rng = np.random.default_rng(7)
    for _ in range(5):
        a = rng.standard_normal((8, 8))
        b = rng.standard_normal((8, 8))
        assert np.max(np.abs(a @ b - naive_matmul(a, b))) < 1e-12


# ---------------------------------------------------------------- cosine


def test_cosine_identical():
    assert cosine_sim([1.0, 0.0], [1.0, 0.0]) == 1.0


def test_cosine_orthogonal():
    assert cosine_sim([1.0, 0.0], [0.0, 1.0]) == 0.0


def test_cosine_hand_value():
    assert abs(cosine_sim([1.0, 1.0], [1.0, 0.0]) - 0.7071067811865475) <= 1e-6


def test_cosine_shape_mismatch():
    with pytest.raises(ValueError):
        cosine_sim([1.0, 0.0], [1.0, 0.0, 0.0])


def test_cosine_zero_guard():
    assert cosine_sim([0.0, 0.0], [1.0, 2.0]) == 0.0
    c, da, db = cosine_sim_grad([0.0, 0.0], [1.0, 2.0])
    assert c == 0.0 and not da.any() and not db.any()


@given(st.integers(min_value=0, max_value=10_000))
def test_cosine_bounded(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(4)
    b = rng.standard_normal(4)
    assert -1.0 <= cosine_sim(a, b) <= 1.0


def test_cosine_grad_matches_finite_difference():
    rng = np.random.default_rng(3)
    a = rng.standard_normal(5)
    b = rng.standard_normal(5)
    _, da, db = cosine_sim_grad(a, b)
    eps = 1e-6
    for i in range(5):
        pa = a.copy()
        pa[i] += eps
        ma = a.copy()
        ma[i] -= eps
        num = (cosine_sim(pa, b) - cosine_sim(ma, b)) / (2 * eps)
        assert abs(num - da[i]) < 1e-8


# ---------------------------------------------------------------- rng


def test_rng_golden_vector_seed_42():
    with open(GOLDEN) as fh:
        golden = [float.fromhex(line.strip()) for line in fh if not line.startswith("#")]
    draws = Rng(42).normal(16)
    assert len(golden) == 16
    assert np.array_equal(draws, np.array(golden))


def test_rng_same_seed_same_stream():
    a = Rng(123)
    b = Rng(123)
    assert np.array_equal(a.normal(100), b.normal(100))
    assert np.array_equal(a.uniform(-1, 1, 50), b.uniform(-1, 1, 50))
    assert np.array_equal(a.integers(0, 1000, 50), b.integers(0, 1000, 50))


# ---------------------------------------------------------------- gaussian sampling


def test_sample_gaussian_sigma_zero_is_mu():
    mu = np.array([1.5, -2.0, 0.25])
    out = sample_gaussian(Rng(0), mu, np.zeros(3))
    assert np.array_equal(out, mu)


def test_sample_gaussian_deterministic():
    mu = np.array([0.1, 0.2])
    sigma = np.array([1.0, 2.0])
    assert np.array_equal(
        sample_gaussian(Rng(9), mu, sigma), sample_gaussian(Rng(9), mu, sigma)
    )


def test_sample_gaussian_negative_sigma_rejected():
    with pytest.raises(ValueError):
        sample_gaussian(Rng(0), np.zeros(2), np.array([0.5, -0.1]))


def test_sample_gaussian_moments():
    rng = Rng(2024)
    draws = np.array([sample_gaussian(rng, np.zeros(1), np.ones(1))[0] for _ in range(100_000)])
    assert abs(draws.mean()) < 0.02
    assert abs(draws.var() - 1.0) < 0.05


# ---------------------------------------------------------------- param store


def test_paramstore_duplicate_name_rejected():
    store = ParamStore()
    store.add("w", np.zeros(3))
    with pytest.raises(ValueError):
        store.add("w", np.zeros(3))


def test_paramstore_rejects_nonfinite():
    store = ParamStore()
    with pytest.raises(ValueError):
        store.add("bad", np.array([1.0, np.nan]))


def test_paramstore_grad_shape_and_zeroing():
    store = ParamStore()
    w = store.add("w", np.ones((2, 3)))
    g = store.grad("w")
    assert g.shape == w.shape
    g += 5.0
    store.zero_grads()
    assert not store.grad("w").any()


def test_paramstore_save_load_bitwise(tmp_path):
    store = ParamStore()
    rng = Rng(5)
    store.add("a.w", rng.normal((3, 4)))
    store.add("a.b", rng.normal(4))
    store.add("scalarish", rng.normal((1, 1)))
    path = tmp_path / "params.txt"
    store.save(path)
    other = ParamStore()
    other.add("a.w", np.zeros((3, 4)))
    other.add("a.b", np.zeros(4))
    other.add("scalarish", np.zeros((1, 1)))
    other.load(path)
    for name in store.names():
        assert np.array_equal(store.value(name), other.value(name))


def test_paramstore_load_shape_mismatch(tmp_path):
    store = ParamStore()
    store.add("w", np.zeros((2, 2)))
    path = tmp_path / "p.txt"
    store.save(path)
    other = ParamStore()
    other.add("w", np.zeros((2, 3)))
    with pytest.raises(ValueError):
        other.load(path)


# ---------------------------------------------------------------- grad check


def test_grad_check_quadratic():
    store = ParamStore()
    store.add("theta", np.array([3.0]))

    def f(s):
        th = s.value("theta")[0]
        s.grad("theta")[0] += 2.0 * th
        return th * th

    assert grad_check(f, store, eps=1e-5) < 1e-9


def test_grad_check_sigmoid_layer():
    rng = Rng(11)
    store = ParamStore()
    w = store.add("w", rng.normal((4, 3)))
    x = rng.normal(3)

    def f(s):
        pre = s.value("w") @ x
        out = sigmoid(pre)
        d_pre = out * (1 - out)
        s.grad("w")[...] += np.outer(d_pre, x)
        return float(out.sum())

    assert grad_check(f, store, eps=1e-5) < 1e-6


def test_grad_check_eps_range():
    store = ParamStore()
    store.add("t", np.array([1.0]))
    with pytest.raises(ValueError):
        grad_check(lambda s: 0.0, store, eps=1e-2)


def test_grad_check_nonfinite_loss():
    store = ParamStore()
    store.add("t", np.array([1.0]))
    with pytest.raises(FloatingPointError):
        grad_check(lambda s: float("nan"), store, eps=1e-5)

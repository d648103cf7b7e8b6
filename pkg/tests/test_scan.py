import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xyscannet.autodiff import Tensor, gradcheck
from xyscannet.errors import ContractError, DomainError, ShapeError
from xyscannet.scan import (
    IDENTITY,
    ScanParams,
    compose,
    discretize,
    init_scan_params,
    run_scan,
    s6_forward,
    scan_parallel,
    scan_sequential,
    selective_scan,
)

EXP_MINUS_HALF = 0.606530659712633424  # mpmath


# ------------------------------------------------------------ discretize


def test_discretize_scalar_example():
    a_bar, b_bar = discretize(np.full((1, 1), 0.5), np.zeros((1, 1)), np.full((1, 1), 2.0), np.full((1, 1), 3.0))
    assert a_bar.shape == b_bar.shape == (1, 1, 1)
    assert a_bar.item() == pytest.approx(EXP_MINUS_HALF, abs=1e-15)
    assert b_bar.item() == 3.0


def test_discretize_limits():
    a_bar, b_bar = discretize(np.full((1, 1), 1e-12), np.zeros((1, 2)), np.ones((1, 2)), np.ones((1, 1)))
    np.testing.assert_allclose(a_bar, 1.0, atol=1e-11)
    np.testing.assert_allclose(b_bar, 0.0, atol=1e-11)
    rng = np.random.default_rng(0)
    _, b_bar = discretize(rng.uniform(0.1, 1, (4, 3)), rng.standard_normal((3, 2)), rng.standard_normal((4, 2)),
                          np.zeros((4, 3)))
    np.testing.assert_array_equal(b_bar, 0.0)


def test_discretize_rejects_non_positive_delta():
    with pytest.raises(ContractError):
        discretize(np.array([[0.1, 0.0]]), np.zeros((2, 1)), np.ones((1, 1)), np.ones((1, 2)))


@given(st.floats(1e-3, 10), st.floats(-3, 3))
def test_discretized_decay_lies_in_unit_interval(delta, a_log):
    a_bar, _ = discretize(np.full((1, 1), delta), np.full((1, 1), a_log), np.ones((1, 1)), np.ones((1, 1)))
    assert 0.0 < a_bar.item() < 1.0


# ----------------------------------------------------------- scan algebra


def test_compose_example_and_identity():
    assert compose((0.5, 1.0), (0.5, 2.0)) == (0.25, 2.5)
    assert compose(IDENTITY, (0.3, -1.5)) == (0.3, -1.5)
    assert compose((0.3, -1.5), IDENTITY) == (0.3, -1.5)


@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-2, 2)), min_size=3, max_size=3))
def test_compose_is_associative(els):
    x, y, z = els
    left = compose(compose(x, y), z)
    right = compose(x, compose(y, z))
    assert left == pytest.approx(right, abs=1e-12)


def test_scan_sequential_examples():
    np.testing.assert_array_equal(scan_sequential([0.5, 0.5], [1.0, 2.0]), [1.0, 2.5])
    np.testing.assert_array_equal(scan_sequential(np.ones(5), np.zeros(5), h0=7.0), np.full(5, 7.0))
    b = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(scan_sequential(np.zeros(3), b, h0=5.0), b)
    with pytest.raises(ShapeError):
        scan_sequential(np.ones(3), np.ones(4))
    with pytest.raises(ShapeError):
        scan_parallel(np.ones(3), np.ones(4))


def test_parallel_matches_sequential_length_1024():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(-1, 1, 1024), rng.standard_normal(1024)
    ref = scan_sequential(a, b, h0=0.3)
    for chunk in (None, 1, 7, 64, 1024):
        assert np.max(np.abs(scan_parallel(a, b, h0=0.3, chunk=chunk) - ref)) < 1e-10


@given(st.integers(1, 300), st.sampled_from([1, 2, 7, 64, None]), st.integers(0, 2**32 - 1))
def test_parallel_matches_sequential_property(L, chunk, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-1, 1, (L, 2, 3)), rng.standard_normal((L, 2, 3))
    h0 = rng.standard_normal((2, 3))
    ref = scan_sequential(a, b, h0)
    out = scan_parallel(a, b, h0, chunk=L if chunk is None else chunk)
    assert np.max(np.abs(out - ref)) < 1e-10


def test_parallel_matches_sequential_in_f32():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 1, (500, 4)).astype(np.float32)
    b = rng.standard_normal((500, 4)).astype(np.float32)
    assert np.max(np.abs(scan_parallel(a, b, chunk=7) - scan_sequential(a, b))) < 1e-4


def test_parallel_rejects_bad_chunk():
    with pytest.raises(ContractError):
        scan_parallel(np.ones(4), np.ones(4), chunk=0)


def test_run_scan_along_other_axis():
    rng = np.random.default_rng(3)
    a, b = rng.uniform(0, 1, (2, 9, 3)), rng.standard_normal((2, 9, 3))
    out = run_scan(a, b, axis=1, chunk=4)
    for i in range(2):
        np.testing.assert_allclose(out[i], scan_sequential(a[i], b[i]), atol=1e-12)


# --------------------------------------------------------------- S6 layer


def _params(D=3, N=4, seed=0):
    return init_scan_params(np.random.default_rng(seed), D, N, dtype=np.float64)


def test_init_scan_params_defaults():
    p = init_scan_params(np.random.default_rng(0), 8)
    assert p.channels == 8 and p.state_dim == 16
    np.testing.assert_allclose(np.exp(p.a_log[0]), np.arange(1, 17), rtol=1e-6)
    dt = np.log1p(np.exp(p.delta_bias.astype(np.float64)))
    assert np.all((dt >= 1e-3 * 0.999) & (dt <= 1e-1 * 1.001))
    np.testing.assert_array_equal(p.d_skip, 1.0)


def test_s6_zero_input_gives_zero_output():
    y = s6_forward(np.zeros((2, 8, 3)), _params())
    np.testing.assert_array_equal(y.numpy(), 0.0)


def test_s6_shape_contract():
    y = s6_forward(np.random.default_rng(0).standard_normal((2, 8, 4)), _params(4, 16))
    assert y.shape == (2, 8, 4)
    with pytest.raises(ShapeError):
        s6_forward(np.ones((2, 8, 5)), _params(4, 16))


def test_s6_strict_mode_rejects_nan():
    x = np.zeros((1, 4, 3))
    x[0, 2, 1] = np.nan
    with pytest.raises(DomainError):
        s6_forward(x, _params())


def test_crafted_recurrence_through_selective_scan():
    # D = N = 1, L = 2: delta = ln 2 and A = -1 give a = 0.5; b_t = delta*B*x_t.
    ln2 = math.log(2.0)
    delta = np.full((1, 2, 1), ln2)
    x = np.array([1.0, 2.0]).reshape(1, 2, 1) / ln2
    y = selective_scan(delta, -np.ones((1, 1)), np.ones((1, 2, 1)), np.ones((1, 2, 1)), x)
    np.testing.assert_allclose(y.numpy().ravel(), [1.0, 2.5], atol=1e-14)


@pytest.mark.parametrize("trial", range(5))
def test_s6_causality(trial):
    rng = np.random.default_rng(100 + trial)
    p = _params(3, 4, seed=trial)
    x = rng.standard_normal((2, 12, 3))
    t = int(rng.integers(0, 12))
    x2 = x.copy()
    x2[:, t] += rng.standard_normal(3)
    y, y2 = s6_forward(x, p).numpy(), s6_forward(x2, p).numpy()
    np.testing.assert_array_equal(y[:, :t], y2[:, :t])
    assert np.any(y[:, t:] != y2[:, t:])


def test_s6_stable_on_long_sequences():
    x = np.random.default_rng(4).standard_normal((1, 10_000, 2))
    y = s6_forward(x, _params(2, 4)).numpy()
    assert np.all(np.isfinite(y))


def test_s6_methods_agree():
    x = np.random.default_rng(5).standard_normal((2, 50, 3))
    p = _params()
    a = s6_forward(x, p, method="sequential").numpy()
    b = s6_forward(x, p, method="parallel", chunk=7).numpy()
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_s6_gradcheck():
    p = _params(2, 3)
    names = [k for k, _ in p.items()]

    def f(x, *vals):
        return s6_forward(x, ScanParams(**dict(zip(names, vals))))

    rep = gradcheck(f, [np.random.default_rng(6).standard_normal((2, 6, 2))] + [v for _, v in p.items()])
    assert rep.passed, str(rep)


def test_selective_scan_gradcheck_sequential_method():
    rng = np.random.default_rng(7)
    inputs = [rng.uniform(0.1, 0.8, (1, 7, 2)), -rng.uniform(0.5, 2, (2, 3)), rng.standard_normal((1, 7, 3)),
              rng.standard_normal((1, 7, 3)), rng.standard_normal((1, 7, 2))]
    rep = gradcheck(lambda *a: selective_scan(*a, method="sequential"), inputs)
    assert rep.passed, str(rep)


def test_scan_params_from_mapping_round_trip():
    p = _params()
    m = {f"s/{k}": v for k, v in p.items()}
    q = ScanParams.from_mapping(m, "s/")
    for (k, a), (_, b) in zip(p.items(), q.items()):
        assert a is b, k
    assert isinstance(Tensor(q.a_log), Tensor)

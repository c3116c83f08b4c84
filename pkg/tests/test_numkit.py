import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vminalign import numkit
from vminalign.errors import EmptyInput, NonFinite, RankDeficient, ShapeMismatch, ZeroVariance

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_solve_exact_line():
    np.testing.assert_allclose(numkit.solve_least_squares([[1], [2], [3]], [2, 4, 6]), [2.0], rtol=1e-14)


def test_solve_identity():
    np.testing.assert_allclose(numkit.solve_least_squares([[1, 0], [0, 1]], [5, 7]), [5.0, 7.0], rtol=1e-14)


def test_solve_matches_normal_equations_oracle():
    # (A^T A)^-1 A^T t by hand: A^T A = [[6,3],[3,3]], A^T t = [12,9] -> [1, 2]
    A = np.array([[1, 0], [0, 1], [1, 1], [2, 1]], dtype=float)
    t = np.array([1, 2, 3, 4], dtype=float)
    expected = np.array([1.0, 2.0])
    np.testing.assert_allclose(np.linalg.inv(A.T @ A) @ A.T @ t, expected, rtol=1e-12)
    np.testing.assert_allclose(numkit.solve_least_squares(A, t), expected, rtol=1e-12)


def test_solve_agrees_with_normal_equations_on_random_well_conditioned():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(50, 5))
    t = rng.normal(size=50)
    ne = np.linalg.solve(A.T @ A, A.T @ t)
    np.testing.assert_allclose(numkit.solve_least_squares(A, t), ne, rtol=1e-8, atol=1e-12)


def test_solve_rank_deficient():
    A = np.array([[1, 2], [2, 4], [3, 6.0]])
    with pytest.raises(RankDeficient):
        numkit.solve_least_squares(A, [1, 2, 3])


def test_solve_nearly_collinear_trips_threshold():
    rng = np.random.default_rng(0)
    a = rng.normal(size=20)
    A = np.column_stack([a, a + 1e-13 * rng.normal(size=20)])
    with pytest.raises(RankDeficient):
        numkit.solve_least_squares(A, rng.normal(size=20))


def test_rank_estimate_ignores_column_units():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(30, 3)) * np.array([1e-9, 1.0, 1e9])
    c = numkit.solve_least_squares(A, A @ np.array([1e9, 2.0, 3e-9]))
    np.testing.assert_allclose(c, [1e9, 2.0, 3e-9], rtol=1e-8)


@pytest.mark.parametrize("A,t", [([[1], [2]], [1, 2, 3]), ([[1, 2]], [1]), ([1, 2], [1, 2])])
def test_solve_shape_mismatch(A, t):
    with pytest.raises(ShapeMismatch):
        numkit.solve_least_squares(A, t)


def test_solve_rejects_nan():
    with pytest.raises(NonFinite):
        numkit.solve_least_squares([[1.0], [np.nan]], [1, 2])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 6), st.integers(0, 2**32 - 1))
def test_residual_orthogonal_to_column_space(d, extra, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d + extra, d)) * rng.uniform(0.1, 10, size=d)
    t = rng.normal(size=d + extra)
    assume(numkit.reciprocal_condition(A) > 1e-6)
    c = numkit.solve_least_squares(A, t)
    g = A.T @ (t - A @ c)
    assert np.linalg.norm(g) <= 1e-8 * max(np.linalg.norm(A) * np.linalg.norm(t), 1e-300)


def test_centralize_examples():
    Mc, mu = numkit.centralize([[1], [3]])
    np.testing.assert_array_equal(Mc, [[-1], [1]])
    np.testing.assert_array_equal(mu, [2])
    Mc, mu = numkit.centralize([[5, 5]])
    np.testing.assert_array_equal(Mc, [[0, 0]])
    np.testing.assert_array_equal(mu, [5, 5])


def test_centralize_hand_sums():
    # column sums 9 and 12 over 3 rows
    Mc, mu = numkit.centralize([[1, 2], [3, 4], [5, 6]])
    np.testing.assert_array_equal(mu, [3, 4])
    np.testing.assert_array_equal(Mc, [[-2, -2], [0, 0], [2, 2]])


def test_centralize_empty():
    with pytest.raises(EmptyInput):
        numkit.centralize(np.empty((0, 2)))


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 12), st.integers(1, 4)), elements=finite))
def test_centralize_idempotent_and_mean_free(M):
    Mc, _ = numkit.centralize(M)
    scale = max(1.0, float(np.abs(M).max()))
    assert np.all(np.abs(Mc.mean(axis=0)) <= 1e-12 * scale)
    Mcc, _ = numkit.centralize(Mc)
    np.testing.assert_allclose(Mcc, Mc, atol=1e-12 * scale)


def test_rmse_examples():
    assert numkit.rmse([0, 0, 0]) == 0.0
    assert numkit.rmse([-0.25]) == 0.25
    assert numkit.rmse([3, 4]) == pytest.approx(3.5355339, abs=1e-7)


def test_rmse_empty():
    with pytest.raises(EmptyInput):
        numkit.rmse([])


@given(arrays(float, st.integers(1, 20), elements=finite), finite)
def test_rmse_homogeneous(r, k):
    assert numkit.rmse(k * r) == pytest.approx(abs(k) * numkit.rmse(r), rel=1e-12, abs=1e-300)


def test_pearson_examples():
    assert numkit.pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-15)
    assert numkit.pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-15)
    # sum of products 4 over sqrt(5 * 5)
    assert numkit.pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-14)


def test_pearson_errors():
    with pytest.raises(ZeroVariance):
        numkit.pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ZeroVariance):
        numkit.pearson([0.1, 0.1, 0.1], [1, 2, 3])
    with pytest.raises(ShapeMismatch):
        numkit.pearson([1, 2], [1, 2, 3])
    with pytest.raises(ShapeMismatch):
        numkit.pearson([1], [1])


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50).filter(lambda a: abs(a) > 1e-3), finite)
def test_pearson_affine(seed, a, b):
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=10), rng.normal(size=10)
    p = numkit.pearson(u, v)
    assert -1.0 <= p <= 1.0
    assert numkit.pearson(a * u + b, v) == pytest.approx(np.sign(a) * p, abs=1e-9)
    assert numkit.pearson(-u, v) == pytest.approx(-p, abs=1e-12)


def test_r_squared_examples():
    assert numkit.r_squared([1, 2, 3], [1, 2, 3]) == 1.0
    assert numkit.r_squared([1, 2, 3], [2, 2, 2]) == 0.0
    # SS_res = 4 * 0.25 = 1, SS_tot = 5
    assert numkit.r_squared([1, 2, 3, 4], [1.5, 1.5, 3.5, 3.5]) == pytest.approx(0.8, abs=1e-14)


def test_r_squared_unbounded_below():
    assert numkit.r_squared([1, 2, 3], [30, -40, 50]) < -100


def test_r_squared_errors():
    with pytest.raises(ZeroVariance):
        numkit.r_squared([2, 2, 2], [1, 2, 3])
    with pytest.raises(ShapeMismatch):
        numkit.r_squared([1, 2, 3], [1, 2])


@given(arrays(float, 8, elements=finite), arrays(float, 8, elements=finite))
def test_r_squared_at_most_one(y, p):
    assume(np.ptp(y) > 1e-6)
    assert numkit.r_squared(y, p) <= 1.0

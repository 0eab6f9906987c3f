import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mtaesthetic import kernels
from mtaesthetic.errors import ContractViolation, DegenerateSubtaskError, NotPSDError, SingularMatrixError
from mtaesthetic.linalg import covariance_to_correlation, psd_sqrt, sym_eigendecompose, sym_inverse

TRIALS = 200


def random_spd(rng, n, cond=1e3):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    vals = np.exp(rng.uniform(0.0, np.log(cond), n))
    return (q * vals) @ q.T


# -- eigendecomposition ------------------------------------------------------


def test_eig_diagonal():
    vals, vecs = sym_eigendecompose(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(vals, [3.0, 1.0])
    np.testing.assert_allclose(np.abs(vecs), np.eye(2))


def test_eig_two_by_two_by_hand():
    # det([[2-t, 1], [1, 2-t]]) = (2-t)^2 - 1 = 0  ->  t = 3, 1
    vals, vecs = sym_eigendecompose([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(vals, [3.0, 1.0], atol=1e-14)
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(np.abs(vecs[:, 0]), [s, s], atol=1e-14)


def test_eig_identity():
    vals, _ = sym_eigendecompose(np.eye(5))
    np.testing.assert_array_equal(vals, np.ones(5))


def test_eig_rejects_asymmetric():
    with pytest.raises(ContractViolation):
        sym_eigendecompose([[1.0, 2.0], [0.0, 1.0]])


def test_eig_rejects_nonfinite():
    with pytest.raises(ContractViolation):
        sym_eigendecompose([[1.0, np.nan], [np.nan, 1.0]])


def test_eig_sweep_budget_exhausted():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((12, 12))
    with pytest.raises(Exception) as info:
        sym_eigendecompose(a + a.T, max_sweeps=1)
    assert "sweep" in str(info.value)


@settings(max_examples=TRIALS, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_eig_reconstruction_and_orthonormality(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) * rng.uniform(0.1, 10)
    m = a + a.T
    vals, q = sym_eigendecompose(m)
    assert np.all(np.diff(vals) <= 0)
    tol = 1e-8 * (1 + np.abs(m).max())
    np.testing.assert_allclose((q * vals) @ q.T, m, atol=tol, rtol=0)
    np.testing.assert_allclose(q.T @ q, np.eye(n), atol=1e-8, rtol=0)
    np.testing.assert_allclose(vals, np.sort(np.linalg.eigvalsh(m))[::-1], atol=tol, rtol=0)


# -- psd_sqrt ----------------------------------------------------------------


def test_sqrt_diagonal():
    np.testing.assert_allclose(psd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-15)


def test_sqrt_identity():
    np.testing.assert_allclose(psd_sqrt(np.eye(3)), np.eye(3), atol=1e-15)


def test_sqrt_two_by_two_squares_back():
    m = np.array([[2.0, 1.0], [1.0, 2.0]])
    r = psd_sqrt(m)
    np.testing.assert_allclose(r @ r, m, atol=1e-14)
    # closed form: eigenvalues 3, 1 on (1,1)/sqrt2, (1,-1)/sqrt2
    a, b = (np.sqrt(3) + 1) / 2, (np.sqrt(3) - 1) / 2
    np.testing.assert_allclose(r, [[a, b], [b, a]], atol=1e-14)


def test_sqrt_clamps_roundoff_negatives():
    q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((4, 4)))
    m = (q * np.array([2.0, 1.0, 0.5, -1e-12])) @ q.T
    m = 0.5 * (m + m.T)
    r = psd_sqrt(m)
    assert np.linalg.eigvalsh(r).min() > -1e-12


def test_sqrt_rejects_clearly_negative():
    with pytest.raises(NotPSDError):
        psd_sqrt(np.diag([1.0, -0.5]))


@settings(max_examples=TRIALS, deadline=None)
@given(st.integers(1, 12), st.integers(1, 15), st.integers(0, 2**32 - 1))
def test_sqrt_squares_to_input(n, k, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((k, n))
    m = a.T @ a  # PSD, rank min(k, n)
    r = psd_sqrt(m)
    np.testing.assert_allclose(r, r.T, atol=1e-12)
    assert np.linalg.eigvalsh(r).min() >= -1e-8 * np.trace(r)
    np.testing.assert_allclose(r @ r, m, atol=1e-7 * np.abs(m).max(), rtol=0)


# -- sym_inverse ------------------------------------------------------------


def test_inverse_diagonal():
    np.testing.assert_allclose(sym_inverse(np.diag([2.0, 4.0]), 0.0), np.diag([0.5, 0.25]), atol=1e-15)


def test_inverse_identity():
    np.testing.assert_allclose(sym_inverse(np.eye(4), 0.0), np.eye(4), atol=1e-15)


def test_inverse_ridge_shifts():
    np.testing.assert_allclose(sym_inverse(np.diag([1.0, 3.0]), 1.0), np.diag([0.5, 0.25]), atol=1e-15)


def test_inverse_random_spd_5x5():
    m = random_spd(np.random.default_rng(11), 5)
    np.testing.assert_allclose(m @ sym_inverse(m, 0.0), np.eye(5), atol=1e-6)


def test_inverse_singular():
    with pytest.raises(SingularMatrixError):
        sym_inverse(np.diag([1.0, 0.0]), 0.0)


def test_inverse_default_ridge_rescues_rank_deficiency():
    inv = sym_inverse(np.diag([1.0, 1e-9]))
    assert np.all(np.isfinite(inv))


def test_inverse_negative_ridge():
    with pytest.raises(ContractViolation):
        sym_inverse(np.eye(2), -1.0)


@settings(max_examples=TRIALS, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_inverse_times_input_is_identity(n, seed):
    m = random_spd(np.random.default_rng(seed), n)
    np.testing.assert_allclose(m @ sym_inverse(m, 0.0), np.eye(n), atol=1e-6, rtol=0)


@settings(max_examples=TRIALS, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_inverse_of_sqrt(n, seed):
    m = random_spd(np.random.default_rng(seed), n)
    r = psd_sqrt(m)
    np.testing.assert_allclose(sym_inverse(r, 0.0) @ r, np.eye(n), atol=1e-6, rtol=0)


# -- correlation ------------------------------------------------------------


def test_correlation_closed_form():
    np.testing.assert_allclose(
        covariance_to_correlation([[0.5, -0.3], [-0.3, 0.5]]), [[1.0, -0.6], [-0.6, 1.0]], atol=1e-15
    )


def test_correlation_scaled_identity():
    np.testing.assert_array_equal(covariance_to_correlation(0.2 * np.eye(3)), np.eye(3))


def test_correlation_degenerate_names_index():
    with pytest.raises(DegenerateSubtaskError) as info:
        covariance_to_correlation(np.diag([1.0, 0.0, 2.0]))
    assert info.value.index == 1


def test_correlation_scalar_oracle():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((6, 6))
    m = a @ a.T + 6 * np.eye(6)
    c = covariance_to_correlation(m)
    for i in range(6):
        for j in range(6):
            expect = 1.0 if i == j else m[i, j] / (m[i, i] * m[j, j]) ** 0.5
            assert abs(c[i, j] - expect) < 1e-14
    assert np.all(np.diag(c) == 1.0)


@settings(max_examples=TRIALS, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(-3, 3)))
def test_correlation_idempotent_and_bounded(a):
    m = a @ a.T + 0.1 * np.eye(5)
    c = covariance_to_correlation(m)
    assert np.all(np.abs(c) <= 1.0 + 1e-10)
    np.testing.assert_allclose(covariance_to_correlation(c), c, atol=1e-10)


# -- both kernel backends give the same eigensystem -----------------------------


@pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="compiled kernels not built")
def test_jacobi_backends_agree():
    from mtaesthetic import _ckernels, _pykernels

    m = random_spd(np.random.default_rng(2), 9)
    d1, v1, s1 = _ckernels.jacobi_eigh(m.copy(), 1e-14, 100)
    d2, v2, s2 = _pykernels.jacobi_eigh(m.copy(), 1e-14, 100)
    assert s1 == s2 > 0
    np.testing.assert_allclose(d1, d2, atol=1e-12)
    np.testing.assert_allclose(v1, v2, atol=1e-10)

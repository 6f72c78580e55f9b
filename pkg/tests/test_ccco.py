import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funcci.ccco import (
    conditional_grams,
    conjoined_grams,
    gcv_epsilon,
    make_R_Z,
    null_eigenvalues,
    run_test,
    test_statistic as statistic,
)
from funcci.config import PipelineConfig
from funcci.errors import InvalidArgumentError
from funcci.kernelmat import as_gram, center_gram, hadamard, psd_sqrt
from funcci.simlab import SimulationSpec, gen_dataset

from .helpers import random_gaussian_gram

seeds = st.integers(min_value=0, max_value=2**31 - 1)
FAST = PipelineConfig(draws=2000, grid_l=20)


def _triple(rng, n):
    K_X = random_gaussian_gram(rng, n)
    K_Y = random_gaussian_gram(rng, n)
    K_Z = random_gaussian_gram(rng, n)
    ddX, ddY = conjoined_grams(K_X, K_Y, K_Z)
    return K_X, K_Y, K_Z, center_gram(ddX), center_gram(ddY), center_gram(K_Z)


def _explicit_gamma(Kx, Ky, R, n):
    """(1/n) sum_k v_k v_k^T (Kx kron Ky) with v_k = (R e_k) kron (R e_k)."""
    V = np.column_stack([np.kron(R[:, k], R[:, k]) for k in range(n)])
    return (V @ V.T) @ np.kron(Kx, Ky) / n


def _nonzero(vals, scale):
    vals = np.sort(np.real(vals))[::-1]
    return vals[vals > 1e-9 * scale]


# ---------------------------------------------------------------- R_Z


def test_R_Z_of_zero_kernel_is_identity():
    Kc = center_gram(as_gram(np.ones((4, 4))))
    np.testing.assert_allclose(make_R_Z(Kc, 0.3, 4), np.eye(4), atol=1e-14)


def test_R_Z_preconditions():
    Kc = center_gram(as_gram(np.eye(3)))
    with pytest.raises(InvalidArgumentError):
        make_R_Z(Kc, 0.0, 3)
    with pytest.raises(InvalidArgumentError):
        make_R_Z(as_gram(np.eye(3)), 0.1, 3)
    with pytest.raises(InvalidArgumentError):
        make_R_Z(Kc, 0.1, 4)


@settings(max_examples=30, deadline=None)
@given(seed=seeds, n=st.integers(2, 15), eps=st.floats(1e-4, 1.0))
def test_R_Z_dual_forms(seed, n, eps):
    Kc = center_gram(random_gaussian_gram(np.random.default_rng(seed), n))
    R = make_R_Z(Kc, eps, n)
    K = Kc.entries
    other = np.eye(n) - K @ np.linalg.inv(K + n * eps * np.eye(n))
    assert np.linalg.norm(R - other) <= 1e-8 * max(1.0, np.linalg.norm(R))
    vals = np.linalg.eigvalsh(R)
    assert vals.min() > 0 and vals.max() <= 1 + 1e-10


# ---------------------------------------------------------------- statistic


def test_statistic_identity_example():
    n = 3
    cgs = conditional_grams(
        center_gram(as_gram(np.eye(n))), center_gram(as_gram(np.eye(n))), np.eye(n), 0.1
    )
    # trace(H H) / n = (n - 1) / n
    assert statistic(cgs, n) == pytest.approx(2 / 3, rel=1e-14)


def test_statistic_zero_when_Z_kernel_vanishes_and_X_trivial():
    n = 5
    zero = center_gram(as_gram(np.ones((n, n))))
    cgs = conditional_grams(zero, zero, np.eye(n), 0.1)
    assert statistic(cgs, n) == 0.0


@settings(max_examples=30, deadline=None)
@given(seed=seeds, n=st.integers(2, 15), eps=st.floats(1e-4, 0.5))
def test_trace_and_frobenius_forms(seed, n, eps):
    _, _, _, ddXc, ddYc, Kzc = _triple(np.random.default_rng(seed), n)
    R = make_R_Z(Kzc, eps, n)
    cgs = conditional_grams(ddXc, ddYc, R, eps)
    t = statistic(cgs, n)
    by_trace = np.trace(cgs.K_ddX_given_Z @ cgs.K_ddY_given_Z) / n
    # Frobenius form: || Kx^{1/2} R R Ky^{1/2} ||_F^2 / n
    M = psd_sqrt(ddXc.entries) @ R @ R @ psd_sqrt(ddYc.entries)
    by_frob = np.sum(M * M) / n
    assert t >= 0
    assert abs(t - by_trace) <= 1e-8 * max(abs(by_trace), 1e-300)
    assert abs(t - by_frob) <= 1e-8 * max(abs(by_frob), 1e-300)


# ---------------------------------------------------------------- spectrum


def test_null_eigenvalues_of_zero_kernels():
    n = 4
    zero = center_gram(as_gram(np.ones((n, n))))
    np.testing.assert_allclose(null_eigenvalues(zero, zero, np.eye(n), n), 0.0, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(seed=seeds, n=st.integers(2, 8), eps=st.floats(1e-3, 0.5))
def test_hadamard_form_vs_explicit_constructions(seed, n, eps):
    _, _, _, ddXc, ddYc, Kzc = _triple(np.random.default_rng(seed), n)
    R = make_R_Z(Kzc, eps, n)
    lam = null_eigenvalues(ddXc, ddYc, R, n)
    assert np.all(np.diff(lam) <= 0) and np.all(lam >= 0)
    # "nonzero" and the absolute floor are measured against the input scale,
    # since eigenvalues far below it carry only rounding noise
    scale = np.linalg.norm(ddXc.entries) * np.linalg.norm(ddYc.entries) / n
    got = _nonzero(lam, 1e-1 * scale)

    Lx = psd_sqrt(ddXc.entries) @ R
    Ly = psd_sqrt(ddYc.entries) @ R
    L = np.column_stack([np.kron(Lx[:, k], Ly[:, k]) for k in range(n)]) / np.sqrt(n)
    explicit_L = _nonzero(np.linalg.eigvalsh(L.T @ L), 1e-1 * scale)
    big = _nonzero(np.linalg.eigvals(_explicit_gamma(ddXc.entries, ddYc.entries, R, n)), 1e-1 * scale)

    for ref in (explicit_L, big):
        assert ref.size == got.size
        np.testing.assert_allclose(got, ref, rtol=1e-8, atol=1e-12 * scale)

    diag = np.sum(Lx * Lx, axis=0) * np.sum(Ly * Ly, axis=0) / n
    assert abs(lam.sum() - diag.sum()) <= 1e-10 * max(1.0, diag.sum())


def test_eigenvalue_sum_equals_null_mean():
    n = 6
    _, _, _, ddXc, ddYc, Kzc = _triple(np.random.default_rng(11), n)
    R = make_R_Z(Kzc, 0.05, n)
    lam = null_eigenvalues(ddXc, ddYc, R, n)
    # E[sum lam_k chi2_1] = trace(L^T L) = (1/n) sum_k ||Lx e_k||^2 ||Ly e_k||^2
    Lx = psd_sqrt(ddXc.entries) @ R
    Ly = psd_sqrt(ddYc.entries) @ R
    assert lam.sum() == pytest.approx(np.einsum("ik,ik,jk,jk->", Lx, Lx, Ly, Ly) / n, rel=1e-10)


# ---------------------------------------------------------------- GCV for epsilon


def _gcv_eps_brute(K_X, K_Y, Kzc, eps):
    n = K_X.shape[0]
    H = np.eye(n) - np.ones((n, n)) / n
    Kxy = H @ (K_X * K_Y) @ H
    lam = np.max(np.linalg.eigvalsh(Kzc))
    S = Kzc @ np.linalg.inv(Kzc + n * eps * lam * np.eye(n))
    resid = Kxy - S @ Kxy
    return np.sum(resid**2) / (1 - np.trace(S) / n) ** 2


def test_gcv_epsilon_toy():
    K_X = as_gram([[1.0, 0.3, 0.1], [0.3, 1.0, 0.6], [0.1, 0.6, 1.0]], "gaussian")
    K_Y = as_gram([[1.0, 0.8, 0.2], [0.8, 1.0, 0.4], [0.2, 0.4, 1.0]], "gaussian")
    K_Z = as_gram([[1.0, 0.5, 0.05], [0.5, 1.0, 0.7], [0.05, 0.7, 1.0]], "gaussian")
    Kzc = center_gram(K_Z)
    grid = [0.001, 0.5]
    best, scores = gcv_epsilon(K_X, K_Y, Kzc, grid)
    brute = [_gcv_eps_brute(K_X.entries, K_Y.entries, Kzc.entries, e) for e in grid]
    np.testing.assert_allclose(scores, brute, rtol=1e-10)
    assert best == grid[int(np.argmin(brute))]
    assert gcv_epsilon(K_X, K_Y, Kzc, [0.2])[0] == 0.2


def test_gcv_epsilon_plateau():
    K_X, K_Y, _, _, _, Kzc = _triple(np.random.default_rng(5), 10)
    H = np.eye(10) - np.ones((10, 10)) / 10
    Kxy = H @ (K_X.entries * K_Y.entries) @ H
    _, scores = gcv_epsilon(K_X, K_Y, Kzc, [1e8])
    assert scores[0] == pytest.approx(np.sum(Kxy**2), rel=1e-6)


def test_gcv_epsilon_preconditions():
    K_X, K_Y, K_Z, _, _, Kzc = _triple(np.random.default_rng(5), 5)
    with pytest.raises(InvalidArgumentError):
        gcv_epsilon(K_X, K_Y, Kzc, [])
    with pytest.raises(InvalidArgumentError):
        gcv_epsilon(K_X, K_Y, K_Z, [0.1])
    with pytest.raises(InvalidArgumentError):
        gcv_epsilon(center_gram(K_X), K_Y, Kzc, [0.1])


def test_conjoined_refuses_centered():
    K_X, K_Y, K_Z, _, _, _ = _triple(np.random.default_rng(2), 4)
    with pytest.raises(InvalidArgumentError):
        conjoined_grams(center_gram(K_X), K_Y, K_Z)
    ddX, _ = conjoined_grams(K_X, K_Y, K_Z)
    np.testing.assert_array_equal(ddX.entries, hadamard(K_X, K_Z).entries)


# ---------------------------------------------------------------- pipeline


def _sim(model, n=30, schedule="balanced", m=20, rep=0, seed=1):
    return gen_dataset(SimulationSpec(model, n, schedule, m=m, reps=rep + 1, seed=seed), rep)


def test_run_test_determinism():
    data = _sim(3)
    a = run_test(data, FAST)
    b = run_test(data, FAST)
    assert a.statistic == b.statistic and a.p_value == b.p_value
    np.testing.assert_array_equal(a.eigenvalues, b.eigenvalues)
    assert a.to_dict() == b.to_dict()


def test_run_test_invariant_to_subject_order():
    data = _sim(2)
    order = np.random.default_rng(0).permutation(data.n)
    a = run_test(data, FAST)
    b = run_test(data.permuted(order), FAST)
    assert b.statistic == pytest.approx(a.statistic, rel=1e-8)
    np.testing.assert_allclose(b.eigenvalues, a.eigenvalues, rtol=1e-7, atol=1e-10 * a.eigenvalues[0])
    assert b.tuning.epsilon_star == a.tuning.epsilon_star


def test_run_test_symmetric_in_x_and_y():
    data = _sim(5)
    a = run_test(data, FAST)
    b = run_test(data.swapped_xy(), FAST)
    assert b.statistic == pytest.approx(a.statistic, rel=1e-8)
    np.testing.assert_allclose(b.eigenvalues, a.eigenvalues, rtol=1e-7, atol=1e-10 * a.eigenvalues[0])


def test_run_test_result_fields():
    res = run_test(_sim(1), FAST)
    assert res.n == 30 and 0 < res.p_value <= 1 and res.statistic >= 0
    assert res.tuning.delta_star is None and res.tuning.gamma_T is None
    assert res.diagnostics["balanced"] == 1.0
    d = res.to_dict(eigen_head=3)
    assert len(d["eigenvalues"]) == 3


def test_run_test_unbalanced_sets_delta():
    res = run_test(_sim(3, schedule="unbalanced"), FAST)
    assert res.tuning.delta_star in FAST.grid_T
    assert res.tuning.gamma_T > 0
    assert res.diagnostics["balanced"] == 0.0


def test_forced_unbalanced_on_balanced_data():
    data = _sim(3)
    res = run_test(data, FAST.updated(balanced=False))
    assert res.tuning.delta_star is not None

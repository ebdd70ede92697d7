import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from covse.errors import DimensionError, SingularEstimateError
from covse.estimators import (EstimatorKind, LsPair, build_filter, cross_cov_RS, gen_phase_shifts, gen_pilots,
                              ls_estimates, regularize, sample_cov_QP)
from covse.numkit import RngStream, random_psd, sample_cgauss


@pytest.mark.parametrize("P,K", [(10, 10), (1, 1), (4, 2), (7, 3)])
def test_pilots_orthogonal(P, K):
    pk = gen_pilots(P, K)
    assert pk.shape == (K, P)
    np.testing.assert_allclose(pk.conj() @ pk.T, P * np.eye(K), atol=1e-10)


def test_pilots_reject_short():
    with pytest.raises(ValueError):
        gen_pilots(3, 4)


def test_phase_shifts_zero_mean_and_independent():
    th = gen_phase_shifts(2, 100_000, RngStream(11))
    assert np.all((th >= 0) & (th < 2 * np.pi))
    e = np.exp(1j * th)
    assert np.all(np.abs(e.mean(axis=1)) < 3 / np.sqrt(th.shape[1]))
    corr = e[0] * e[1].conj()
    assert abs(corr.mean()) < 3 * np.sqrt(np.mean(np.abs(corr - corr.mean()) ** 2) / corr.size)
    np.testing.assert_array_equal(th, gen_phase_shifts(2, 100_000, RngStream(11)))


def _noise_free(h, theta):
    return ls_estimates(h, theta, np.inf, 1, 0)


def test_ls_noise_free_identities():
    rng = np.random.default_rng(0)
    h = rng.normal(size=(5, 1, 3)) + 1j * rng.normal(size=(5, 1, 3))
    pair = _noise_free(h, gen_phase_shifts(1, 5, rng))
    np.testing.assert_allclose(pair.h1, h[:, 0])
    np.testing.assert_allclose(pair.h2, h[:, 0])
    h = rng.normal(size=(5, 2, 3)) + 1j * rng.normal(size=(5, 2, 3))
    th = gen_phase_shifts(2, 5, rng)
    pair = _noise_free(h, th)
    expect = (1 - np.exp(1j * (th[1] - th[0])))[:, None] * h[:, 1]
    np.testing.assert_allclose(pair.h1 - pair.h2, expect, atol=1e-13)


def test_ls_noise_free_full_matrix_matches_fast_path():
    rng = np.random.default_rng(1)
    h = rng.normal(size=(6, 3, 2, 4)) + 1j * rng.normal(size=(6, 3, 2, 4))
    th = gen_phase_shifts(3, 6, rng)
    full = ls_estimates(h, th, 1e30, 4, 2, full_matrix=True, user=1)
    fast = ls_estimates(h[:, :, 1], th, np.inf, 4, 2)
    np.testing.assert_allclose(full.h1, fast.h1, atol=1e-12)
    np.testing.assert_allclose(full.h2, fast.h2, atol=1e-12)


def _mean_within(samples, target, k=3.0):
    m = samples.mean(axis=0)
    n = samples.shape[0]
    se_r = np.real(samples).std(axis=0, ddof=1) / np.sqrt(n)
    se_i = np.imag(samples).std(axis=0, ddof=1) / np.sqrt(n)
    return (np.all(np.abs(np.real(m - target)) <= k * se_r + 1e-14)
            and np.all(np.abs(np.imag(m - target)) <= k * se_i + 1e-14))


@pytest.mark.parametrize("full_matrix", [False, True])
def test_decontamination_oracle(full_matrix):
    """E{h1 h2^H} equals the own-cell covariance despite pilot contamination."""
    M, N = 4, 100_000
    gen = np.random.default_rng(7)
    R = [random_psd(M, gen, scale=s) for s in (1.0, 0.7, 0.4)]
    h = np.stack([sample_cgauss(Rl, N * (2 if full_matrix else 1), gen) for Rl in R], axis=1)
    if full_matrix:
        h = h.reshape(N, 2, 3, M).transpose(0, 2, 1, 3)
    th = gen_phase_shifts(3, N, gen)
    pair = ls_estimates(h, th, 1.0, 4, gen, full_matrix=full_matrix)
    outer = pair.h1[:, :, None] * pair.h2[:, None, :].conj()
    assert _mean_within(outer, R[0])
    q = pair.h1[:, :, None] * pair.h1[:, None, :].conj()
    assert _mean_within(q, sum(R) + np.eye(M) / 4)


def test_sample_cov_trivial_cases():
    v = np.array([1 + 1j, 2.0, -1j])
    Q, P = sample_cov_QP(np.tile(v, (5, 1)))
    np.testing.assert_allclose(Q, np.outer(v, v.conj()))
    np.testing.assert_array_equal(P, np.real(np.diag(Q)))
    h = sample_cgauss(random_psd(3, 1), 20, 2)
    Q, P = sample_cov_QP(h)
    np.testing.assert_allclose(P, np.real(np.diag(Q)), rtol=1e-15)
    with pytest.raises(ValueError):
        sample_cov_QP(np.zeros((0, 3)))


def test_sample_cov_unbiased():
    M, NQ, reps = 4, 20, 2000
    Q = random_psd(M, 4) + np.eye(M)
    h = sample_cgauss(Q, NQ * reps, 5).reshape(reps, NQ, M)
    Qh, _ = sample_cov_QP(h)
    assert _mean_within(Qh, Q)
    big, _ = sample_cov_QP(sample_cgauss(Q, 100_000, 6))
    assert np.linalg.norm(big - Q) / np.linalg.norm(Q) < 3 * np.sqrt(M ** 2 / 100_000)


def test_cross_cov_trivial_and_hermitian():
    v = np.array([[1 + 2j, -1.0]])
    R, S = cross_cov_RS(LsPair(v, v))
    np.testing.assert_allclose(R, np.outer(v[0], v[0].conj()))
    np.testing.assert_allclose(S, np.abs(v[0]) ** 2)
    rng = np.random.default_rng(3)
    a, b = (rng.normal(size=(6, 3)) + 1j * rng.normal(size=(6, 3)) for _ in range(2))
    R, S = cross_cov_RS(LsPair(a, b))
    np.testing.assert_array_equal(R, R.conj().T)
    np.testing.assert_allclose(S, np.real(np.diag(R)), rtol=1e-14)
    with pytest.raises(DimensionError):
        cross_cov_RS(LsPair(a))
    with pytest.raises(DimensionError):
        cross_cov_RS(LsPair(a, b[:, :2]))


def test_cross_cov_unbiased():
    M, NR, reps = 4, 10, 3000
    gen = np.random.default_rng(8)
    R = [random_psd(M, gen), random_psd(M, gen, scale=0.5)]
    h = np.stack([sample_cgauss(Rl, NR * reps, gen) for Rl in R], axis=1)
    pair = ls_estimates(h, gen_phase_shifts(2, NR * reps, gen), 1.0, 2, gen)
    Rd, Sd = cross_cov_RS(LsPair(pair.h1.reshape(reps, NR, M), pair.h2.reshape(reps, NR, M)))
    assert _mean_within(Rd, R[0])
    assert _mean_within(Sd, np.real(np.diag(R[0])))


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 1), st.integers(0, 2 ** 31))
def test_regularize_affine(alpha, seed):
    A, B = random_psd(3, seed), random_psd(3, seed + 1) + np.eye(3)
    out = regularize(A, alpha, B)
    np.testing.assert_allclose(out, alpha * A + (1 - alpha) * B)
    np.testing.assert_array_equal(regularize(A, 1.0, B), A)
    np.testing.assert_array_equal(regularize(A, 0.0, B), B)


def test_regularize_rejects_alpha():
    with pytest.raises(ValueError):
        regularize(np.eye(2), 1.1, np.eye(2))


def test_regularized_mean_oracle():
    M, NR, reps = 3, 8, 4000
    R = random_psd(M, 9)
    gen = np.random.default_rng(10)
    h = sample_cgauss(R, NR * reps, gen)[:, None, :]
    pair = ls_estimates(h, gen_phase_shifts(1, NR * reps, gen), 1.0, 2, gen)
    Rd, _ = cross_cov_RS(LsPair(pair.h1.reshape(reps, NR, M), pair.h2.reshape(reps, NR, M)))
    assert _mean_within(regularize(Rd, 0.95, np.eye(M)), 0.95 * R + 0.05 * np.eye(M))


def test_filters_trivial():
    R = random_psd(4, 0) + np.eye(4)
    np.testing.assert_allclose(build_filter("lmmse", R=R, Q=R).W, np.eye(4), atol=1e-12)
    P = np.array([1.0, 2.0, 3.0])
    f = build_filter(EstimatorKind.EL_LMMSE, S=2.5 * P, P=P)
    np.testing.assert_allclose(f.W, 2.5)
    np.testing.assert_allclose(f.dense(), 2.5 * np.eye(3))
    Q = random_psd(4, 1) + np.eye(4)
    np.testing.assert_allclose(build_filter("lmmse-type", R=R, Q=Q).W, R @ np.linalg.inv(Q), atol=1e-12)


def test_filter_singular_refused():
    Q = random_psd(4, 2, rank=2)
    with pytest.raises(SingularEstimateError):
        build_filter("lmmse-type", R=np.eye(4), Q=Q)
    with pytest.raises(SingularEstimateError):
        build_filter("el-lmmse-type", S=np.ones(2), P=np.array([1.0, 0.0]))
    with pytest.raises(DimensionError):
        build_filter("lmmse", R=np.eye(3), Q=np.eye(4))


def test_lmmse_beats_ls():
    M, N = 4, 100_000
    gen = np.random.default_rng(12)
    R = [random_psd(M, gen, rank=2), random_psd(M, gen, scale=0.3)]
    h = np.stack([sample_cgauss(Rl, N, gen) for Rl in R], axis=1)
    pair = ls_estimates(h, None, 1.0, 2, gen)
    Q = R[0] + R[1] + np.eye(M) / 2
    W = build_filter("lmmse", R=R[0], Q=Q).W
    mse_ls = np.mean(np.sum(np.abs(pair.h1 - h[:, 0]) ** 2, axis=1))
    mse_lmmse = np.mean(np.sum(np.abs(pair.h1 @ W.T - h[:, 0]) ** 2, axis=1))
    assert mse_lmmse <= mse_ls
    # closed-form MSE oracle: tr(R - R Q^-1 R)
    ref = np.real(np.trace(R[0] - W @ R[0]))
    assert mse_lmmse == pytest.approx(ref, rel=0.02)

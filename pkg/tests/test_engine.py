import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from covse import (BudgetExhaustedError, InvalidRegimeError, PilotBudget, PoleError, Regularization, TermSet,
                   known_cov_terms, nq_threshold, nr_threshold, nr_threshold_literal, se_report, sinr,
                   spectral_efficiency, thm1_terms, thm2_terms, thm3_terms)
from covse.engine import estimator_terms, sinr_from_parts
from covse.moments import eg_matrices, wishart_kappas
from covse.numkit import random_psd
from covse.scenario import SystemConfig, build_covariance_set, covariance_set_from_matrices, one_ring_covariance

THMS = {"lmmse-type": thm1_terms, "el-lmmse-type": thm2_terms, "el-lmmse-type-regp": thm3_terms}


def _budget(N_R, N_Q, P=4):
    return PilotBudget(P, 100, 25000, N_R, N_Q)


def _total(t):
    return t.den1 + float(np.sum(t.den2)) - t.num ** 2


def _diag_cov(L=2, M=4, seed=0):
    gen = np.random.default_rng(seed)
    R = np.stack([[np.diag(gen.uniform(0.2, 2.0, M)).astype(complex)] for _ in range(L)])
    return covariance_set_from_matrices(R, 4, 1.0)


# pre-log and SE ---------------------------------------------------------------

def test_prelog_exact():
    assert PilotBudget(10, 100, 25000, 0, 10).prelog == 0.9
    assert PilotBudget(10, 100, 25000, 2000, 10).prelog == 0.892


def test_spectral_efficiency():
    b = PilotBudget(10, 100, 25000, 0, 10)
    assert spectral_efficiency(1.0, b, "ul") == 0.9
    assert spectral_efficiency(3.0, None, "dl") == 2.0
    with pytest.raises(BudgetExhaustedError):
        spectral_efficiency(1.0, PilotBudget(50, 100, 100, 100, 10), "ul")
    with pytest.raises(ValueError):
        spectral_efficiency(-1.0, b, "ul")


def test_budget_validation():
    with pytest.raises(ValueError):
        PilotBudget(4, 100, 100, 101, 10)
    with pytest.raises(ValueError):
        PilotBudget(4, 100, 100, 10, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 50), st.integers(51, 500), st.integers(1, 30000), st.data())
def test_prelog_decreasing_affine(P, C_u, tau_s, data):
    n1 = data.draw(st.integers(0, tau_s))
    n2 = data.draw(st.integers(0, tau_s))
    b1, b2 = PilotBudget(P, C_u, tau_s, n1, 10), PilotBudget(P, C_u, tau_s, n2, 10)
    if n1 < n2:
        assert b1.prelog > b2.prelog
    assert b1.prelog == pytest.approx(1 - P / C_u - n1 * P / (C_u * tau_s), abs=1e-15)


# SINR --------------------------------------------------------------------------

def test_sinr_trivial_cases():
    assert sinr_from_parts(0.0, 1.0) == 0.0
    assert sinr_from_parts(2.0, 5.0) == 4.0
    with pytest.raises(InvalidRegimeError):
        sinr_from_parts(2.0, 3.0)


def test_dl_infinite_power_limit(desk8):
    t = known_cov_terms(desk8, 0, "lmmse", "dl")
    assert sinr(t, lam=math.inf) == pytest.approx(t.num ** 2 / _total(t))
    assert sinr(t, lam=1e12) == pytest.approx(sinr(t, lam=math.inf), rel=1e-9)
    with pytest.raises(ValueError):
        sinr(t)
    with pytest.raises(ValueError):
        sinr(t, "ul")


# known-covariance baselines ------------------------------------------------------

def test_known_single_cell_elementwise():
    gen = np.random.default_rng(1)
    R = np.diag(gen.uniform(0.5, 2, 4)).astype(complex)[None, None]
    cov = covariance_set_from_matrices(R, 4, 1.0)
    t = known_cov_terms(cov, 0, "el-lmmse")
    assert t.den2[0] == pytest.approx(t.num ** 2, rel=1e-14)


def test_known_diagonal_full_equals_elementwise():
    cov = _diag_cov()
    for link in ("ul", "dl"):
        a = known_cov_terms(cov, 0, "lmmse", link)
        b = known_cov_terms(cov, 0, "el-lmmse", link)
        assert a.num == pytest.approx(b.num, rel=1e-13)
        assert a.den1 == pytest.approx(b.den1, rel=1e-13)
        np.testing.assert_allclose(a.den2, b.den2, rtol=1e-13)


def test_known_terms_brute_force(desk8):
    R, Q = desk8.sharing(0)[0], desk8.Q_u[0]
    W = R @ np.linalg.inv(Q)
    t = known_cov_terms(desk8, 0, "lmmse")
    assert t.num == pytest.approx(abs(np.trace(W.conj().T @ R)), rel=1e-12)
    assert t.den1 == pytest.approx(np.real(np.trace(W @ Q @ W.conj().T @ desk8.R_s)), rel=1e-12)
    with pytest.raises(ValueError):
        known_cov_terms(desk8, 0, "lmmse-type")


# theorem limits and reductions ----------------------------------------------------

def test_kappa2_at_twice_m(desk8):
    M = desk8.M
    assert wishart_kappas(2 * M, M)[1] == pytest.approx(4 * M * M / (M * M - 1))


@pytest.mark.parametrize("model", ["exact", "nominal"])
@pytest.mark.parametrize("link", ["ul", "dl"])
def test_large_sample_limit(desk8, model, link):
    reg = Regularization(1.0, 1.0)
    b = _budget(math.inf, 10 ** 9)
    for kind, ref in (("lmmse-type", "lmmse"), ("el-lmmse-type", "el-lmmse"), ("el-lmmse-type-regp", "el-lmmse")):
        t = THMS[kind](desk8, 0, b, reg, link, model)
        k = known_cov_terms(desk8, 0, ref, link)
        assert t.num == pytest.approx(k.num, rel=1e-7)
        assert t.den1 == pytest.approx(k.den1, rel=1e-7)
        np.testing.assert_allclose(t.den2, k.den2, rtol=1e-7)


def _scalar_cov(seed):
    gen = np.random.default_rng(seed)
    R = gen.uniform(0.05, 2.0, size=(3, 1, 1, 1)).astype(complex)
    return covariance_set_from_matrices(R, 2, 1.0)


@pytest.mark.parametrize("model", ["exact", "nominal"])
@pytest.mark.parametrize("link", ["ul", "dl"])
def test_scalar_antenna_reductions(model, link):
    cov = _scalar_cov(2)
    reg = Regularization(0.8, 1.0)
    for N_Q in (4, 9, 50):
        b = _budget(7, N_Q)
        t1 = thm1_terms(cov, 0, b, reg, link, model)
        t2 = thm2_terms(cov, 0, b, reg, link, model)
        t3 = thm3_terms(cov, 0, b, reg, link, model)
        for a, c in ((t1, t2), (t2, t3)):
            assert a.num == pytest.approx(c.num, rel=1e-10)
            assert a.den1 == pytest.approx(c.den1, rel=1e-10)
            np.testing.assert_allclose(a.den2, c.den2, rtol=1e-10)
    assert nr_threshold(cov, 0, 9, reg, link, lam=10.0, model=model).is_none


@pytest.mark.parametrize("model", ["exact", "nominal"])
def test_thm3_equals_thm2_unregularized(desk8, model):
    reg = Regularization(0.95, 1.0)
    for N_Q in (3, 24, 200):
        b = _budget(50, N_Q)
        for link in ("ul", "dl"):
            t2 = thm2_terms(desk8, 0, b, reg, link, model)
            t3 = thm3_terms(desk8, 0, b, reg, link, model)
            assert t3.num == pytest.approx(t2.num, rel=1e-8)
            assert t3.den1 == pytest.approx(t2.den1, rel=1e-8)
            np.testing.assert_allclose(t3.den2, t2.den2, rtol=1e-8)


def test_thm3_deterministic_inverse(desk8):
    """G = E^2 with E = 1/P: no sampling penalty from the P estimate."""
    reg = Regularization(0.9, 0.95)
    P = desk8.P_u[0]
    eg = eg_matrices(P, 0.0, P, 24)
    np.testing.assert_allclose(eg.G, eg.E ** 2)
    b = _budget(40, 24)
    t3 = thm3_terms(desk8, 0, b, reg, "ul", "nominal", EG=eg)
    lim = thm2_terms(desk8, 0, _budget(40, 10 ** 10), reg, "ul", "nominal")
    assert t3.num == pytest.approx(lim.num, rel=1e-8)
    assert t3.den1 == pytest.approx(lim.den1, rel=1e-8)
    np.testing.assert_allclose(t3.den2, lim.den2, rtol=1e-8)
    with pytest.raises(ValueError):
        thm3_terms(desk8, 0, b, reg, EG=eg_matrices(P[:3], 0.5, 1.0, 24))


def test_pole_errors(desk8):
    reg = Regularization()
    M = desk8.M
    with pytest.raises(PoleError):
        thm1_terms(desk8, 0, _budget(10, M + 1), reg)
    thm1_terms(desk8, 0, _budget(10, M + 2), reg)
    with pytest.raises(PoleError):
        thm2_terms(desk8, 0, _budget(10, 2), reg)
    thm2_terms(desk8, 0, _budget(10, 3), reg)


@pytest.mark.parametrize("kind", list(THMS))
@pytest.mark.parametrize("link", ["ul", "dl"])
@pytest.mark.parametrize("model", ["exact", "nominal"])
def test_affine_decomposition(desk8, kind, link, model):
    reg = Regularization(0.95, 0.95)
    t_inf = THMS[kind](desk8, 0, _budget(math.inf, 24), reg, link, model)
    for N_R in (10, 1000):
        t = THMS[kind](desk8, 0, _budget(N_R, 24), reg, link, model)
        direct = _total(t)
        assert direct == pytest.approx(t_inf.b_const + t_inf.c_over_nr / N_R, rel=1e-10)
        assert abs(t.num_imag) <= 1e-9 * t.num


def test_terms_real_on_reference_geometry():
    cov = build_covariance_set(SystemConfig(L=3, K=2, M=12, P=4, user_azimuth_offset_deg=13.0))
    for kind, f in THMS.items():
        t = f(cov, 1, _budget(100, 40), Regularization(), "ul")
        assert abs(t.num_imag) <= 1e-9 * t.num


def test_se_report_consistency(desk8):
    b = _budget(200, 40)
    for kind in ("lmmse", "el-lmmse", "lmmse-type", "el-lmmse-type", "el-lmmse-type-regp"):
        r = se_report(desk8, 0, kind, b, Regularization(), 10.0)
        assert r.se_dl == pytest.approx(math.log2(1 + r.gamma_dl))
        assert r.se_ul == pytest.approx(r.prelog * math.log2(1 + r.gamma_ul))
        expect_pl = b.prelog if "type" in kind else b.with_(N_R=0).prelog
        assert r.prelog == expect_pl
        assert r.gamma_ul >= 0 and r.gamma_dl >= 0


def test_estimator_terms_dispatch(desk8):
    reg = Regularization()
    b = _budget(50, 24)
    for kind, f in THMS.items():
        a, c = estimator_terms(kind, desk8, 0, b, reg), f(desk8, 0, b, reg)
        assert (a.num, a.den1) == (c.num, c.den1)
    with pytest.raises(ValueError):
        thm1_terms(desk8, 0, b, reg, model="bogus")


# thresholds ---------------------------------------------------------------------------

@pytest.mark.parametrize("link", ["ul", "dl"])
@pytest.mark.parametrize("N_Q", [12, 24, 100, 400])
def test_literal_transcription_matches_nominal(desk8, link, N_Q):
    reg = Regularization(0.95, 0.95)
    a = nr_threshold(desk8, 0, N_Q, reg, link, lam=10.0, model="nominal")
    b = nr_threshold_literal(desk8, 0, N_Q, reg, link, lam=10.0)
    for name in "abcfgh":
        assert getattr(b, name) == pytest.approx(getattr(a, name), rel=1e-10)


def test_threshold_brackets_grid_crossing(desk8):
    reg = Regularization()
    res = nr_threshold(desk8, 0, 100, reg, "ul")
    assert not res.is_none
    lo, hi = math.floor(res.N_bar), math.ceil(res.N_bar)
    diff = lambda n: (sinr(thm1_terms(desk8, 0, _budget(n, 100), reg)) - sinr(thm2_terms(desk8, 0, _budget(n, 100), reg)))
    assert diff(lo) * diff(hi) <= 0 or lo == hi
    assert res.gamma_full(res.N_bar) == pytest.approx(res.gamma_el(res.N_bar), rel=1e-9)


def test_nq_threshold_definition(desk8):
    reg = Regularization()
    nq = nq_threshold(desk8, 0, reg, "ul", nq_range=(10, 200))
    assert nq is not None
    assert nr_threshold(desk8, 0, nq - 1, reg, "ul").is_none
    assert not nr_threshold(desk8, 0, nq, reg, "ul").is_none
    with pytest.raises(ValueError):
        nq_threshold(desk8, 0, reg, "ul", nq_range=(2, desk8.M + 1))
    assert nq_threshold(desk8, 0, reg, "dl", lam=10.0, nq_range=(10, 40)) is None

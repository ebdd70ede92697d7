import math

import numpy as np
import pytest
from scipy import integrate

from covse.errors import ConfigError
from covse.numkit import hermitian_eig
from covse.scenario import (Pathloss, SystemConfig, build_covariance_set, covariance_set_from_matrices,
                            db_to_linear, hex_bs_positions, one_ring_covariance, snr_from_distance,
                            ula_steering, user_positions)


def test_snr_from_distance():
    assert snr_from_distance(1.0) == pytest.approx(71.89)
    assert snr_from_distance(120.0) == pytest.approx(71.89 - 37.6 * math.log10(120.0), abs=1e-12)
    assert snr_from_distance(120.0) == pytest.approx(-6.29, abs=5e-3)
    assert snr_from_distance(300.0) == pytest.approx(-21.25, abs=5e-3)
    with pytest.raises(ValueError):
        snr_from_distance(0.0)


def test_pathloss_from_physical_slope_and_offset():
    pl = Pathloss.from_physical()
    assert pl.slope_db == pytest.approx(-37.6)
    # -3 dBW, 3.4 GHz free space at 1 m, kTB at 40 MHz, 10 dB NF
    fspl = 20 * math.log10(4 * math.pi * 3.4e9 / 299792458.0)
    noise = 10 * math.log10(1.380649e-23 * 290 * 40e6)
    assert pl.offset_db == pytest.approx(-3 - fspl - noise - 10, abs=1e-9)
    assert pl.offset_db == pytest.approx(71.89, abs=0.02)


def _one_ring_quad(beta, theta0, spread, M):
    """Entrywise adaptive quadrature of the one-ring integral."""
    R = np.empty((M, M), complex)
    for m in range(M):
        for n in range(M):
            f = lambda t, k: (np.cos, np.sin)[k](np.pi * (m - n) * np.sin(t))
            re = integrate.quad(f, theta0 - spread / 2, theta0 + spread / 2, args=(0,), epsabs=1e-13)[0]
            im = integrate.quad(f, theta0 - spread / 2, theta0 + spread / 2, args=(1,), epsabs=1e-13)[0]
            R[m, n] = beta * (re + 1j * im) / spread
    return R


def test_one_ring_against_adaptive_quadrature():
    R = one_ring_covariance(2.0, 0.3, np.deg2rad(20), 6)
    np.testing.assert_allclose(R, _one_ring_quad(2.0, 0.3, np.deg2rad(20), 6), atol=1e-10)


def test_one_ring_quadrature_convergence():
    a = one_ring_covariance(1.7, 0.4, np.deg2rad(20), 8, 200)
    b = one_ring_covariance(1.7, 0.4, np.deg2rad(20), 8, 2000)
    assert np.max(np.abs(a - b)) < 1e-6 * 1.7


def test_one_ring_point_source_and_diagonal():
    R = one_ring_covariance(3.0, -0.2, 0.0, 5)
    a = ula_steering(-0.2, 5)
    np.testing.assert_allclose(R, 3.0 * np.outer(a, a.conj()))
    for spread in (0.0, 0.1, 1.0):
        R = one_ring_covariance(0.5, 1.0, spread, 7)
        np.testing.assert_allclose(np.diag(R), np.full(7, 0.5), rtol=0, atol=1e-15)
        hermitian_eig(R)
        np.testing.assert_allclose(R, R.conj().T)
    with pytest.raises(ValueError):
        one_ring_covariance(1.0, 0.0, 0.1, 4, quadrature_points=1)
    with pytest.raises(ValueError):
        one_ring_covariance(1.0, 0.0, -0.1, 4)


def test_config_invariants():
    with pytest.raises(ConfigError, match="P >= K"):
        SystemConfig(P=5, K=10)
    with pytest.raises(ConfigError):
        SystemConfig(C_u=5, P=10)
    with pytest.raises(ConfigError):
        SystemConfig(mu=0)
    with pytest.raises(ConfigError):
        SystemConfig(M=0)


def test_hex_layout():
    bs = hex_bs_positions(7, 300.0)
    assert np.allclose(bs[0], 0)
    d = np.hypot(*bs[1:].T)
    np.testing.assert_allclose(d, 300.0)
    ang = np.sort(np.mod(np.arctan2(bs[1:, 1], bs[1:, 0]), 2 * np.pi))
    np.testing.assert_allclose(np.diff(ang), np.pi / 3)
    assert len(hex_bs_positions(19, 1.0)) == 19


def test_users_same_relative_position():
    cfg = SystemConfig(L=7, K=4, M=4, P=4)
    bs = hex_bs_positions(7, cfg.inter_bs_distance)
    rel = user_positions(cfg) - bs[:, None, :]
    np.testing.assert_allclose(rel, np.broadcast_to(rel[0], rel.shape), atol=1e-9)
    np.testing.assert_allclose(np.hypot(*rel[0].T), cfg.user_radius)


def test_single_cell_reduction():
    cfg = SystemConfig(L=1, K=1, M=4, P=3, mu=2.0)
    cov = build_covariance_set(cfg)
    np.testing.assert_allclose(cov.Q_u[0], cov.R[0, 0] + np.eye(4) / 6.0)


def test_reference_layout_gains():
    cov = build_covariance_set(SystemConfig(M=10))
    own = np.real(np.trace(cov.R[0, 3])) / 10
    assert own == pytest.approx(db_to_linear(snr_from_distance(120.0)), rel=1e-12)
    np.testing.assert_allclose(cov.R_s_dl, cov.R_s - np.eye(10) / cov.mu, atol=1e-14)
    cov.validate()
    np.testing.assert_allclose(cov.P_u, np.real(np.diagonal(cov.Q_u, axis1=1, axis2=2)))
    np.testing.assert_allclose(cov.S_s, np.real(np.diag(cov.R_s)))


def test_cell_relabel_preserves_spectrum():
    rng = np.random.default_rng(3)
    R = np.stack([[one_ring_covariance(rng.uniform(0.1, 2), rng.uniform(-1, 1), 0.3, 6) for _ in range(2)]
                  for _ in range(3)])
    a = covariance_set_from_matrices(R, 4, 1.0)
    b = covariance_set_from_matrices(R[[2, 0, 1]], 4, 1.0)
    for k in range(2):
        np.testing.assert_allclose(np.linalg.eigvalsh(a.Q_u[k]), np.linalg.eigvalsh(b.Q_u[k]), atol=1e-12)


def test_mu_scaling_only_touches_noise_terms():
    R = np.stack([[one_ring_covariance(1.0, 0.2 * l, 0.3, 5)] for l in range(2)])
    a = covariance_set_from_matrices(R, 4, 1.0)
    b = covariance_set_from_matrices(R, 4, 3.0)
    np.testing.assert_allclose(b.Q_u[0] - a.Q_u[0], (1 / 12 - 1 / 4) * np.eye(5), atol=1e-14)
    np.testing.assert_allclose(b.R_s - a.R_s, (1 / 3 - 1) * np.eye(5), atol=1e-14)
    np.testing.assert_allclose(b.R_s_dl, a.R_s_dl)


def test_sharing_order_and_links():
    cov = build_covariance_set(SystemConfig(L=3, K=2, M=4, P=2), target_cell=1)
    sh = cov.sharing(1)
    np.testing.assert_array_equal(sh[0], cov.R[1, 1])
    np.testing.assert_array_equal(cov.interferers(1), cov.R[[0, 2], 1])
    assert cov.rs("ul") is cov.R_s and cov.rs("dl") is cov.R_s_dl
    with pytest.raises(ValueError):
        cov.rs("x")
    with pytest.raises(ConfigError):
        build_covariance_set(SystemConfig(L=3, K=2, M=4, P=2), target_cell=3)

"""Multi-cell geometry and ground-truth covariance structures.

The target base station sees, for every pilot-sharing user ``(l, k)``, a
one-ring spatial covariance ``R[l, k]`` on a half-wavelength uniform linear
array. Noise power is normalized to one, so each covariance is scaled by the
linear mean SNR of its user.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import Boltzmann, speed_of_light

from .errors import ConfigError
from .numkit import check_hermitian, hermitian_eig


@dataclass(frozen=True)
class Pathloss:
    """Affine mean-SNR model ``snr_db = offset_db + slope_db * log10(d)``."""

    offset_db: float = 71.89
    slope_db: float = -37.6

    @classmethod
    def from_physical(cls, exponent: float = 3.76, freq_hz: float = 3.4e9,
                      tx_power_dbw: float = -3.0, bandwidth_hz: float = 40e6,
                      noise_figure_db: float = 10.0, temperature_k: float = 290.0) -> "Pathloss":
        """Build the affine model from a log-distance path loss and a noise budget.

        Args:
            exponent: path loss exponent n.
            freq_hz: carrier frequency.
            tx_power_dbw: transmit power in dBW.
            bandwidth_hz: signal bandwidth.
            noise_figure_db: receiver noise figure.
            temperature_k: noise temperature.

        Returns:
            Pathloss with offset and slope in dB.
        """
        fspl_1m = 20.0 * math.log10(4.0 * math.pi * freq_hz / speed_of_light)
        noise_dbw = 10.0 * math.log10(Boltzmann * temperature_k * bandwidth_hz)
        offset = tx_power_dbw - fspl_1m - noise_dbw - noise_figure_db
        return cls(offset_db=offset, slope_db=-10.0 * exponent)


def snr_from_distance(d: float, pathloss: Pathloss | None = None) -> float:
    """Mean received SNR in dB of a user at distance ``d`` meters."""
    if not np.all(np.asarray(d) > 0):
        raise ValueError("distance must be positive")
    pl = pathloss or Pathloss()
    return pl.offset_db + pl.slope_db * np.log10(d)


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def ula_steering(theta, M: int) -> np.ndarray:
    """Half-wavelength ULA response(s); shape (..., M)."""
    m = np.arange(M)
    return np.exp(1j * np.pi * np.multiply.outer(np.sin(theta), m))


def one_ring_covariance(beta: float, theta0: float, spread: float, M: int,
                        quadrature_points: int = 200) -> np.ndarray:
    """One-ring covariance with paths uniform in ``[theta0 - spread/2, theta0 + spread/2]``.

    The entries are ``beta * mean_theta exp(i*pi*(m - n)*sin(theta))`` evaluated by
    Gauss-Legendre quadrature, which converges exponentially for this smooth
    integrand.

    Args:
        beta: linear mean SNR (large-scale gain over unit noise).
        theta0: nominal angle of arrival in radians.
        spread: total angular spread in radians.
        M: number of antennas.
        quadrature_points: number of Gauss-Legendre nodes.

    Returns:
        (M, M) Hermitian PSD covariance with diagonal equal to ``beta``.
    """
    if spread < 0:
        raise ValueError("spread must be non-negative")
    if M < 1:
        raise ValueError("M must be at least 1")
    if spread == 0:
        a = ula_steering(theta0, M)
        return beta * np.outer(a, a.conj())
    if quadrature_points < 2:
        raise ValueError("quadrature_points must be at least 2 when spread > 0")
    x, w = np.polynomial.legendre.leggauss(quadrature_points)
    theta = theta0 + 0.5 * spread * x
    w = 0.5 * w
    # Toeplitz: only the first column is needed.
    lag = np.arange(M)
    col = (w[None, :] * np.exp(1j * np.pi * np.outer(lag, np.sin(theta)))).sum(axis=1)
    idx = lag[:, None] - lag[None, :]
    R = np.where(idx >= 0, col[np.abs(idx)], col[np.abs(idx)].conj())
    np.fill_diagonal(R, 1.0)
    return beta * R


@dataclass(frozen=True)
class SystemConfig:
    """System dimensions, powers and geometry.

    ``pathloss`` defaults to the affine model with offset 71.89 dB and slope
    -37.6 dB per decade.
    """

    L: int = 7
    K: int = 10
    M: int = 100
    P: int = 10
    C_u: int = 100
    C_d: int = 100
    tau_s: int = 25000
    mu: float = 1.0
    lam: float = 10.0
    inter_bs_distance: float = 300.0
    user_radius: float = 120.0
    angular_spread_deg: float = 20.0
    pathloss: Pathloss = field(default_factory=Pathloss)
    user_azimuth_offset_deg: float = 0.0
    quadrature_points: int = 200

    def __post_init__(self):
        for name in ("L", "K", "M", "P", "C_u", "C_d", "tau_s", "quadrature_points"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        if self.P < self.K:
            raise ConfigError(f"P >= K violated: P={self.P}, K={self.K}")
        if self.C_u < self.P:
            raise ConfigError(f"C_u >= P violated: C_u={self.C_u}, P={self.P}")
        if not self.mu > 0:
            raise ConfigError(f"mu must be positive, got {self.mu!r}")
        if not self.lam > 0:
            raise ConfigError(f"lam must be positive, got {self.lam!r}")
        if not self.user_radius > 0:
            raise ConfigError("user_radius must be positive")
        if not self.inter_bs_distance > 0:
            raise ConfigError("inter_bs_distance must be positive")
        if self.angular_spread_deg < 0:
            raise ConfigError("angular_spread_deg must be non-negative")


@dataclass(frozen=True, eq=False)
class CovarianceSet:
    """Second-order statistics seen by the target base station.

    Attributes:
        target_cell: index j of the target cell.
        R: (L, K, M, M) covariance of user (l, k) at BS j.
        Q_u: (K, M, M) covariance of the LS estimate for pilot k.
        R_s: (M, M) sum of all user covariances plus noise/mu; identical for every user.
        R_s_dl: (M, M) sum of all user covariances.
        mu, P: UL power and pilot length used to build the noise terms.
    """

    target_cell: int
    R: np.ndarray
    Q_u: np.ndarray
    R_s: np.ndarray
    R_s_dl: np.ndarray
    mu: float
    P: int
    betas: np.ndarray | None = None
    angles: np.ndarray | None = None

    @property
    def L(self) -> int:
        return self.R.shape[0]

    @property
    def K(self) -> int:
        return self.R.shape[1]

    @property
    def M(self) -> int:
        return self.R.shape[2]

    @property
    def P_u(self) -> np.ndarray:
        """(K, M) diagonals of Q_u."""
        return np.real(np.diagonal(self.Q_u, axis1=-2, axis2=-1)).copy()

    @property
    def S(self) -> np.ndarray:
        """(L, K, M) diagonals of R."""
        return np.real(np.diagonal(self.R, axis1=-2, axis2=-1)).copy()

    @property
    def S_s(self) -> np.ndarray:
        return np.real(np.diag(self.R_s)).copy()

    @property
    def S_s_dl(self) -> np.ndarray:
        return np.real(np.diag(self.R_s_dl)).copy()

    def own(self, u: int) -> np.ndarray:
        """Covariance of the target user u in the target cell."""
        return self.R[self.target_cell, u]

    def sharing(self, u: int) -> np.ndarray:
        """(L, M, M) covariances of all users sharing pilot u, target cell first."""
        order = [self.target_cell] + [l for l in range(self.L) if l != self.target_cell]
        return self.R[order, u]

    def interferers(self, u: int) -> np.ndarray:
        """(L-1, M, M) covariances of the pilot-contaminating users of pilot u."""
        return self.sharing(u)[1:]

    def rs(self, link: str) -> np.ndarray:
        if link == "ul":
            return self.R_s
        if link == "dl":
            return self.R_s_dl
        raise ValueError(f"link must be 'ul' or 'dl', got {link!r}")

    def validate(self, rtol: float = 1e-12) -> None:
        """Check Hermitian PSD structure and the aggregate identities."""
        for l in range(self.L):
            for k in range(self.K):
                hermitian_eig(self.R[l, k], name=f"R[{l}][{k}]")
        eye = np.eye(self.M)
        for k in range(self.K):
            ref = self.R[:, k].sum(axis=0) + eye / (self.P * self.mu)
            if np.max(np.abs(self.Q_u[k] - ref)) > rtol * np.max(np.abs(ref)):
                raise ValueError(f"Q_u[{k}] inconsistent with R")
        total = self.R.sum(axis=(0, 1))
        check_hermitian(self.R_s, name="R_s")
        if np.max(np.abs(self.R_s_dl - total)) > rtol * np.max(np.abs(total)):
            raise ValueError("R_s_dl inconsistent with R")
        if np.max(np.abs(self.R_s - total - eye / self.mu)) > rtol * np.max(np.abs(self.R_s)):
            raise ValueError("R_s inconsistent with R")


def covariance_set_from_matrices(R: np.ndarray, P: int, mu: float, target_cell: int = 0) -> CovarianceSet:
    """Assemble a CovarianceSet from a (L, K, M, M) stack of user covariances."""
    R = np.asarray(R, dtype=complex)
    if R.ndim != 4 or R.shape[-1] != R.shape[-2]:
        raise ValueError(f"R must have shape (L, K, M, M), got {R.shape}")
    if not 0 <= target_cell < R.shape[0]:
        raise ValueError("target_cell out of range")
    M = R.shape[-1]
    eye = np.eye(M)
    Q_u = R.sum(axis=0) + eye / (P * mu)
    total = R.sum(axis=(0, 1))
    return CovarianceSet(target_cell=target_cell, R=R, Q_u=Q_u, R_s=total + eye / mu,
                         R_s_dl=total, mu=float(mu), P=int(P))


def hex_bs_positions(L: int, distance: float) -> np.ndarray:
    """Centers of the L hexagonal-lattice cells closest to the origin; shape (L, 2)."""
    rings = 1
    while 3 * rings * (rings + 1) + 1 < L:
        rings += 1
    a1 = distance * np.array([1.0, 0.0])
    a2 = distance * np.array([0.5, math.sqrt(3) / 2])
    pts = []
    for i in range(-rings, rings + 1):
        for j in range(-rings, rings + 1):
            if abs(i) <= rings and abs(j) <= rings and abs(i + j) <= rings:
                pts.append(i * a1 + j * a2)
    pts = np.array(pts)
    # Rotate so the first ring sits at angles pi/6 + k*pi/3.
    rot = np.array([[math.cos(math.pi / 6), -math.sin(math.pi / 6)],
                    [math.sin(math.pi / 6), math.cos(math.pi / 6)]])
    pts = pts @ rot.T
    r = np.round(np.hypot(pts[:, 0], pts[:, 1]), 9)
    ang = np.round(np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * np.pi), 9)
    order = np.lexsort((ang, r))
    return pts[order[:L]]


def user_positions(cfg: SystemConfig) -> np.ndarray:
    """(L, K, 2) user positions; user k has the same offset from its own BS in every cell."""
    bs = hex_bs_positions(cfg.L, cfg.inter_bs_distance)
    phi = 2 * np.pi * np.arange(cfg.K) / cfg.K + np.deg2rad(cfg.user_azimuth_offset_deg)
    offs = cfg.user_radius * np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    return bs[:, None, :] + offs[None, :, :]


def build_covariance_set(cfg: SystemConfig, target_cell: int = 0) -> CovarianceSet:
    """Ground-truth covariances seen by BS ``target_cell`` for the hexagonal layout.

    Args:
        cfg: system configuration.
        target_cell: index of the observing base station.

    Returns:
        A validated CovarianceSet.
    """
    if not 0 <= target_cell < cfg.L:
        raise ConfigError(f"target_cell must be in [0, {cfg.L})")
    bs = hex_bs_positions(cfg.L, cfg.inter_bs_distance)
    users = user_positions(cfg)
    rel = users - bs[target_cell]
    dist = np.hypot(rel[..., 0], rel[..., 1])
    if np.any(dist <= 0):
        raise ConfigError("a user coincides with the target base station")
    betas = db_to_linear(snr_from_distance(dist, cfg.pathloss))
    angles = np.arctan2(rel[..., 1], rel[..., 0])
    spread = np.deg2rad(cfg.angular_spread_deg)
    R = np.empty((cfg.L, cfg.K, cfg.M, cfg.M), dtype=complex)
    for l in range(cfg.L):
        for k in range(cfg.K):
            R[l, k] = one_ring_covariance(betas[l, k], angles[l, k], spread, cfg.M,
                                          cfg.quadrature_points)
    cs = covariance_set_from_matrices(R, cfg.P, cfg.mu, target_cell)
    cs = CovarianceSet(**{**cs.__dict__, "betas": betas, "angles": angles})
    cs.validate()
    return cs

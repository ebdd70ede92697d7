"""Pilot synthesis, LS channel estimates and covariance estimators.

Sample-covariance helpers accept arrays with arbitrary leading batch
dimensions, so the Monte Carlo harness can process many trials at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionError, SingularEstimateError
from .numkit import as_generator, standard_cgauss


class EstimatorKind(str, Enum):
    LMMSE = "lmmse"
    EL_LMMSE = "el-lmmse"
    LMMSE_TYPE = "lmmse-type"
    EL_LMMSE_TYPE = "el-lmmse-type"
    EL_LMMSE_TYPE_REGP = "el-lmmse-type-regp"

    @property
    def diagonal(self) -> bool:
        return self in (EstimatorKind.EL_LMMSE, EstimatorKind.EL_LMMSE_TYPE,
                        EstimatorKind.EL_LMMSE_TYPE_REGP)

    @property
    def estimated(self) -> bool:
        return self not in (EstimatorKind.LMMSE, EstimatorKind.EL_LMMSE)


ESTIMATED_KINDS = (EstimatorKind.LMMSE_TYPE, EstimatorKind.EL_LMMSE_TYPE,
                   EstimatorKind.EL_LMMSE_TYPE_REGP)


@dataclass(frozen=True)
class PilotBook:
    pilots: np.ndarray  # (K, P)
    theta: np.ndarray | None = None  # (L, N_R)

    @property
    def P(self) -> int:
        return self.pilots.shape[1]


@dataclass(frozen=True)
class LsPair:
    """LS estimates from the ChEst pilot (h1) and the phase-shifted CovEst pilot (h2)."""

    h1: np.ndarray  # (..., N_R, M)
    h2: np.ndarray | None = None


@dataclass(frozen=True)
class CovEstimates:
    Qhat: np.ndarray
    Phat: np.ndarray
    Rddot: np.ndarray
    Rhat: np.ndarray
    Sddot: np.ndarray
    Shat: np.ndarray
    Phat_reg: np.ndarray
    N_R: int
    N_Q: int


@dataclass(frozen=True)
class FilterMatrix:
    """Filter W with h_hat = W h_ls. Diagonal kinds store only the diagonal."""

    W: np.ndarray
    kind: EstimatorKind

    def dense(self) -> np.ndarray:
        return np.diag(self.W) if self.kind.diagonal else self.W


def gen_pilots(P: int, K: int) -> np.ndarray:
    """K orthogonal length-P pilots with squared norm P (rows of a DFT matrix).

    Returns:
        (K, P) complex array.
    """
    if K < 1 or P < K:
        raise ValueError(f"need 1 <= K <= P, got P={P}, K={K}")
    t = np.arange(P)
    return np.exp(-2j * np.pi * np.outer(np.arange(K), t) / P)


def gen_phase_shifts(L: int, N_R: int, rng) -> np.ndarray:
    """i.i.d. uniform phases on [0, 2*pi); shape (L, N_R)."""
    if L < 1 or N_R < 1:
        raise ValueError("L and N_R must be at least 1")
    return as_generator(rng).uniform(0.0, 2 * np.pi, size=(L, N_R))


def ls_estimates(h: np.ndarray, theta: np.ndarray | None, mu: float, P: int, rng, *,
                 target: int = 0, user: int = 0, pilots: np.ndarray | None = None,
                 full_matrix: bool = False) -> LsPair:
    """LS estimates of the target user's channel per coherence block.

    Fast path: ``h`` has shape (N, L, M) with the channels of the users sharing
    the target pilot, and the projected noise is drawn directly as CN(0, I/(P mu)).

    Full-matrix path (``full_matrix=True``): ``h`` has shape (N, L, K, M) and
    the received pilot matrices are synthesized and correlated with the pilot.

    Args:
        h: channel realizations, one set per block.
        theta: (L, N) CovEst phase shifts, or None to produce h1 only.
        mu: UL transmit power.
        P: pilot length.
        rng: random source for the noise.
        target: index of the target cell.
        user: pilot index of the target user (full-matrix path).
        pilots: (K, P) pilot book (full-matrix path).
        full_matrix: select the received-matrix path.

    Returns:
        LsPair with h1 and (when theta is given) h2, each of shape (N, M).
    """
    gen = as_generator(rng)
    h = np.asarray(h)
    if full_matrix:
        if h.ndim != 4:
            raise DimensionError("full-matrix path needs h of shape (N, L, K, M)")
        N, L, K, M = h.shape
        pk = gen_pilots(P, K) if pilots is None else np.asarray(pilots)
        if pk.shape != (K, P):
            raise DimensionError(f"pilots must have shape {(K, P)}")
        Yp = np.sqrt(mu) * np.einsum("nlkm,kp->nmp", h, pk) + standard_cgauss(gen, (N, M, P))
        h1 = Yp @ pk[user].conj() / (P * np.sqrt(mu))
        h2 = None
        if theta is not None:
            ph = np.exp(1j * np.asarray(theta)).T  # (N, L)
            Yr = np.sqrt(mu) * np.einsum("nlkm,nl,kp->nmp", h, ph, pk) + standard_cgauss(gen, (N, M, P))
            h2 = Yr @ pk[user].conj() * np.exp(-1j * theta[target])[:, None] / (P * np.sqrt(mu))
        return LsPair(h1, h2)
    if h.ndim != 3:
        raise DimensionError("fast path needs h of shape (N, L, M)")
    N, L, M = h.shape
    sigma = 1.0 / np.sqrt(P * mu)
    h1 = h.sum(axis=1) + sigma * standard_cgauss(gen, (N, M))
    h2 = None
    if theta is not None:
        theta = np.asarray(theta)
        if theta.shape != (L, N):
            raise DimensionError(f"theta must have shape {(L, N)}, got {theta.shape}")
        rot = np.exp(1j * (theta - theta[target])).T  # (N, L)
        h2 = np.einsum("nlm,nl->nm", h, rot) + sigma * standard_cgauss(gen, (N, M))
    return LsPair(h1, h2)


def sample_cov_QP(h1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample covariance and its diagonal from (..., N_Q, M) LS estimates."""
    h1 = np.asarray(h1)
    if h1.shape[-2] == 0:
        raise ValueError("N_Q must be at least 1")
    N = h1.shape[-2]
    Q = np.einsum("...nm,...nk->...mk", h1, h1.conj()) / N
    P = np.real(np.diagonal(Q, axis1=-2, axis2=-1)).copy()
    return Q, P


def cross_cov_RS(pair: LsPair) -> tuple[np.ndarray, np.ndarray]:
    """Hermitian sample cross-covariance of (h1, h2) and its real diagonal."""
    if pair.h2 is None:
        raise DimensionError("cross covariance needs both h1 and h2")
    h1, h2 = np.asarray(pair.h1), np.asarray(pair.h2)
    if h1.shape != h2.shape:
        raise DimensionError("h1 and h2 must be present with equal shapes")
    N = h1.shape[-2]
    if N == 0:
        raise ValueError("N_R must be at least 1")
    C = np.einsum("...nm,...nk->...mk", h1, h2.conj()) / N
    Rddot = 0.5 * (C + np.conj(np.swapaxes(C, -1, -2)))
    Sddot = np.mean(np.real(h1 * h2.conj()), axis=-2)
    return Rddot, Sddot


def regularize(raw: np.ndarray, alpha: float, bias) -> np.ndarray:
    """Affine shrinkage ``alpha * raw + (1 - alpha) * bias``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * np.asarray(raw) + (1.0 - alpha) * np.asarray(bias)


def _check_invertible_psd(A: np.ndarray, name: str, rtol: float = 1e-12) -> None:
    lam = np.linalg.eigvalsh(A)
    if lam[..., 0].min() <= rtol * np.abs(lam[..., -1]).max():
        raise SingularEstimateError(f"{name} is singular or not positive definite")


def build_filter(kind, *, R=None, Q=None, S=None, P=None, check: bool = True) -> FilterMatrix:
    """Filter matrix for an estimator kind.

    Full kinds need ``R`` and ``Q`` (true or estimated); diagonal kinds need the
    diagonals ``S`` and ``P`` as vectors. The filter is ``R Q^-1`` or ``S P^-1``.

    Args:
        kind: EstimatorKind or its string value.
        R, Q: (M, M) matrices for the full kinds.
        S, P: (M,) vectors for the diagonal kinds.
        check: verify that Q (or P) is positive definite first.

    Returns:
        FilterMatrix.
    """
    kind = EstimatorKind(kind)
    if kind.diagonal:
        S, P = np.asarray(S), np.asarray(P)
        if S.shape != P.shape or S.ndim != 1:
            raise DimensionError("S and P must be vectors of equal length")
        if check and np.any(P <= 0):
            raise SingularEstimateError("P has a non-positive entry")
        return FilterMatrix(S / P, kind)
    R, Q = np.asarray(R), np.asarray(Q)
    if R.shape != Q.shape or R.ndim != 2:
        raise DimensionError("R and Q must be square matrices of equal size")
    if check:
        _check_invertible_psd(Q, "Q")
    # R Q^-1 = (Q^-H R^H)^H
    W = np.linalg.solve(Q.conj().T, R.conj().T).conj().T
    return FilterMatrix(W, kind)

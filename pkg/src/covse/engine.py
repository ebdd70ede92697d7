"""Closed-form SINR and spectral efficiency with estimated covariance matrices.

Every expectation term is stored as ``const + coef / N_R`` so the SINR of each
estimator has the form ``a / (b + c / N_R)`` at fixed N_Q, which is what the
threshold computations rely on.

Two models are available for the estimated-covariance terms:

* ``"exact"`` (default) accounts for the statistical dependence between the
  two LS estimates caused by the phase-rotated pilot-contaminating users, and
  for the correlation of the diagonal sample-covariance entries across
  antennas.
* ``"nominal"`` treats the contamination in the two LS estimates as
  independent and the diagonal entries of the sample covariance as
  independent across antennas. This reproduces the closed forms as usually
  stated and is what the literal threshold coefficients correspond to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import BudgetExhaustedError, InvalidRegimeError, PoleError
from .estimators import EstimatorKind
from .moments import eg_matrices, inv_chi2_taus, joint_inverse_moments, sddot_cov, wishart_kappas
from .scenario import CovarianceSet

MODELS = ("exact", "nominal")
LINKS = ("ul", "dl")


@dataclass(frozen=True)
class PilotBudget:
    """Pilot and sample budget; ``N_R`` may be ``math.inf`` for asymptotic terms."""

    P: int
    C_u: int
    tau_s: int
    N_R: float
    N_Q: int

    def __post_init__(self):
        if self.N_R < 0 or (math.isfinite(self.N_R) and self.N_R > self.tau_s):
            raise ValueError(f"N_R must lie in [0, tau_s], got {self.N_R}")
        if self.N_Q < 1:
            raise ValueError("N_Q must be at least 1")

    @property
    def prelog(self) -> float:
        """``1 - P/C_u - N_R P/(C_u tau_s)``, rounded once from exact arithmetic."""
        if not math.isfinite(self.N_R):
            return -math.inf
        try:
            fr = 1 - Fraction(self.P) / Fraction(self.C_u) \
                - Fraction(self.N_R) * Fraction(self.P) / (Fraction(self.C_u) * Fraction(self.tau_s))
            return float(fr)
        except (TypeError, ValueError):
            return 1.0 - self.P / self.C_u - self.N_R * self.P / (self.C_u * self.tau_s)

    def with_(self, **kw) -> "PilotBudget":
        return replace(self, **kw)


@dataclass(frozen=True)
class Regularization:
    """Shrinkage weights and bias matrices. ``R_b`` defaults to I and ``P_b`` to ones."""

    alpha_R: float = 0.95
    alpha_Q: float = 0.95
    R_b: np.ndarray | None = None
    P_b: np.ndarray | None = None

    def __post_init__(self):
        for name in ("alpha_R", "alpha_Q"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def rb(self, M: int) -> np.ndarray:
        return np.eye(M) if self.R_b is None else np.asarray(self.R_b)

    def pb(self, M: int) -> np.ndarray:
        return np.ones(M) if self.P_b is None else np.broadcast_to(np.asarray(self.P_b, float), (M,))


@dataclass(frozen=True)
class TermSet:
    """Expectation terms of the SINR, each affine in 1/N_R.

    ``num`` is |E tr(W^H R)|; ``den1 = den1_0 + den1_1/N_R``;
    ``den2[l] = den2_0[l] + den2_1[l]/N_R`` with l over the pilot-sharing
    users, target cell first.
    """

    kind: str
    link: str
    N_R: float
    N_Q: float
    num: float
    den1_0: float
    den1_1: float
    den2_0: np.ndarray
    den2_1: np.ndarray
    num_imag: float = 0.0

    @property
    def inv_nr(self) -> float:
        return 0.0 if not math.isfinite(self.N_R) else 1.0 / self.N_R

    @property
    def den1(self) -> float:
        return self.den1_0 + self.den1_1 * self.inv_nr

    @property
    def den2(self) -> np.ndarray:
        return self.den2_0 + self.den2_1 * self.inv_nr

    @property
    def b_const(self) -> float:
        return self.den1_0 + float(np.sum(self.den2_0)) - self.num ** 2

    @property
    def c_over_nr(self) -> float:
        return self.den1_1 + float(np.sum(self.den2_1))

    def at(self, N_R: float) -> "TermSet":
        return replace(self, N_R=N_R)


# ---------------------------------------------------------------------------
# Full-matrix (LMMSE-type) parts
# ---------------------------------------------------------------------------

def _tr(A, B):
    return np.einsum("ij,ji->", A, B)


@dataclass
class _FullParts:
    """N_Q- and N_R-independent traces for the full-matrix estimator.

    With ``t = tr(Q^-1 Rbar R)``:
    num = N/(N-M) t,  den1 = k1 (x0 + x1/N_R),
    den2_l = k2 (y0_l + y1_l/N_R) + (k1/N) (z0_l + z1_l/N_R).
    """

    M: int
    t: complex
    x0: float
    x1: float
    y0: np.ndarray
    y1: np.ndarray
    z0: np.ndarray
    z1: np.ndarray

    def terms(self, N_Q: int, N_R: float, link: str, kind: str = "lmmse-type") -> TermSet:
        k1, k2 = wishart_kappas(N_Q, self.M)
        v = N_Q / (N_Q - self.M) * self.t
        return TermSet(kind, link, N_R, N_Q, abs(v), k1 * self.x0, k1 * self.x1,
                       k2 * self.y0 + k1 / N_Q * self.z0, k2 * self.y1 + k1 / N_Q * self.z1,
                       float(np.imag(v)))


def _full_parts(cov: CovarianceSet, u: int, reg: Regularization, link: str, model: str) -> _FullParts:
    M = cov.M
    Rl = cov.sharing(u)
    R = Rl[0]
    Q = cov.Q_u[u]
    Rs = cov.rs(link)
    Qi = np.linalg.inv(Q)
    a = reg.alpha_R
    Rbar = a * R + (1 - a) * reg.rb(M)
    inter = Rl[1:] if model == "exact" else Rl[:0]
    c2 = a * a / 2.0
    trQiR = _tr(Qi, R)

    def rhat_quad(C):
        # tr(Q^-1 E{Rhat C Rhat}) split into constant and 1/N_R parts.
        c0 = _tr(Qi @ Rbar, C @ Rbar)
        c1 = M * _tr(C, Q) + trQiR * _tr(C, R) + sum(_tr(Qi @ Rm, C @ Rm) for Rm in inter)
        return np.real(c0), c2 * np.real(c1)

    x0, x1 = rhat_quad(Rs)
    L = Rl.shape[0]
    y0, y1, z0, z1 = (np.empty(L) for _ in range(4))
    for l in range(L):
        A = Rl[l] @ Qi
        Ah = A.conj().T
        y0[l] = abs(_tr(Rbar, A)) ** 2
        y1[l] = c2 * np.real(_tr(A @ Q, Ah @ Q) + _tr(A @ R, Ah @ R)
                             + sum(abs(_tr(A, Rm)) ** 2 for Rm in inter))
        z0[l], z1[l] = rhat_quad(Rl[l] @ Qi @ Rl[l])
    return _FullParts(M, _tr(Qi, Rbar @ R), x0, x1, y0, y1, z0, z1)


# ---------------------------------------------------------------------------
# Element-wise parts
# ---------------------------------------------------------------------------

@dataclass
class _ElementwiseParts:
    """Weights such that, for E = E{1/P_hat} and H = E{1/(P_hat P_hat^T)},
    num = E . n, den1 = sum(H * (X0 + X1/N_R)), den2_l = sum(H * (Y0_l + Y1_l/N_R))."""

    n: np.ndarray
    X0: np.ndarray
    X1: np.ndarray
    Y0: np.ndarray
    Y1: np.ndarray

    def terms(self, E: np.ndarray, H: np.ndarray, N_Q: float, N_R: float, link: str, kind: str) -> TermSet:
        v = float(E @ self.n)
        return TermSet(kind, link, N_R, N_Q, abs(v), float(np.sum(H * self.X0)), float(np.sum(H * self.X1)),
                       np.einsum("pq,lpq->l", H, self.Y0), np.einsum("pq,lpq->l", H, self.Y1))


def _elementwise_parts(cov: CovarianceSet, u: int, reg: Regularization, link: str, model: str) -> _ElementwiseParts:
    M = cov.M
    Rl = cov.sharing(u)
    R = Rl[0]
    Q = cov.Q_u[u]
    Rs = cov.rs(link)
    a = reg.alpha_R
    s = np.real(np.diag(R))
    sl = np.real(np.diagonal(Rl, axis1=-2, axis2=-1))
    sbar = a * s + (1 - a) * np.real(np.diag(reg.rb(M)))
    V1 = sddot_cov(R, Q, 1, Rl[1:] if model == "exact" else None)  # V at N_R = 1
    QRs = np.real(Q * Rs.T)
    ss = np.outer(sbar, sbar)
    X0 = ss * QRs
    X1 = a * a * V1 * QRs
    SL = np.einsum("lp,lq->lpq", sl, sl)
    return _ElementwiseParts(sbar * s, X0, X1, ss[None] * SL, a * a * V1[None] * SL)


def _nominal_H(E: np.ndarray, G: np.ndarray) -> np.ndarray:
    H = np.outer(E, E)
    np.fill_diagonal(H, G)
    return H


def _unreg_inverse_moments(Q: np.ndarray, N_Q: int, model: str) -> tuple[np.ndarray, np.ndarray]:
    """E and H for the unregularized diagonal estimate (alpha_Q = 1)."""
    t1, t2 = inv_chi2_taus(N_Q)
    P = np.real(np.diag(Q))
    E = N_Q / ((N_Q - 1.0) * P)
    G = N_Q ** 2 * (t1 + t2) / P ** 2
    if model == "nominal":
        return E, _nominal_H(E, G)
    r = np.clip(np.abs(Q) ** 2 / np.outer(P, P), 0.0, 1.0)
    H = N_Q ** 2 * t1 * special.hyp2f1(1.0, 1.0, N_Q, r) / np.outer(P, P)
    np.fill_diagonal(H, G)
    return E, H


def _check_model(model: str, link: str):
    if model not in MODELS:
        raise ValueError(f"model must be one of {MODELS}, got {model!r}")
    if link not in LINKS:
        raise ValueError(f"link must be one of {LINKS}, got {link!r}")


# ---------------------------------------------------------------------------
# Public term evaluators
# ---------------------------------------------------------------------------

def thm1_terms(cov: CovarianceSet, u: int, budget: PilotBudget, reg: Regularization,
               link: str = "ul", model: str = "exact") -> TermSet:
    """Expectation terms for the LMMSE-type filter ``Rhat Qhat^-1``.

    Args:
        cov: ground-truth covariances.
        u: target user (pilot index).
        budget: pilot budget (N_R, N_Q used).
        reg: regularization (alpha_R, R_b used).
        link: "ul" (interference matrix with noise) or "dl".
        model: "exact" or "nominal".

    Returns:
        TermSet.
    """
    _check_model(model, link)
    if budget.N_Q <= cov.M + 1:
        raise PoleError(f"LMMSE-type terms need N_Q > M + 1 (N_Q={budget.N_Q}, M={cov.M})")
    return _full_parts(cov, u, reg, link, model).terms(budget.N_Q, budget.N_R, link)


def thm2_terms(cov: CovarianceSet, u: int, budget: PilotBudget, reg: Regularization,
               link: str = "ul", model: str = "exact") -> TermSet:
    """Expectation terms for the element-wise filter ``Shat Phat^-1`` (no P shrinkage)."""
    _check_model(model, link)
    if budget.N_Q <= 2:
        raise PoleError(f"element-wise terms need N_Q > 2 (N_Q={budget.N_Q})")
    parts = _elementwise_parts(cov, u, reg, link, model)
    E, H = _unreg_inverse_moments(cov.Q_u[u], budget.N_Q, model)
    return parts.terms(E, H, budget.N_Q, budget.N_R, link, EstimatorKind.EL_LMMSE_TYPE.value)


@lru_cache(maxsize=256)
def _cached_H(Q_bytes: bytes, M: int, alpha_Q: float, P_b_bytes: bytes, N_Q: int, model: str):
    Q = np.frombuffer(Q_bytes, dtype=complex).reshape(M, M)
    P_b = np.frombuffer(P_b_bytes, dtype=float)
    EG = eg_matrices(np.real(np.diag(Q)), alpha_Q, P_b, N_Q)
    if model == "nominal":
        return EG, _nominal_H(EG.E, EG.G)
    return EG, joint_inverse_moments(Q, alpha_Q, P_b, N_Q, correlated=True, EG=EG)


def regp_inverse_moments(Q: np.ndarray, alpha_Q: float, P_b: np.ndarray, N_Q: int, model: str = "exact"):
    """(EGMatrices, H) for the shrunk diagonal estimate; cached on the inputs."""
    Q = np.ascontiguousarray(Q, dtype=complex)
    P_b = np.ascontiguousarray(np.broadcast_to(np.asarray(P_b, float), (Q.shape[0],)))
    return _cached_H(Q.tobytes(), Q.shape[0], float(alpha_Q), P_b.tobytes(), int(N_Q), model)


def thm3_terms(cov: CovarianceSet, u: int, budget: PilotBudget, reg: Regularization,
               link: str = "ul", model: str = "exact", EG=None) -> TermSet:
    """Expectation terms for the element-wise filter with shrunk ``Phat``.

    ``EG`` may supply precomputed EGMatrices; in the exact model the joint
    inverse moments are computed from it.
    """
    _check_model(model, link)
    Q = cov.Q_u[u]
    M = cov.M
    if EG is not None:
        if np.shape(EG.E) != (M,):
            raise ValueError("EG does not match the covariance dimension")
        H = (_nominal_H(EG.E, EG.G) if model == "nominal"
             else joint_inverse_moments(Q, reg.alpha_Q, reg.pb(M), budget.N_Q, EG=EG))
    else:
        EG, H = regp_inverse_moments(Q, reg.alpha_Q, reg.pb(M), budget.N_Q, model)
    parts = _elementwise_parts(cov, u, reg, link, model)
    return parts.terms(EG.E, H, budget.N_Q, budget.N_R, link, EstimatorKind.EL_LMMSE_TYPE_REGP.value)


def known_cov_terms(cov: CovarianceSet, u: int, kind="lmmse", link: str = "ul") -> TermSet:
    """Terms with the true filter ``R Q^-1`` (lmmse) or ``S P^-1`` (el-lmmse)."""
    kind = EstimatorKind(kind)
    if link not in LINKS:
        raise ValueError(f"link must be one of {LINKS}")
    Rl = cov.sharing(u)
    R = Rl[0]
    Q = cov.Q_u[u]
    Rs = cov.rs(link)
    L = Rl.shape[0]
    if kind == EstimatorKind.LMMSE:
        W = np.linalg.solve(Q, R).conj().T  # R Q^-1 for Hermitian R, Q
        v = np.trace(W.conj().T @ R)
        den1 = np.real(np.trace(W @ Q @ W.conj().T @ Rs))
        den2 = np.array([abs(np.trace(W.conj().T @ Rl[l])) ** 2 for l in range(L)])
    elif kind == EstimatorKind.EL_LMMSE:
        w = np.real(np.diag(R)) / np.real(np.diag(Q))
        v = w @ np.diag(R)
        den1 = np.real(np.sum(np.outer(w, w) * Q * Rs.T))
        den2 = np.array([abs(w @ np.diag(Rl[l])) ** 2 for l in range(L)])
    else:
        raise ValueError("known_cov_terms takes 'lmmse' or 'el-lmmse'")
    return TermSet(kind.value, link, math.inf, math.inf, float(abs(v)), float(den1), 0.0,
                   den2, np.zeros(L), float(np.imag(v)))


def estimator_terms(kind, cov: CovarianceSet, u: int, budget: PilotBudget, reg: Regularization,
                    link: str = "ul", model: str = "exact") -> TermSet:
    """Dispatch on the estimator kind."""
    kind = EstimatorKind(kind)
    if kind == EstimatorKind.LMMSE_TYPE:
        return thm1_terms(cov, u, budget, reg, link, model)
    if kind == EstimatorKind.EL_LMMSE_TYPE:
        return thm2_terms(cov, u, budget, reg, link, model)
    if kind == EstimatorKind.EL_LMMSE_TYPE_REGP:
        return thm3_terms(cov, u, budget, reg, link, model)
    return known_cov_terms(cov, u, kind, link)


# ---------------------------------------------------------------------------
# SINR and SE
# ---------------------------------------------------------------------------

def sinr_from_parts(num: float, den_total: float, d: float = 0.0) -> float:
    """``num^2 / (den_total - num^2 + d)`` with den_total = den1 + sum(den2)."""
    if num == 0:
        return 0.0
    den = den_total - num * num + d
    if not den > 0:
        raise InvalidRegimeError(f"non-positive SINR denominator {den!r}")
    return num * num / den


def sinr(terms: TermSet, link: str | None = None, lam: float | None = None) -> float:
    """UL or DL SINR from a TermSet; DL adds ``1/lam`` to the denominator."""
    link = link or terms.link
    if link != terms.link:
        raise ValueError(f"terms were built for {terms.link!r}, not {link!r}")
    d = 0.0
    if link == "dl":
        if lam is None:
            raise ValueError("DL SINR needs the DL power lam")
        d = 0.0 if math.isinf(lam) else 1.0 / lam
    return sinr_from_parts(terms.num, terms.den1 + float(np.sum(terms.den2)), d)


def spectral_efficiency(gamma: float, budget: PilotBudget | None, link: str) -> float:
    """UL: ``prelog * log2(1 + gamma)``; DL: ``log2(1 + gamma)``."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if link == "dl":
        return math.log2(1.0 + gamma)
    if link != "ul":
        raise ValueError(f"link must be one of {LINKS}")
    pl = budget.prelog
    if not pl > 0:
        raise BudgetExhaustedError(f"pre-log factor {pl} leaves no UL resources")
    return pl * math.log2(1.0 + gamma)


@dataclass(frozen=True)
class SEReport:
    kind: str
    gamma_ul: float
    gamma_dl: float
    prelog: float
    se_ul: float
    se_dl: float


def se_report(cov: CovarianceSet, u: int, kind, budget: PilotBudget, reg: Regularization,
              lam: float, model: str = "exact") -> SEReport:
    """UL and DL SINR and SE of user u for one estimator kind."""
    t_ul = estimator_terms(kind, cov, u, budget, reg, "ul", model)
    t_dl = estimator_terms(kind, cov, u, budget, reg, "dl", model)
    g_ul = sinr(t_ul)
    g_dl = sinr(t_dl, lam=lam)
    if EstimatorKind(kind).estimated:
        pl = budget.prelog
        se_ul = spectral_efficiency(g_ul, budget, "ul")
    else:
        # Known covariances carry no CovEst overhead.
        kb = budget.with_(N_R=0)
        pl = kb.prelog
        se_ul = spectral_efficiency(g_ul, kb, "ul")
    return SEReport(EstimatorKind(kind).value, g_ul, g_dl, pl, se_ul, spectral_efficiency(g_dl, None, "dl"))


# ---------------------------------------------------------------------------
# Thresholds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdResult:
    """``N_bar = (f c - a h)/(a g - f b)`` or None when no valid N_R exists."""

    N_bar: float | None
    a: float
    b: float
    c: float
    f: float
    g: float
    h: float
    d: float
    link: str
    N_Q: int

    @property
    def is_none(self) -> bool:
        return self.N_bar is None

    def gamma_full(self, N_R: float) -> float:
        return self.a / (self.b + self.c / N_R)

    def gamma_el(self, N_R: float) -> float:
        return self.f / (self.g + self.h / N_R)


def _dl_d(link: str, lam: float | None) -> float:
    if link == "dl":
        if lam is None:
            raise ValueError("DL threshold needs lam")
        return 1.0 / lam
    return 0.0


def threshold_from_coefficients(a, b, c, f, g, h, d, link, N_Q) -> ThresholdResult:
    num = f * c - a * h
    den = a * g - f * b
    # identical curves up to rounding: no meaningful crossing
    coincide = abs(num) <= 1e-12 * (abs(f * c) + abs(a * h)) and abs(den) <= 1e-12 * (abs(a * g) + abs(f * b))
    if coincide or abs(den) < 1e-12 * abs(num) or den == 0:
        N_bar = None
    else:
        N_bar = num / den
        if not N_bar > 0:
            N_bar = None
    return ThresholdResult(N_bar, a, b, c, f, g, h, d, link, N_Q)


def nr_threshold(cov: CovarianceSet, u: int, N_Q: int, reg: Regularization, link: str = "ul",
                 lam: float | None = None, model: str = "exact") -> ThresholdResult:
    """N_R at which the LMMSE-type and element-wise SINRs coincide.

    Coefficients come from the affine-in-1/N_R decomposition of both term sets:
    ``gamma_full = a/(b + c/N_R)`` and ``gamma_el = f/(g + h/N_R)``, where b and
    g include ``d = 1/lam`` on the DL.

    Returns:
        ThresholdResult with ``N_bar = None`` when the curves never cross at a
        positive N_R (or coincide).
    """
    budget = PilotBudget(1, 1, 1, math.inf, N_Q)
    return _threshold(_full_parts(cov, u, reg, link, model), _elementwise_parts(cov, u, reg, link, model),
                      cov, u, budget, link, _dl_d(link, lam), model)


def _threshold(fp: _FullParts, ep: _ElementwiseParts, cov, u, budget, link, d, model) -> ThresholdResult:
    t1 = fp.terms(budget.N_Q, math.inf, link)
    E, H = _unreg_inverse_moments(cov.Q_u[u], budget.N_Q, model)
    t2 = ep.terms(E, H, budget.N_Q, math.inf, link, "el-lmmse-type")
    return threshold_from_coefficients(t1.num ** 2, t1.b_const + d, t1.c_over_nr,
                                       t2.num ** 2, t2.b_const + d, t2.c_over_nr, d, link, budget.N_Q)


def nr_threshold_literal(cov: CovarianceSet, u: int, N_Q: int, reg: Regularization, link: str = "ul",
                         lam: float | None = None) -> ThresholdResult:
    """Direct transcription of the a..h threshold coefficients.

    Squared filter symbols are read as matrix products (``W_l^2 = W_l W_l``),
    Hadamard squares as squared magnitudes, and l-indexed terms of ``h`` are
    summed over the pilot-sharing users. The result corresponds to the
    ``"nominal"`` model.
    """
    M = cov.M
    Rl = cov.sharing(u)
    R = Rl[0]
    Q = cov.Q_u[u]
    Rs = cov.rs(link)
    d = _dl_d(link, lam)
    a_R = reg.alpha_R
    Rb = reg.rb(M)
    Qi = np.linalg.inv(Q)
    k1, k2 = wishart_kappas(N_Q, M)
    k3 = N_Q ** 2 / (N_Q - 1.0) ** 2
    k4 = k3 / (N_Q - 2.0)
    # full-matrix estimator
    Rbar = a_R * R + (1 - a_R) * Rb
    Wbar = Rbar @ Qi
    W = R @ Qi
    Wl = [Rm @ Qi for Rm in Rl]
    H_ = lambda X: X.conj().T
    a = abs(N_Q / (N_Q - M) * np.trace(H_(Wbar) @ R)) ** 2
    b = k1 * np.trace(Wbar @ Q @ H_(Wbar) @ Rs)
    for l, X in enumerate(Wl):
        b += k2 * abs(np.trace(H_(Wbar) @ Rl[l])) ** 2 + k1 / N_Q * np.trace(Wbar @ Wbar @ Q @ X @ X @ Q)
    b = np.real(b) - a + d
    c = a_R ** 2 * k1 / 2 * (M * np.trace(Rs @ Q) + np.trace(W) * np.trace(Rs @ R))
    for X in Wl:
        c += a_R ** 2 * k2 / 2 * (np.trace(X @ Q @ H_(X) @ Q) + np.trace(X @ R @ H_(X) @ R))
        c += a_R ** 2 * k1 / (2 * N_Q) * (M * np.trace(X @ X @ Q @ Q) + np.trace(W) * np.trace(X @ X @ Q @ R))
    c = np.real(c)
    # element-wise estimator
    Pd = np.real(np.diag(Q))
    P = np.diag(Pd)
    Pi = np.diag(1 / Pd)
    S = np.diag(np.real(np.diag(R)))
    Sl = [np.diag(np.real(np.diag(Rm))) for Rm in Rl]
    Sbar = a_R * S + (1 - a_R) * np.diag(np.real(np.diag(Rb)))
    Ss = np.diag(np.real(np.diag(Rs)))
    Wbe = Sbar @ Pi
    We = S @ Pi
    Wle = [X @ Pi for X in Sl]
    absQ2 = np.abs(Q) ** 2
    absR2 = np.abs(R) ** 2
    f = (N_Q / (N_Q - 1.0) * np.real(np.trace(H_(Wbe) @ R))) ** 2
    g = k3 * (np.trace(Wbe @ Q @ H_(Wbe) @ Rs) + sum(abs(np.trace(H_(Wbe) @ X)) ** 2 for X in Sl)) \
        + k4 * (np.trace(Wbe @ P @ H_(Wbe) @ Ss) + sum(np.trace(Wbe @ Wbe @ X @ X) for X in Sl))
    g = np.real(g) - f + d
    h = a_R ** 2 * k3 / 2 * np.trace(Pi @ Q @ Pi @ (Rs * absQ2) + Pi @ Q @ Pi @ (Rs * absR2))
    h += a_R ** 2 * k4 / 2 * (np.trace(Ss @ P) + np.trace(We @ Ss @ S)
                              + sum(np.trace(X @ X @ P @ P) + np.trace(X @ X @ S @ S) for X in Wle))
    h += a_R ** 2 * k3 / 2 * sum(np.sum(X @ absQ2 @ X) + np.sum(X @ absR2 @ X) for X in Wle)
    h = np.real(h)
    return threshold_from_coefficients(float(a), float(b), float(c), float(f), float(g), float(h),
                                       d, link, N_Q)


def nq_threshold(cov: CovarianceSet, u: int, reg: Regularization, link: str = "ul",
                 lam: float | None = None, nq_range: tuple[int, int] | None = None,
                 model: str = "exact") -> int | None:
    """Smallest N_Q in ``[lo, hi]`` for which ``nr_threshold`` is finite and positive.

    Returns:
        The integer N_Q, or None if no N_Q in range qualifies.
    """
    M = cov.M
    lo, hi = nq_range if nq_range is not None else (M + 2, 100 * M)
    lo = max(lo, M + 2)
    if hi < lo:
        raise ValueError(f"empty N_Q search range (need N_Q > M + 1 = {M + 1})")
    fp = _full_parts(cov, u, reg, link, model)
    ep = _elementwise_parts(cov, u, reg, link, model)
    d = _dl_d(link, lam)
    for n in range(lo, hi + 1):
        res = _threshold(fp, ep, cov, u, PilotBudget(1, 1, 1, math.inf, n), link, d, model)
        if not res.is_none:
            return n
    return None

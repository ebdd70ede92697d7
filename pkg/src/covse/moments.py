"""Closed-form moment identities and a Monte Carlo expectation engine.

Conventions: ``X ~ W(N, I)`` is an unnormalized complex Wishart matrix
(sum of N outer products of CN(0, I) vectors). ``Y`` is a diagonal matrix of
i.i.d. Gamma(N, 1) variables (half of a chi-square with 2N degrees of freedom).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

from .errors import DimensionError, NotPSDError, PoleError
from .numkit import as_generator, hermitian_eig


# ---------------------------------------------------------------------------
# Monte Carlo engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MCEstimate:
    """Sample mean with standard errors of its real and imaginary parts."""

    mean: np.ndarray | complex | float
    stderr: np.ndarray | float
    n_samples: int
    stderr_imag: np.ndarray | float | None = None

    def sigma_distance(self, value) -> np.ndarray:
        """Per-entry |value - mean| in units of standard error (max over re/im)."""
        diff = np.asarray(value) - np.asarray(self.mean)
        out = _ratio(np.abs(np.real(diff)), np.asarray(self.stderr))
        if self.stderr_imag is not None:
            out = np.maximum(out, _ratio(np.abs(np.imag(diff)), np.asarray(self.stderr_imag)))
        return out

    def agrees(self, value, k: float = 3.0, abs_floor: float = 0.0) -> bool:
        diff = np.asarray(value) - np.asarray(self.mean)
        ok = np.abs(np.real(diff)) <= np.maximum(k * np.asarray(self.stderr), abs_floor)
        if self.stderr_imag is not None:
            ok &= np.abs(np.imag(diff)) <= np.maximum(k * np.asarray(self.stderr_imag), abs_floor)
        return bool(np.all(ok))


def _ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))
    return r


class _Moments:
    """Streaming mean / centered second moment with Chan's pairwise merge."""

    def __init__(self):
        self.n = 0
        self.mean = None
        self.m2_re = None
        self.m2_im = None

    def update(self, x: np.ndarray) -> None:
        nb = x.shape[0]
        if nb == 0:
            return
        mb = x.mean(axis=0)
        d = x - mb
        m2r = np.sum(np.real(d) ** 2, axis=0)
        m2i = np.sum(np.imag(d) ** 2, axis=0)
        if self.n == 0:
            self.n, self.mean, self.m2_re, self.m2_im = nb, mb, m2r, m2i
            return
        n = self.n + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * (nb / n)
        w = self.n * nb / n
        self.m2_re = self.m2_re + m2r + np.real(delta) ** 2 * w
        self.m2_im = self.m2_im + m2i + np.imag(delta) ** 2 * w
        self.n = n

    def result(self, complex_data: bool) -> MCEstimate:
        if self.n < 2:
            raise ValueError("need at least two samples for a standard error")
        se_re = np.sqrt(self.m2_re / (self.n - 1) / self.n)
        if complex_data:
            se_im = np.sqrt(self.m2_im / (self.n - 1) / self.n)
            return MCEstimate(self.mean, se_re, self.n, se_im)
        return MCEstimate(np.real(self.mean), se_re, self.n)


def mc_expectation(sampler, statistic, n: int, rng, batch: int = 20000) -> MCEstimate:
    """Monte Carlo mean and standard error of ``statistic(sampler(gen, size))``.

    Args:
        sampler: callable ``(generator, size) -> samples`` with leading axis ``size``.
        statistic: callable mapping a sample batch to values with leading axis ``size``.
        n: total number of draws (>= 2).
        rng: RngStream, Generator or integer seed.
        batch: draws per batch.

    Returns:
        MCEstimate with per-entry standard errors.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    gen = as_generator(rng)
    acc = _Moments()
    is_complex = False
    done = 0
    while done < n:
        b = min(batch, n - done)
        vals = np.asarray(statistic(sampler(gen, b)))
        is_complex |= np.iscomplexobj(vals)
        acc.update(vals)
        done += b
    return acc.result(is_complex)


# ---------------------------------------------------------------------------
# Gaussian fourth moments
# ---------------------------------------------------------------------------

def _square(*mats):
    M = mats[0].shape[0]
    for A in mats:
        if A.ndim != 2 or A.shape != (M, M):
            raise DimensionError("operands must be square with equal size")


def gaussian_quartic(R: np.ndarray, A: np.ndarray) -> tuple[np.ndarray, float]:
    """E{h h^H A h h^H} and E{|h^H A h|^2} for h ~ CN(0, R)."""
    R, A = np.asarray(R), np.asarray(A)
    _square(R, A)
    tAR = np.trace(A @ R)
    m1 = R @ A @ R + R * tAR
    m2 = abs(np.trace(A.conj().T @ R)) ** 2 + np.real(np.trace(A @ R @ A.conj().T @ R))
    return m1, float(m2)


def bivariate_fourth_moment(R: np.ndarray) -> float:
    """E{|h1|^2 |h2|^2} for a zero-mean circular complex Gaussian pair."""
    R = np.asarray(R)
    if R.shape != (2, 2):
        raise DimensionError("R must be 2x2")
    return float(np.real(R[0, 0] * R[1, 1]) + abs(R[0, 1]) ** 2)


# ---------------------------------------------------------------------------
# Inverse Wishart and inverse gamma moments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InvWishartMoments:
    mean: np.ndarray          # E{X^-1}
    second: np.ndarray        # E{[X^-1]_ij [X^-1]_lk}, indexed [i, j, l, k]
    tr_sq_c: complex          # E{tr(X^-2 C)}
    abs_tr_sq: float          # E{|tr(X^-1 A)|^2}


def wishart_kappas(N: int, M: int) -> tuple[float, float]:
    """(kappa1, kappa2) with kappa2 = N^2/((N-M)^2-1), kappa1 = N kappa2/(N-M)."""
    if N <= M + 1:
        raise PoleError(f"inverse Wishart moments need N > M + 1 (N={N}, M={M})")
    d = N - M
    k2 = N * N / (d * d - 1.0)
    return N * k2 / d, k2


def inv_wishart_moments(N: int, M: int, C: np.ndarray, A: np.ndarray) -> InvWishartMoments:
    """First and second inverse moments of X ~ W(N, I) of size M."""
    if N <= M + 1:
        raise PoleError(f"inverse Wishart moments need N > M + 1 (N={N}, M={M})")
    C, A = np.asarray(C), np.asarray(A)
    if C.shape != (M, M) or A.shape != (M, M):
        raise DimensionError("C and A must be M x M")
    d = float(N - M)
    I = np.eye(M)
    second = (np.einsum("ij,lk->ijlk", I, I) + np.einsum("lj,ik->ijlk", I, I) / d) / (d * d - 1)
    tr_sq_c = N / (d ** 3 - d) * np.trace(C)
    abs_tr = (abs(np.trace(A)) ** 2 + np.real(np.trace(A @ A.conj().T)) / d) / (d * d - 1)
    return InvWishartMoments(I / d, second, tr_sq_c, float(abs_tr))


def inv_chi2_taus(N: int) -> tuple[float, float]:
    if N <= 2:
        raise PoleError(f"inverse chi-square moments need N > 2 (N={N})")
    t1 = 1.0 / (N - 1) ** 2
    return t1, t1 / (N - 2)


def inv_chi2_moments(N: int, A1: np.ndarray, A2: np.ndarray, A: np.ndarray) -> tuple[complex, float]:
    """E{tr(Y^-1 A1 Y^-1 A2)} and E{|tr(Y^-1 A)|^2} for diagonal Y of i.i.d. Gamma(N, 1)."""
    t1, t2 = inv_chi2_taus(N)
    A1, A2, A = map(np.asarray, (A1, A2, A))
    _square(A1, A2, A)
    m1 = t1 * np.trace(A1 @ A2) + t2 * np.sum(np.diag(A1) * np.diag(A2))
    m2 = t1 * abs(np.trace(A)) ** 2 + t2 * np.sum(np.abs(np.diag(A)) ** 2)
    return m1, float(m2)


# ---------------------------------------------------------------------------
# Cross-covariance estimator moments
# ---------------------------------------------------------------------------

def _check_interference(R, Q, interferers):
    rest = Q - R
    if interferers is not None:
        rest = rest - np.sum(interferers, axis=0)
    try:
        hermitian_eig(rest, name="Q - R")
    except NotPSDError as exc:
        raise NotPSDError("Q - R (minus interferers) must be positive semidefinite") from exc


def rddot_moments(R: np.ndarray, Q: np.ndarray, A: np.ndarray, N_R: int,
                  interferers: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """E{R'' A R''} and E{|tr(R'' A)|^2} for the Hermitian cross-covariance estimate.

    Without ``interferers`` the contamination in the two LS estimates is taken
    to be independent (e.g. pure noise). With ``interferers`` (stack of
    covariances of users whose CovEst phase is randomized) the dependence they
    induce between the two estimates adds ``sum_m R_m A R_m`` and
    ``sum_m |tr(A R_m)|^2`` to the 1/(2 N_R) penalty.

    Args:
        R: target covariance.
        Q: covariance of each LS estimate.
        A: arbitrary M x M matrix.
        N_R: number of CovEst blocks.
        interferers: optional (L-1, M, M) interferer covariances.

    Returns:
        (matrix moment, scalar moment).
    """
    if N_R < 1:
        raise ValueError("N_R must be at least 1")
    R, Q, A = map(np.asarray, (R, Q, A))
    _square(R, Q, A)
    _check_interference(R, Q, interferers)
    Ah = A.conj().T
    c = 1.0 / (2.0 * N_R)
    m1 = R @ A @ R + c * (Q * np.trace(A @ Q) + R * np.trace(A @ R))
    m2 = abs(np.trace(R @ A)) ** 2 + c * np.real(np.trace(A @ Q @ Ah @ Q) + np.trace(A @ R @ Ah @ R))
    if interferers is not None:
        for Rm in interferers:
            m1 = m1 + c * Rm @ A @ Rm
            m2 = m2 + c * abs(np.trace(A @ Rm)) ** 2
    return m1, float(m2)


def sddot_cov(R: np.ndarray, Q: np.ndarray, N_R: int,
              interferers: np.ndarray | None = None) -> np.ndarray:
    """Covariance matrix V of the raw diagonal estimate S'' (entries p, q)."""
    V = np.abs(Q) ** 2 + np.abs(R) ** 2
    if interferers is not None:
        s = np.real(np.diagonal(interferers, axis1=-2, axis2=-1))
        V = V + s.T @ s
    return V / (2.0 * N_R)


def sddot_moments(R: np.ndarray, Q: np.ndarray, A: np.ndarray, D: np.ndarray, N_R: int,
                  interferers: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """E{S'' A S''} and E{|tr(S'' D)|^2} for the diagonal cross-covariance estimate.

    The Hadamard penalties use squared magnitudes ``|Q_pq|^2`` and ``|R_pq|^2``.

    Args:
        R, Q: as in :func:`rddot_moments`.
        A: arbitrary M x M matrix.
        D: diagonal matrix (or vector of its diagonal).
        N_R: number of CovEst blocks.
        interferers: optional interferer covariances (see :func:`rddot_moments`).

    Returns:
        (matrix moment, scalar moment).
    """
    if N_R < 1:
        raise ValueError("N_R must be at least 1")
    R, Q, A = map(np.asarray, (R, Q, A))
    _square(R, Q, A)
    D = np.asarray(D)
    if D.ndim == 2:
        if np.any(D - np.diag(np.diag(D))):
            raise DimensionError("D must be diagonal")
        d = np.diag(D)
    else:
        d = D
    if d.shape != (R.shape[0],):
        raise DimensionError("D has the wrong size")
    _check_interference(R, Q, interferers)
    s = np.real(np.diag(R))
    T = np.outer(s, s) + sddot_cov(R, Q, N_R, interferers)
    m1 = A * T
    m2 = np.real(d @ T @ d.conj())
    return m1, float(m2)


# ---------------------------------------------------------------------------
# Regularized diagonal estimate: E/G matrices and joint inverse moments
# ---------------------------------------------------------------------------

def scaled_expn(n: int, z) -> np.ndarray:
    """exp(z) * E_n(z) for integer n >= 1 and z >= 0 (z > 0 when n = 1)."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z < 1.0
    if np.any(small):
        zs = z[small]
        if n == 1 and np.any(zs == 0):
            raise PoleError("E_1(0) is infinite")
        out[small] = np.exp(zs) * special.expn(n, zs)
    big = ~small
    if np.any(big):
        out[big] = _expn_cf(n, z[big])
    return out


def _expn_cf(n: int, x: np.ndarray, eps: float = 4e-16, max_iter: int = 10000) -> np.ndarray:
    # Modified Lentz evaluation of the continued fraction for exp(x) E_n(x), x >= 1.
    tiny = 1e-300
    b = x + n
    c = np.full_like(x, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, max_iter + 1):
        an = -i * (n - 1.0 + i)
        b = b + 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h = h * delta
        if np.all(np.abs(delta - 1.0) < eps):
            return h
    raise ArithmeticError("continued fraction for E_n did not converge")


@dataclass(frozen=True)
class EGMatrices:
    """Diagonals of E = E{P_hat^-1} and G = E{P_hat^-2} (stored as vectors)."""

    E: np.ndarray
    G: np.ndarray
    N_Q: int
    alpha_Q: float
    method: str

    @property
    def var(self) -> np.ndarray:
        return self.G - self.E ** 2


def _eg_params(P_u, alpha_Q, P_b, N_Q):
    P_u = np.asarray(P_u, dtype=float)
    P_b = np.broadcast_to(np.asarray(P_b, dtype=float), P_u.shape)
    if not 0.0 <= alpha_Q <= 1.0:
        raise ValueError("alpha_Q must lie in [0, 1]")
    if N_Q < 1:
        raise ValueError("N_Q must be at least 1")
    if np.any(P_u <= 0):
        raise ValueError("P_u must be positive")
    if alpha_Q < 1 and np.any(P_b <= 0):
        raise ValueError("P_b must be positive")
    a = alpha_Q * P_u / N_Q
    b = (1.0 - alpha_Q) * P_b
    return P_u, P_b, a, b


def _eg_series(N: int, x: np.ndarray, terms: int = 40):
    # sum_j (-x)^j (N)_j and sum_j (j+1) (-x)^j (N)_j, with (N)_j the rising factorial
    E = np.zeros_like(x)
    G = np.zeros_like(x)
    t = np.ones_like(x)
    for j in range(terms):
        E += t
        G += (j + 1) * t
        t = -t * x * (N + j)
    return E, G


def eg_matrices(P_u, alpha_Q: float, P_b, N_Q: int, method: str = "expint") -> EGMatrices:
    """First and second inverse moments of ``alpha_Q * P'' + (1 - alpha_Q) * P_b``.

    ``P''_pp = P_pp * Y / N_Q`` with ``Y ~ Gamma(N_Q, 1)``. The default method
    uses ``E{(aY + b)^-1} = exp(c) E_N(c) / a`` and
    ``E{(aY + b)^-2} = (exp(c) E_{N-1}(c) - exp(c) E_N(c)) / a^2`` with ``c = b / a``.
    ``method="quad"`` integrates against the gamma density instead.

    Args:
        P_u: (M,) diagonal of P.
        alpha_Q: shrinkage weight.
        P_b: (M,) or scalar bias diagonal.
        N_Q: number of samples.
        method: "expint" or "quad".

    Returns:
        EGMatrices.
    """
    P_u, P_b, a, b = _eg_params(P_u, alpha_Q, P_b, N_Q)
    if alpha_Q == 0.0:
        return EGMatrices(1.0 / b, 1.0 / b ** 2, N_Q, alpha_Q, "exact")
    if alpha_Q == 1.0:
        if N_Q <= 2:
            raise PoleError("alpha_Q = 1 needs N_Q > 2 for a finite second moment")
        E = 1.0 / ((N_Q - 1) * a)
        G = 1.0 / ((N_Q - 1) * (N_Q - 2) * a ** 2)
        return EGMatrices(E, G, N_Q, alpha_Q, "exact")
    if method == "expint":
        x = a / b
        if np.all(x * (N_Q + 40) < 0.05):
            # heavy shrinkage: expand (aY + b)^-k in powers of a Y / b
            E, G = _eg_series(N_Q, x)
            return EGMatrices(E / b, G / b ** 2, N_Q, alpha_Q, "series")
        c = b / a
        e_n = scaled_expn(N_Q, c)
        e_n1 = scaled_expn(N_Q - 1, c) if N_Q > 1 else None
        E = e_n / a
        if N_Q > 1:
            G = (e_n1 - e_n) / a ** 2
        else:
            # N_Q = 1: E{(aY+b)^-2} = (1/b - exp(c)E_1(c)/a) / a
            G = (1.0 / b - e_n / a) / a
        return EGMatrices(E, G, N_Q, alpha_Q, method)
    if method == "quad":
        E = np.empty_like(a)
        G = np.empty_like(a)
        dist = stats.gamma(N_Q)
        lo = max(0.0, N_Q - 40.0 * np.sqrt(N_Q))
        hi = N_Q + 40.0 * np.sqrt(N_Q) + 40.0
        for i in range(a.size):
            f1 = lambda y, i=i: dist.pdf(y) / (a[i] * y + b[i])
            f2 = lambda y, i=i: dist.pdf(y) / (a[i] * y + b[i]) ** 2
            E[i] = integrate.quad(f1, lo, hi, epsabs=0, epsrel=1e-12, limit=400, points=[N_Q])[0]
            G[i] = integrate.quad(f2, lo, hi, epsabs=0, epsrel=1e-12, limit=400, points=[N_Q])[0]
        return EGMatrices(E, G, N_Q, alpha_Q, method)
    raise ValueError(f"unknown method {method!r}")


def regP_moments(EG: EGMatrices, A1: np.ndarray, A2: np.ndarray, A: np.ndarray,
                 tol: float = 1e-12) -> tuple[complex, float]:
    """E{tr(P^-1 A1 P^-1 A2)} and E{|tr(P^-1 A)|^2} for independent diagonal entries."""
    A1, A2, A = map(np.asarray, (A1, A2, A))
    _square(A1, A2, A)
    E = np.asarray(EG.E)
    var = np.asarray(EG.G) - E ** 2
    if E.shape != (A.shape[0],):
        raise DimensionError("EG size does not match the matrices")
    if np.any(var < -tol * np.asarray(EG.G)):
        raise ArithmeticError("G - E^2 has a negative entry; quadrature is inaccurate")
    m1 = np.trace((E[:, None] * A1) @ (E[:, None] * A2)) + np.sum(var * np.diag(A1) * np.diag(A2))
    m2 = abs(np.sum(E * np.diag(A))) ** 2 + np.sum(var * np.abs(np.diag(A)) ** 2)
    return m1, float(np.real(m2))


def joint_inverse_moments(Q: np.ndarray, alpha_Q: float, P_b, N_Q: int,
                          correlated: bool = True, EG: EGMatrices | None = None) -> np.ndarray:
    """Matrix H_pq = E{1 / (P_hat_p P_hat_q)} for the (regularized) diagonal estimate.

    The diagonal entries of a sample covariance are correlated across antennas:
    each pair (Y_p, Y_q) follows Kibble's bivariate gamma law with correlation
    ``r = |Q_pq|^2 / (Q_pp Q_qq)``. With ``correlated=False`` the off-diagonal
    entries are ``E_p E_q`` as for independent entries.

    Off-diagonal entries solve
    ``a_p a_q H_pq = int_0^1 exp(-c_p x/(1-x)) (1-x)^(N-2) / (1-r x) e_N(c_q/(1-r x)) dx``
    with ``e_N(z) = exp(z) E_N(z)``, ``a = alpha_Q P / N_Q``, ``c = (1-alpha_Q) P_b / a``;
    at ``alpha_Q = 1`` this reduces to ``N^2 2F1(1, 1; N; r) / ((N-1)^2 P_p P_q)``.

    Args:
        Q: covariance of the LS estimate.
        alpha_Q: shrinkage weight (> 0).
        P_b: bias diagonal.
        N_Q: number of samples.
        correlated: include the inter-antenna correlation.
        EG: precomputed E/G (optional).

    Returns:
        (M, M) real symmetric matrix.
    """
    Q = np.asarray(Q)
    P_u = np.real(np.diag(Q))
    if EG is None:
        EG = eg_matrices(P_u, alpha_Q, P_b, N_Q)
    H = np.outer(EG.E, EG.E)
    np.fill_diagonal(H, EG.G)
    if not correlated or alpha_Q == 0.0:
        return H
    M = P_u.size
    iu, ju = np.triu_indices(M, 1)
    if iu.size == 0:
        return H
    r = np.abs(Q[iu, ju]) ** 2 / (P_u[iu] * P_u[ju])
    r = np.clip(r, 0.0, 1.0)
    P_u, P_b, a, b = _eg_params(P_u, alpha_Q, P_b, N_Q)
    if alpha_Q == 1.0:
        if N_Q <= 2:
            raise PoleError("alpha_Q = 1 needs N_Q > 2")
        vals = special.hyp2f1(1.0, 1.0, N_Q, r) / ((N_Q - 1.0) ** 2 * a[iu] * a[ju])
    else:
        c = b / a
        cp, cq = c[iu], c[ju]
        nz = r > 0
        vals = EG.E[iu] * EG.E[ju]
        if np.any(nz):
            cpn, cqn, rn = cp[nz], cq[nz], r[nz]

            def f(x):
                if x >= 1.0:
                    return np.zeros_like(rn)
                den = 1.0 - rn * x
                return (np.exp(-cpn * x / (1.0 - x)) * (1.0 - x) ** (N_Q - 2) / den
                        * scaled_expn(N_Q, cqn / den))

            integral, _ = integrate.quad_vec(f, 0.0, 1.0, epsabs=0.0, epsrel=1e-11, limit=2000,
                                             points=sorted({min(0.5, 1.0 / (1.0 + cpn.min())),
                                                            min(0.5, 1.0 / (1.0 + cpn.max()))}))
            vals = vals.copy()
            vals[nz] = integral / (a[iu][nz] * a[ju][nz])
    H[iu, ju] = vals
    H[ju, iu] = vals
    return H

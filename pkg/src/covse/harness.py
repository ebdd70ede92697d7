"""Monte Carlo simulation of the pilot, covariance-estimation and combining pipeline.

Each trial draws its own N_Q blocks for the sample covariance and N_R block
pairs (with fresh phase shifts) for the cross-covariance, builds the filters
of all requested estimator kinds from the same draws and records the three
trace statistics entering the SINR. Simulated SE is obtained by plugging the
sample means into the SINR expression; its standard error follows from the
delta method.

Trials are processed in fixed-size chunks, each with its own derived random
stream, so results do not depend on how the work is scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import (LINKS, PilotBudget, Regularization, estimator_terms, known_cov_terms,
                     sinr_from_parts)
from .errors import BudgetExhaustedError, CovseError, InvalidRegimeError, PoleError
from .estimators import EstimatorKind, cross_cov_RS, LsPair, sample_cov_QP
from .moments import MCEstimate
from .numkit import RngStream, psd_sqrt, standard_cgauss
from .scenario import CovarianceSet

CHUNK = 64
ABORT_RTOL = 1e-12


@dataclass
class TrialResult:
    """Per-trial statistics of one estimator kind.

    ``num`` holds tr(W^H R), ``den1_ul``/``den1_dl`` hold tr(W Q W^H R_s) for
    both interference matrices and ``den2`` holds |tr(W^H R_l)|^2 per sharing
    user. Aborted trials are excluded; ``seeds`` lists the (base, stream) pair
    of every chunk.
    """

    kind: str
    num: np.ndarray
    den1_ul: np.ndarray
    den1_dl: np.ndarray
    den2: np.ndarray
    trial_index: np.ndarray
    n_aborted: int = 0
    seeds: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.num.shape[0]

    @property
    def abort_rate(self) -> float:
        tot = self.n + self.n_aborted
        return self.n_aborted / tot if tot else 0.0

    def den1(self, link: str) -> np.ndarray:
        return self.den1_ul if link == "ul" else self.den1_dl

    def estimates(self, link: str = "ul") -> dict[str, MCEstimate]:
        """Sample means and standard errors of each term."""
        if self.n == 0:
            raise ValueError("no completed trials")
        def se(x):
            if self.n < 2:
                return np.full(np.shape(x[0]), np.inf)
            if _constant(x):
                return np.zeros(np.shape(x[0]))
            return np.std(x, axis=0, ddof=1) / math.sqrt(self.n)

        num = MCEstimate(_mean(self.num), se(np.real(self.num)), self.n, se(np.imag(self.num)))
        d1 = self.den1(link)
        return {"num": num,
                "den1": MCEstimate(_mean(d1), se(d1), self.n),
                "den2": MCEstimate(_mean(self.den2), se(self.den2), self.n)}

    def sinr(self, link: str, lam: float | None = None) -> tuple[float, float]:
        """Plug-in SINR and its delta-method standard error."""
        if self.n < 2:
            raise ValueError("need at least two completed trials")
        d = 1.0 / lam if link == "dl" else 0.0
        den = self.den1(link) + self.den2.sum(axis=1)
        if _constant(self.num) and _constant(den):
            return sinr_from_parts(abs(self.num[0]), den[0], d), 0.0
        Z = np.column_stack([np.real(self.num), np.imag(self.num),
                             self.den1(link) + self.den2.sum(axis=1)])
        m = Z.mean(axis=0)
        s = m[0] ** 2 + m[1] ** 2
        D = m[2] + d
        gamma = sinr_from_parts(math.sqrt(s), m[2], d)
        den = (D - s) ** 2
        grad = np.array([2 * m[0] * D / den, 2 * m[1] * D / den, -s / den])
        C = np.cov(Z, rowvar=False)
        var = float(grad @ C @ grad) / self.n
        return gamma, math.sqrt(max(var, 0.0))


def _constant(x: np.ndarray) -> bool:
    return bool(np.all(x == x[0]))


def _mean(x: np.ndarray):
    # exact for constant columns, so deterministic filters reproduce the closed forms
    if _constant(x):
        return x[0].copy() if x.ndim > 1 else x[0]
    return np.mean(x, axis=0)


def _chunk_stats(kinds, cov: CovarianceSet, u: int, budget: PilotBudget, reg: Regularization,
                 B: np.ndarray, gen: np.random.Generator, T: int) -> dict:
    M = cov.M
    Rl = cov.sharing(u)
    L = Rl.shape[0]
    R = Rl[0]
    Q = cov.Q_u[u]
    sigma = 1.0 / math.sqrt(cov.P * cov.mu)
    N_Q, N_R = budget.N_Q, int(budget.N_R)
    # Sample-covariance blocks: h1 only.
    g = standard_cgauss(gen, (T, N_Q, L, M))
    hq = np.einsum("tnlk,lmk->tnm", g, B) + sigma * standard_cgauss(gen, (T, N_Q, M))
    Qh, Ph = sample_cov_QP(hq)
    # Cross-covariance block pairs with fresh phases.
    g = standard_cgauss(gen, (T, N_R, L, M))
    h = np.einsum("tnlk,lmk->tnlm", g, B)
    theta = gen.uniform(0.0, 2 * np.pi, size=(T, N_R, L))
    rot = np.exp(1j * (theta - theta[..., :1]))
    h1 = h.sum(axis=2) + sigma * standard_cgauss(gen, (T, N_R, M))
    h2 = np.einsum("tnlm,tnl->tnm", h, rot) + sigma * standard_cgauss(gen, (T, N_R, M))
    Rdd, Sdd = cross_cov_RS(LsPair(h1, h2))
    Rb = reg.rb(M)
    Rh = reg.alpha_R * Rdd + (1 - reg.alpha_R) * Rb
    Sh = reg.alpha_R * Sdd + (1 - reg.alpha_R) * np.real(np.diag(Rb))
    Ph_reg = reg.alpha_Q * Ph + (1 - reg.alpha_Q) * reg.pb(M)

    sl = np.real(np.diagonal(Rl, axis1=-2, axis2=-1))  # (L, M)
    out = {}
    for kind in kinds:
        ok = np.ones(T, bool)
        if kind == EstimatorKind.LMMSE_TYPE:
            lam = np.linalg.eigvalsh(Qh)
            ok = lam[:, 0] > ABORT_RTOL * lam[:, -1]
            Qs = np.where(ok[:, None, None], Qh, np.eye(M))
            W = np.conj(np.swapaxes(np.linalg.solve(Qs, Rh), -1, -2))  # Rh Qh^-1
        elif not kind.estimated:
            # deterministic filter: reuse the closed-form terms
            t = {lk: known_cov_terms(cov, u, kind, lk) for lk in LINKS}
            out[kind] = (np.full(T, t["ul"].num, complex), np.full(T, t["ul"].den1), np.full(T, t["dl"].den1),
                         np.tile(t["ul"].den2, (T, 1)), ok)
            continue
        else:
            if kind == EstimatorKind.EL_LMMSE_TYPE:
                w = Sh / Ph
            else:
                w = Sh / Ph_reg
            num = w @ np.real(np.diag(R)).astype(complex)
            d1 = {lk: np.einsum("tp,pq,tq->t", w, np.real(Q * cov.rs(lk).T), w) for lk in LINKS}
            den2 = (w @ sl.T) ** 2
            out[kind] = (num, d1["ul"], d1["dl"], den2, ok)
            continue
        Wh = np.conj(np.swapaxes(W, -1, -2))
        num = np.einsum("tij,ji->t", Wh, R)
        WQ = W @ Q
        d1 = {lk: np.real(np.einsum("tij,tjk,ki->t", WQ, Wh, cov.rs(lk))) for lk in LINKS}
        den2 = np.abs(np.einsum("tij,lji->tl", Wh, Rl)) ** 2
        out[kind] = (num, d1["ul"], d1["dl"], den2, ok)
    return out


def simulate_terms(cov: CovarianceSet, u: int, kinds, budget: PilotBudget, reg: Regularization,
                   n_trials: int, rng: RngStream, chunk: int = CHUNK) -> dict[str, TrialResult]:
    """Sample the SINR expectation terms for several estimator kinds from shared draws.

    Args:
        cov: ground-truth covariances.
        u: target user.
        kinds: estimator kinds (values or EstimatorKind).
        budget: N_R and N_Q used per trial.
        reg: regularization parameters.
        n_trials: number of (Q_hat, R_hat) realizations.
        rng: base random stream; chunk c uses ``rng.spawn("chunk", c)``.
        chunk: trials per chunk.

    Returns:
        Mapping from kind value to TrialResult.
    """
    kinds = [EstimatorKind(k) for k in kinds]
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    if not isinstance(rng, RngStream):
        rng = RngStream(int(rng))
    if any(k.estimated for k in kinds):
        if budget.N_R < 1 or not math.isfinite(budget.N_R):
            raise ValueError("simulation needs a finite N_R >= 1")
        if budget.N_Q < 1:
            raise ValueError("simulation needs N_Q >= 1")
    B = np.stack([psd_sqrt(Rm) for Rm in cov.sharing(u)])
    acc = {k: [] for k in kinds}
    seeds = []
    for c, start in enumerate(range(0, n_trials, chunk)):
        T = min(chunk, n_trials - start)
        stream = rng.spawn("chunk", c)
        seeds.append((stream.base_seed, stream.stream_id))
        stats = _chunk_stats(kinds, cov, u, budget, reg, B, stream.generator(), T)
        for k in kinds:
            acc[k].append((start, stats[k]))
    out = {}
    for k in kinds:
        parts = acc[k]
        ok = np.concatenate([p[1][4] for p in parts])
        idx = np.concatenate([start + np.arange(p[4].size) for start, p in parts])
        cat = [np.concatenate([p[1][i] for p in parts]) for i in range(4)]
        out[k.value] = TrialResult(k.value, cat[0][ok], cat[1][ok], cat[2][ok], cat[3][ok], idx[ok],
                                   int((~ok).sum()), list(seeds))
    return out


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepCell:
    kind: str
    link: str
    N_R: int
    N_Q: int
    prelog: float
    gamma: float | None
    se_theory: float | None
    gamma_sim: float | None
    se_sim: float | None
    sim_stderr: float | None
    n_trials: int
    status: str


@dataclass
class SweepResult:
    cells: list[SweepCell]
    M: int
    L: int
    K: int
    P: int
    C_u: int
    tau_s: int
    alpha_R: float
    alpha_Q: float

    def select(self, kind=None, link=None, N_Q=None) -> list[SweepCell]:
        kind = EstimatorKind(kind).value if kind is not None else None
        return [c for c in self.cells
                if (kind is None or c.kind == kind) and (link is None or c.link == link)
                and (N_Q is None or c.N_Q == N_Q)]


def _se_from_gamma(gamma: float, prelog: float, link: str) -> float:
    if link == "dl":
        return math.log2(1.0 + gamma)
    if not prelog > 0:
        raise BudgetExhaustedError(f"pre-log factor {prelog} leaves no UL resources")
    return prelog * math.log2(1.0 + gamma)


def run_sweep(cov: CovarianceSet, nr_grid, nq_grid, kinds, n_trials: int, rng, *,
              reg: Regularization | None = None, C_u: int = 100, tau_s: int = 25000,
              lam: float = 10.0, links=LINKS, u: int = 0, model: str = "exact",
              simulate: bool = True) -> SweepResult:
    """Theory and (optionally) simulated SE over an (N_R, N_Q) grid.

    Draws are shared across estimator kinds and links within a grid cell;
    different cells use disjoint random streams. Failures are recorded per
    cell in ``status`` and never abort the sweep.

    Args:
        cov: ground-truth covariances (its pilot length P enters the pre-log).
        nr_grid, nq_grid: grid values.
        kinds: estimator kinds.
        n_trials: trials per cell.
        rng: base seed or RngStream.
        reg: regularization (default 0.95 / 0.95, identity biases).
        C_u, tau_s: coherence and statistics-coherence lengths.
        lam: DL transmit power.
        links: subset of ("ul", "dl").
        u: target user.
        model: theory model passed to the engine.
        simulate: skip the simulation when False.

    Returns:
        SweepResult.
    """
    reg = reg or Regularization()
    base = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    kinds = [EstimatorKind(k) for k in kinds]
    cells = []
    for N_Q in nq_grid:
        for N_R in nr_grid:
            budget = PilotBudget(cov.P, C_u, tau_s, N_R, N_Q)
            prelog_est = budget.prelog
            sims, sim_err = {}, None
            if simulate:
                try:
                    sims = simulate_terms(cov, u, kinds, budget, reg, n_trials,
                                          base.spawn(f"cell|u={u}|N_R={N_R}|N_Q={N_Q}"))
                except (CovseError, ValueError, np.linalg.LinAlgError) as exc:
                    sim_err = type(exc).__name__
            for kind in kinds:
                prelog = prelog_est if kind.estimated else budget.with_(N_R=0).prelog
                for link in links:
                    status = []
                    gamma = se_t = g_sim = se_s = err = None
                    n_used = 0
                    try:
                        terms = estimator_terms(kind, cov, u, budget, reg, link, model)
                        gamma = sinr_from_parts(terms.num, terms.den1 + float(np.sum(terms.den2)),
                                                1.0 / lam if link == "dl" else 0.0)
                        se_t = _se_from_gamma(gamma, prelog, link)
                    except PoleError:
                        status.append("theory-pole")
                    except InvalidRegimeError:
                        status.append("theory-invalid-regime")
                    except BudgetExhaustedError:
                        status.append("budget-exhausted")
                    if simulate:
                        if sim_err is not None:
                            status.append(f"sim-error:{sim_err}")
                        else:
                            tr = sims[kind.value]
                            n_used = tr.n
                            if tr.n_aborted:
                                status.append(f"aborted={tr.n_aborted}")
                            try:
                                g_sim, g_err = tr.sinr(link, lam)
                                se_s = _se_from_gamma(g_sim, prelog, link)
                                dse = (prelog if link == "ul" else 1.0) / ((1.0 + g_sim) * math.log(2))
                                err = dse * g_err
                            except InvalidRegimeError:
                                status.append("sim-invalid-regime")
                            except BudgetExhaustedError:
                                if "budget-exhausted" not in status:
                                    status.append("budget-exhausted")
                            except ValueError:
                                status.append("sim-too-few-trials")
                    cells.append(SweepCell(kind.value, link, N_R, N_Q, prelog, gamma, se_t, g_sim, se_s,
                                           err, n_used, ";".join(status) or "ok"))
    return SweepResult(cells, cov.M, cov.L, cov.K, cov.P, C_u, tau_s, reg.alpha_R, reg.alpha_Q)


@dataclass(frozen=True)
class CurveSummary:
    kind: str
    link: str
    n_cells: int
    max_rel_gap: float
    coverage: float


def _crossings(nr, diff):
    out = []
    for i in range(len(nr) - 1):
        if diff[i] == 0:
            out.append((nr[i], nr[i]))
        elif diff[i] * diff[i + 1] < 0:
            out.append((nr[i], nr[i + 1]))
    if len(diff) and diff[-1] == 0:
        out.append((nr[-1], nr[-1]))
    return out


def compare_curves(sweep: SweepResult, k: float = 3.0) -> dict:
    """Agreement statistics between simulated and theoretical SE.

    Returns:
        ``{"curves": [CurveSummary], "crossings": {(link, N_Q, source): [(N_lo, N_hi)]}}``
        where crossings locate sign changes of the LMMSE-type minus element-wise
        SE difference along N_R for the theory and sim columns.
    """
    if not sweep.cells:
        raise ValueError("empty sweep")
    curves = []
    keys = sorted({(c.kind, c.link) for c in sweep.cells})
    for kind, link in keys:
        cs = [c for c in sweep.cells if c.kind == kind and c.link == link
              and c.se_theory is not None and c.se_sim is not None]
        if not cs:
            curves.append(CurveSummary(kind, link, 0, math.nan, math.nan))
            continue
        gaps = [abs(c.se_sim - c.se_theory) / abs(c.se_theory) if c.se_theory else
                (0.0 if c.se_sim == c.se_theory else math.inf) for c in cs]
        inside = [abs(c.se_sim - c.se_theory) <= k * (c.sim_stderr or 0.0) for c in cs]
        curves.append(CurveSummary(kind, link, len(cs), max(gaps), float(np.mean(inside))))
    crossings = {}
    full, el = EstimatorKind.LMMSE_TYPE.value, EstimatorKind.EL_LMMSE_TYPE.value
    for link in sorted({c.link for c in sweep.cells}):
        for N_Q in sorted({c.N_Q for c in sweep.cells}):
            a = {c.N_R: c for c in sweep.select(full, link, N_Q)}
            b = {c.N_R: c for c in sweep.select(el, link, N_Q)}
            for src, attr in (("theory", "se_theory"), ("sim", "se_sim")):
                nr = sorted(n for n in a if n in b and getattr(a[n], attr) is not None
                            and getattr(b[n], attr) is not None)
                if nr:
                    diff = [getattr(a[n], attr) - getattr(b[n], attr) for n in nr]
                    crossings[(link, N_Q, src)] = _crossings(nr, diff)
    return {"curves": curves, "crossings": crossings}

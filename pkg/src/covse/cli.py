"""Command-line entry point: theory, simulate, threshold and lemmas-check.

Configuration is a TOML file with the sections ``[scenario]``, ``[budget]``,
``[regularization]`` and ``[run]``; every key is optional and defaults to the
reference system. ``--set KEY=VALUE`` overrides a key, written either as
``section.key`` or as a bare key when the name is unique.

Exit codes: 0 success, 2 configuration error, 3 systemic numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .engine import PilotBudget, Regularization, nq_threshold, nr_threshold, se_report
from .errors import BudgetExhaustedError, ConfigError, CovseError, InvalidRegimeError, PoleError
from .estimators import ESTIMATED_KINDS, EstimatorKind
from .harness import run_sweep
from .lemma_suite import DEFAULT_SEED, run_lemma_suite, summarize
from .scenario import Pathloss, SystemConfig, build_covariance_set

CSV_COLUMNS = ("kind", "link", "M", "L", "K", "P", "C_u", "tau_s", "N_R", "N_Q", "alpha_R", "alpha_Q",
               "prelog", "gamma", "se_theory", "se_sim", "sim_stderr", "n_trials", "status")
LEMMA_COLUMNS = ("lemma", "identity", "n_checks", "max_sigma", "n_confirmations", "status")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# section -> key -> (type, default); SystemConfig fields are split over scenario and budget
_SCHEMA = {
    "scenario": {
        "L": (int, 7), "K": (int, 10), "M": (int, 100), "mu": (float, 1.0), "lam": (float, 10.0),
        "inter_bs_distance": (float, 300.0), "user_radius": (float, 120.0),
        "angular_spread_deg": (float, 20.0), "user_azimuth_offset_deg": (float, 0.0),
        "quadrature_points": (int, 200), "pathloss_offset_db": (float, 71.89),
        "pathloss_slope_db": (float, -37.6), "target_cell": (int, 0), "user": (int, 0),
    },
    "budget": {
        "P": (int, 10), "C_u": (int, 100), "C_d": (int, 100), "tau_s": (int, 25000),
        "nr_grid": (list, [125, 250, 500, 1000, 2000, 4000, 8000]), "nq_grid": (list, [125, 4000]),
        "nq_search": (list, None),
    },
    "regularization": {
        "alpha_R": (float, 0.95), "alpha_Q": (float, 0.95), "R_b": (float, 1.0), "P_b": (float, 1.0),
    },
    "run": {
        "seed": (int, DEFAULT_SEED), "trials": (int, 500),
        "kinds": (list, [k.value for k in ESTIMATED_KINDS]), "link": (str, "both"),
        "model": (str, "exact"), "lemma_sizes": (list, [2, 4, 8]), "lemma_instances": (int, 20),
        "lemma_samples": (int, 100_000),
    },
}


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig
    reg: Regularization
    nr_grid: tuple
    nq_grid: tuple
    kinds: tuple
    links: tuple
    trials: int
    seed: int
    model: str
    target_cell: int
    user: int
    nq_search: tuple | None
    lemma_sizes: tuple
    lemma_instances: int
    lemma_samples: int
    raw: dict = field(default_factory=dict, compare=False)


def _coerce(section: str, key: str, value, from_text: bool):
    typ = _SCHEMA[section][key][0]
    try:
        if typ is list:
            if from_text:
                value = [v.strip() for v in str(value).split(",") if v.strip()]
            if not isinstance(value, list):
                raise TypeError
            if key in ("kinds",):
                return [str(v) for v in value]
            return [int(v) for v in value]
        if typ is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if typ is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: cannot interpret {value!r} as {typ.__name__}") from None


def _resolve_key(key: str) -> tuple[str, str]:
    if "." in key:
        sec, k = key.split(".", 1)
        if sec not in _SCHEMA or k not in _SCHEMA[sec]:
            raise ConfigError(f"unknown key {key!r}")
        return sec, k
    hits = [sec for sec in _SCHEMA if key in _SCHEMA[sec]]
    if not hits:
        raise ConfigError(f"unknown key {key!r}")
    return hits[0], key


def load_config(path: str | Path | None, overrides=()) -> RunConfig:
    """Read and validate a configuration file.

    Args:
        path: TOML file, or None for the reference defaults.
        overrides: iterable of ``"key=value"`` strings.

    Returns:
        RunConfig.

    Raises:
        ConfigError: missing file, parse error, unknown key, bad value or a
            violated invariant; the message names the offending key.
    """
    data = {sec: {k: v[1] for k, v in keys.items()} for sec, keys in _SCHEMA.items()}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        for sec, body in raw.items():
            if sec not in _SCHEMA:
                raise ConfigError(f"unknown section [{sec}]")
            if not isinstance(body, dict):
                raise ConfigError(f"[{sec}] must be a table")
            for k, v in body.items():
                if k not in _SCHEMA[sec]:
                    raise ConfigError(f"unknown key {sec}.{k}")
                data[sec][k] = _coerce(sec, k, v, False)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, value = item.split("=", 1)
        sec, k = _resolve_key(key.strip())
        data[sec][k] = _coerce(sec, k, value.strip(), True)
    return _build(data)


def _build(data: dict) -> RunConfig:
    sc, bu, rg, rn = data["scenario"], data["budget"], data["regularization"], data["run"]
    system = SystemConfig(
        L=sc["L"], K=sc["K"], M=sc["M"], P=bu["P"], C_u=bu["C_u"], C_d=bu["C_d"], tau_s=bu["tau_s"],
        mu=sc["mu"], lam=sc["lam"], inter_bs_distance=sc["inter_bs_distance"],
        user_radius=sc["user_radius"], angular_spread_deg=sc["angular_spread_deg"],
        pathloss=Pathloss(sc["pathloss_offset_db"], sc["pathloss_slope_db"]),
        user_azimuth_offset_deg=sc["user_azimuth_offset_deg"],
        quadrature_points=sc["quadrature_points"])
    if not 0 <= sc["target_cell"] < system.L:
        raise ConfigError(f"scenario.target_cell must lie in [0, {system.L})")
    if not 0 <= sc["user"] < system.K:
        raise ConfigError(f"scenario.user must lie in [0, {system.K})")
    for key in ("alpha_R", "alpha_Q"):
        if not 0.0 <= rg[key] <= 1.0:
            raise ConfigError(f"regularization.{key} must lie in [0, 1]")
    for key in ("R_b", "P_b"):
        if not rg[key] > 0:
            raise ConfigError(f"regularization.{key} must be positive")
    M = system.M
    reg = Regularization(rg["alpha_R"], rg["alpha_Q"], rg["R_b"] * np.eye(M), np.full(M, rg["P_b"]))
    for v in bu["nr_grid"]:
        if not 1 <= v <= system.tau_s:
            raise ConfigError(f"budget.nr_grid entry {v} outside [1, tau_s]")
    for v in bu["nq_grid"]:
        if not 1 <= v <= system.tau_s:
            raise ConfigError(f"budget.nq_grid entry {v} outside [1, tau_s]")
    nq_search = bu["nq_search"]
    if nq_search is not None and len(nq_search) != 2:
        raise ConfigError("budget.nq_search must be [lo, hi]")
    try:
        kinds = tuple(EstimatorKind(k).value for k in rn["kinds"])
    except ValueError:
        raise ConfigError(f"run.kinds: unknown kind in {rn['kinds']!r}") from None
    links = {"both": ("ul", "dl"), "ul": ("ul",), "dl": ("dl",)}.get(rn["link"])
    if links is None:
        raise ConfigError("run.link must be ul, dl or both")
    if rn["model"] not in ("exact", "nominal"):
        raise ConfigError("run.model must be exact or nominal")
    if rn["trials"] < 2:
        raise ConfigError("run.trials must be at least 2")
    if not 0 <= rn["seed"] < 2 ** 64:
        raise ConfigError("run.seed must be an unsigned 64-bit integer")
    for v in rn["lemma_sizes"]:
        if v < 1:
            raise ConfigError("run.lemma_sizes entries must be positive")
    return RunConfig(system, reg, tuple(bu["nr_grid"]), tuple(bu["nq_grid"]), kinds, links, rn["trials"],
                     rn["seed"], rn["model"], sc["target_cell"], sc["user"],
                     tuple(nq_search) if nq_search else None, tuple(rn["lemma_sizes"]),
                     rn["lemma_instances"], rn["lemma_samples"], data)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows) -> None:
    out = sys.stdout if path in (None, "-") else open(path, "w", newline="")
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    finally:
        if out is not sys.stdout:
            out.close()


def _base_row(cfg: RunConfig) -> dict:
    s = cfg.system
    return {"M": s.M, "L": s.L, "K": s.K, "P": s.P, "C_u": s.C_u, "tau_s": s.tau_s,
            "alpha_R": cfg.reg.alpha_R, "alpha_Q": cfg.reg.alpha_Q}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_theory(cfg: RunConfig, cov) -> list[dict]:
    rows = []
    s = cfg.system
    for N_Q in cfg.nq_grid:
        for kind in cfg.kinds:
            for N_R in cfg.nr_grid:
                budget = PilotBudget(s.P, s.C_u, s.tau_s, N_R, N_Q)
                base = {**_base_row(cfg), "kind": kind, "N_R": N_R, "N_Q": N_Q}
                try:
                    rep = se_report(cov, cfg.user, kind, budget, cfg.reg, s.lam, cfg.model)
                except (PoleError, InvalidRegimeError, BudgetExhaustedError) as exc:
                    for link in cfg.links:
                        rows.append({**base, "link": link, "status": type(exc).__name__})
                    continue
                for link in cfg.links:
                    g, se = (rep.gamma_ul, rep.se_ul) if link == "ul" else (rep.gamma_dl, rep.se_dl)
                    rows.append({**base, "link": link, "prelog": rep.prelog, "gamma": g, "se_theory": se,
                                 "status": "ok"})
    return rows


def cmd_simulate(cfg: RunConfig, cov) -> list[dict]:
    s = cfg.system
    sweep = run_sweep(cov, cfg.nr_grid, cfg.nq_grid, cfg.kinds, cfg.trials, cfg.seed, reg=cfg.reg,
                      C_u=s.C_u, tau_s=s.tau_s, lam=s.lam, links=cfg.links, u=cfg.user, model=cfg.model)
    rows = []
    for c in sweep.cells:
        rows.append({**_base_row(cfg), "kind": c.kind, "link": c.link, "N_R": c.N_R, "N_Q": c.N_Q,
                     "prelog": c.prelog, "gamma": c.gamma, "se_theory": c.se_theory, "se_sim": c.se_sim,
                     "sim_stderr": c.sim_stderr, "n_trials": c.n_trials, "status": c.status})
    return rows


def cmd_threshold(cfg: RunConfig, cov) -> list[dict]:
    s = cfg.system
    rows = []
    for link in cfg.links:
        for N_Q in cfg.nq_grid:
            base = {**_base_row(cfg), "kind": "nr-threshold", "link": link, "N_Q": N_Q}
            try:
                res = nr_threshold(cov, cfg.user, N_Q, cfg.reg, link, s.lam, cfg.model)
            except PoleError as exc:
                rows.append({**base, "status": type(exc).__name__})
                continue
            rows.append({**base, "N_R": res.N_bar, "status": "none" if res.is_none else "ok"})
        try:
            nq = nq_threshold(cov, cfg.user, cfg.reg, link, s.lam, cfg.nq_search, cfg.model)
            rows.append({**_base_row(cfg), "kind": "nq-threshold", "link": link, "N_Q": nq,
                         "status": "none" if nq is None else "ok"})
        except ValueError as exc:
            raise ConfigError(f"budget.nq_search: {exc}") from None
    return rows


def cmd_lemmas(cfg: RunConfig) -> tuple[list[dict], bool]:
    checks = run_lemma_suite(cfg.lemma_sizes, cfg.lemma_instances, cfg.lemma_samples, cfg.seed)
    rows, ok = [], True
    for sm in summarize(checks):
        ok &= sm.passed
        rows.append({"lemma": sm.lemma, "identity": sm.identity, "n_checks": sm.n_checks,
                     "max_sigma": sm.max_sigma, "n_confirmations": sm.n_confirmations,
                     "status": "pass" if sm.passed else "fail"})
    return rows, ok


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covse", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("theory", "closed-form SE over the (N_R, N_Q) grid"),
                        ("simulate", "closed-form and Monte Carlo SE over the grid"),
                        ("threshold", "N_R threshold per N_Q and the N_Q threshold per link"),
                        ("lemmas-check", "moment identities against Monte Carlo")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="TOML configuration file")
        p.add_argument("--out", default="-", help="output CSV path (default stdout)")
        p.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration key (repeatable)")
        p.add_argument("--trials", type=int, help="Monte Carlo trials per grid cell")
        p.add_argument("--nr-grid", help="comma-separated N_R values")
        p.add_argument("--nq-grid", help="comma-separated N_Q values")
        p.add_argument("--kinds", help="comma-separated estimator kinds")
        p.add_argument("--link", choices=("ul", "dl", "both"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    for flag, key in ((args.seed, "run.seed"), (args.trials, "run.trials"), (args.nr_grid, "budget.nr_grid"),
                      (args.nq_grid, "budget.nq_grid"), (args.kinds, "run.kinds"), (args.link, "run.link")):
        if flag is not None:
            overrides.append(f"{key}={flag}")
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "lemmas-check":
            rows, ok = cmd_lemmas(cfg)
            write_csv(args.out, LEMMA_COLUMNS, rows)
            return EXIT_OK if ok else EXIT_NUMERIC
        cov = build_covariance_set(cfg.system, cfg.target_cell)
        handler = {"theory": cmd_theory, "simulate": cmd_simulate, "threshold": cmd_threshold}[args.command]
        rows = handler(cfg, cov)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CovseError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    write_csv(args.out, CSV_COLUMNS, rows)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

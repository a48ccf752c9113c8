"""Config-driven command line front end.

Experiments are described by a small INI-style file (bracketed sections,
key = value lines, # comments). Every command reads one config, runs the
corresponding pipeline, writes a CSV into the output directory and prints a
short report. Exit codes separate claim outcomes from operational errors:
0 for holds / pure computation, 2 for violated, 3 for inconclusive, 1 for
any error. Reruns of the same config are byte-identical, whatever
--threads says; the seed, path count, step and version ride along in every
CSV row.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from ._version import __version__
from .bounds import (GapPair, bound_H_T, bound_Phi_p, bound_entropy_prop21,
                     bound_entropy_with_tail)
from .coefficients import (AssumptionConstants, AuditBox, CoefficientSet,
                           audit_assumptions, builtin_system)
from .coupling import (GammaSchedule, gamma, simulate_coupled_P,
                       simulate_coupled_Q)
from .estimators import (MCEstimate, VerdictReport, estimate_entropy_Q,
                         estimate_martingale_mean, check_log_harnack,
                         check_power_harnack, make_verdict,
                         sample_stationary_segments, test_function)
from .integrator import simulate_path
from .segment_paths import GridSpec, SegmentPath, constant_segment

VERSION_TAG = f"harnack-lab-v{__version__}"

COMMANDS = ("audit", "simulate", "couple", "bounds", "entropy",
            "log-harnack", "power-harnack", "stationary")

_CATALOG_PARAMS = {
    "linear_additive": {"a", "c", "s0"},
    "sine_multiplicative": {"a", "c", "s0"},
    "ou_nodelay": {"a", "s0"},
    "constants": {"k1", "k2", "k3", "k4"},
}

_F_NAMES = ("quad_cap", "exp_cap")

VERDICT_HEADER = ["claim", "lhs", "lhs_se", "rhs", "rhs_se", "bound",
                  "margin_se", "verdict", "n", "seed", "h", "failures",
                  "version"]


class ConfigError(ValueError):
    """Carries every violation found in a config, not just the first."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid config:\n  " + "\n  ".join(self.violations))


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment, fully specified. Defaults give the scalar linear
    system on [0,2] with a unit delay window at step h = 1/400."""

    d: int = 1
    r0: float = 1.0
    T: float = 2.0
    m: int = 400
    t0: Optional[float] = None
    xi: str = "const:1.0"
    eta: str = "const:0.0"
    system_name: str = "linear_additive"
    system_params: Dict[str, float] = field(
        default_factory=lambda: {"a": -1.0, "c": 0.5, "s0": 1.0})
    theta: float = 1.0
    p: Optional[float] = None
    s_choice: Optional[float] = None
    delta_merge: float = 1e-8
    measure: str = "Q"
    n: int = 10000
    seed: int = 0
    k_tol: float = 3.0
    k_viol: float = 6.0
    burn_in: float = 10.0
    f_name: str = "quad_cap"
    cap: float = 100.0
    out_dir: str = "out"
    verbosity: int = 1

    @property
    def h(self) -> float:
        return self.r0 / self.m


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a config, collecting all violations before
    raising. Unknown sections and keys are errors, not warnings."""
    violations: List[str] = []
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",),
                                   interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"unparseable config: {exc}"]) from exc

    known = {
        "problem": {"d", "r0", "t", "m", "t0", "xi", "eta"},
        "system": None,  # free-form params plus name
        "coupling": {"theta", "p", "s_choice", "delta_merge", "measure"},
        "mc": {"n", "seed", "k_tol", "k_viol", "burn_in"},
        "functions": {"f", "cap"},
        "output": {"dir", "verbosity"},
    }
    for sec in cp.sections():
        if sec not in known:
            violations.append(f"unknown section [{sec}]")
        elif known[sec] is not None:
            for key in cp[sec]:
                if key not in known[sec]:
                    violations.append(f"unknown key '{key}' in [{sec}]")

    def get(sec, key, conv, default):
        if sec not in cp or key not in cp[sec]:
            return default
        raw = cp[sec][key].strip()
        try:
            return conv(raw)
        except (TypeError, ValueError):
            violations.append(f"[{sec}] {key}: cannot parse {raw!r}")
            return default

    def opt_float(sec, key):
        if sec in cp and key in cp[sec]:
            return get(sec, key, float, None)
        return None

    d = get("problem", "d", int, 1)
    r0 = get("problem", "r0", float, 1.0)
    t_horizon = get("problem", "t", float, 2.0)
    m = get("problem", "m", int, 400)
    t0 = opt_float("problem", "t0")
    xi = get("problem", "xi", str, "const:1.0")
    eta = get("problem", "eta", str, "const:0.0")

    name = get("system", "name", str, "linear_additive")
    params: Dict[str, float] = {}
    if "system" in cp:
        for key in cp["system"]:
            if key == "name":
                continue
            params[key] = get("system", key, float, math.nan)
    if not params and name == "linear_additive":
        params = {"a": -1.0, "c": 0.5, "s0": 1.0}

    theta = get("coupling", "theta", float, 1.0)
    p = opt_float("coupling", "p")
    s_choice = opt_float("coupling", "s_choice")
    delta_merge = get("coupling", "delta_merge", float, 1e-8)
    measure = get("coupling", "measure", str, "Q")

    n = get("mc", "n", int, 10000)
    seed = get("mc", "seed", int, 0)
    k_tol = get("mc", "k_tol", float, 3.0)
    k_viol = get("mc", "k_viol", float, 6.0)
    burn_in = get("mc", "burn_in", float, 10.0)

    f_name = get("functions", "f", str, "quad_cap")
    cap = get("functions", "cap", float, 100.0)

    out_dir = get("output", "dir", str, "out")
    verbosity = get("output", "verbosity", int, 1)

    # semantic checks; keep collecting rather than bailing early
    if d < 1:
        violations.append("[problem] d must be >= 1")
    if r0 <= 0:
        violations.append("[problem] r0 must be positive")
    if m < 1:
        violations.append("[problem] m must be >= 1")
    if t_horizon <= 0:
        violations.append("[problem] t must be positive")
    if r0 > 0 and m >= 1 and t_horizon > 0:
        h = r0 / m
        n_t = round(t_horizon / h)
        if n_t < 1 or abs(n_t * h - t_horizon) > 1e-12 * max(t_horizon, 1.0):
            violations.append(
                f"[problem] t={t_horizon!r} is not a positive multiple of h=r0/m={h!r}")
        if t0 is not None:
            if t0 <= 0:
                violations.append("[problem] t0 must be positive")
            elif abs(round(t0 / h) * h - t0) > 1e-12 * max(t0, 1.0):
                violations.append(f"[problem] t0={t0!r} is not on the grid (h={h!r})")
            elif t0 > t_horizon - r0 + 1e-12 * max(t_horizon, 1.0):
                violations.append("[problem] coupling runs need t0 <= t - r0")
    for label, spec in (("xi", xi), ("eta", eta)):
        if spec == "zero" or spec.startswith("file:"):
            continue
        if spec.startswith("const:"):
            try:
                float(spec[6:])
                continue
            except ValueError:
                pass
        violations.append(
            f"[problem] {label}={spec!r}: expected 'zero', 'const:<value>' or 'file:<path>'")

    if name not in _CATALOG_PARAMS:
        violations.append(f"[system] unknown system {name!r}; "
                          f"catalog: {sorted(_CATALOG_PARAMS)}")
    else:
        want = _CATALOG_PARAMS[name]
        missing = sorted(want - params.keys())
        extra = sorted(params.keys() - want)
        if missing:
            violations.append(f"[system] {name} is missing parameters {missing}")
        if extra:
            violations.append(f"[system] {name} got unknown parameters {extra}")

    if not (0.0 < theta < 2.0):
        violations.append("[coupling] theta must lie in (0, 2)")
    if p is not None and p <= 1.0:
        violations.append("[coupling] p must exceed 1")
    if s_choice is not None and s_choice <= 0.0:
        violations.append("[coupling] s_choice must be positive")
    if not math.isfinite(delta_merge):
        violations.append("[coupling] delta_merge must be finite")
    if measure not in ("Q", "P"):
        violations.append("[coupling] measure must be Q or P")
    if n < 1:
        violations.append("[mc] n must be >= 1")
    if not (0 <= seed < 2 ** 63):
        violations.append("[mc] seed must lie in [0, 2**63)")
    if k_tol <= 0 or k_viol < k_tol:
        violations.append("[mc] need 0 < k_tol <= k_viol")
    if burn_in < 0:
        violations.append("[mc] burn_in must be nonnegative")
    if f_name not in _F_NAMES:
        violations.append(f"[functions] f must be one of {_F_NAMES}")
    if cap <= 0:
        violations.append("[functions] cap must be positive")
    if verbosity not in (0, 1, 2):
        violations.append("[output] verbosity must be 0, 1 or 2")

    if violations:
        raise ConfigError(violations)
    return ExperimentConfig(
        d=d, r0=r0, T=t_horizon, m=m, t0=t0, xi=xi, eta=eta,
        system_name=name, system_params=params, theta=theta, p=p,
        s_choice=s_choice, delta_merge=delta_merge, measure=measure,
        n=n, seed=seed, k_tol=k_tol, k_viol=k_viol, burn_in=burn_in,
        f_name=f_name, cap=cap, out_dir=out_dir, verbosity=verbosity)


def render_config(cfg: ExperimentConfig) -> str:
    """Serialize a config so that parse_config round-trips it exactly."""
    lines = ["[problem]",
             f"d = {cfg.d}", f"r0 = {cfg.r0!r}", f"t = {cfg.T!r}",
             f"m = {cfg.m}"]
    if cfg.t0 is not None:
        lines.append(f"t0 = {cfg.t0!r}")
    lines += [f"xi = {cfg.xi}", f"eta = {cfg.eta}", "",
              "[system]", f"name = {cfg.system_name}"]
    for key in sorted(cfg.system_params):
        lines.append(f"{key} = {cfg.system_params[key]!r}")
    lines += ["", "[coupling]", f"theta = {cfg.theta!r}"]
    if cfg.p is not None:
        lines.append(f"p = {cfg.p!r}")
    if cfg.s_choice is not None:
        lines.append(f"s_choice = {cfg.s_choice!r}")
    lines += [f"delta_merge = {cfg.delta_merge!r}", f"measure = {cfg.measure}",
              "", "[mc]", f"n = {cfg.n}", f"seed = {cfg.seed}",
              f"k_tol = {cfg.k_tol!r}", f"k_viol = {cfg.k_viol!r}",
              f"burn_in = {cfg.burn_in!r}",
              "", "[functions]", f"f = {cfg.f_name}", f"cap = {cfg.cap!r}",
              "", "[output]", f"dir = {cfg.out_dir}",
              f"verbosity = {cfg.verbosity}", ""]
    return "\n".join(lines)


def config_grid(cfg: ExperimentConfig) -> GridSpec:
    return GridSpec(r0=cfg.r0, T=cfg.T, m=cfg.m)


def config_coeffs(cfg: ExperimentConfig) -> CoefficientSet:
    if cfg.system_name == "constants":
        raise ValueError("the 'constants' pseudo-system carries no dynamics; "
                         "it only feeds the bound calculators")
    return builtin_system(cfg.system_name, dict(cfg.system_params), dim=cfg.d)


def config_constants(cfg: ExperimentConfig) -> AssumptionConstants:
    if cfg.system_name == "constants":
        p = cfg.system_params
        return AssumptionConstants(k1=p["k1"], k2=p["k2"], k3=p["k3"], k4=p["k4"])
    return config_coeffs(cfg).constants


def config_segment(cfg: ExperimentConfig, spec: str) -> SegmentPath:
    if spec == "zero":
        return constant_segment(np.zeros(cfg.d), cfg.r0, cfg.m)
    if spec.startswith("const:"):
        return constant_segment(np.full(cfg.d, float(spec[6:])), cfg.r0, cfg.m)
    if spec.startswith("file:"):
        arr = np.loadtxt(spec[5:])
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape != (cfg.m + 1, cfg.d):
            raise ValueError(f"segment file must hold {cfg.m + 1} rows x {cfg.d} cols")
        return SegmentPath(cfg.r0, arr)
    raise ValueError(f"bad segment spec {spec!r}")


def validate_for_command(cfg: ExperimentConfig, command: str) -> None:
    problems = []
    if command in ("couple", "entropy") and cfg.t0 is None:
        problems.append(f"{command} needs [problem] t0")
    if command in ("log-harnack", "power-harnack", "bounds") and cfg.T <= cfg.r0:
        problems.append(
            "the inequality only makes sense past the delay window: need t > r0")
    if command == "power-harnack" and cfg.p is None:
        problems.append("power-harnack needs [coupling] p")
    if command == "log-harnack" and cfg.s_choice is not None \
            and cfg.s_choice > cfg.T - cfg.r0:
        problems.append("s_choice must be <= t - r0")
    if problems:
        raise ConfigError(problems)


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: str, header: List[str], rows: List[list]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _verdict_row(rep: VerdictReport, n: int, seed: int, h: float) -> list:
    failures = rep.lhs.failures + rep.rhs.failures
    return [rep.claim, rep.lhs.mean, rep.lhs.std_error, rep.rhs.mean,
            rep.rhs.std_error, rep.bound, rep.margin_se, rep.verdict,
            n, seed, h, failures, VERSION_TAG]


def _exit_from_verdicts(reports: List[VerdictReport]) -> int:
    verdicts = [r.verdict for r in reports]
    if any(v == "violated" for v in verdicts):
        return 2
    if any(v == "inconclusive" for v in verdicts):
        return 3
    return 0


def _say(cfg: ExperimentConfig, msg: str) -> None:
    if cfg.verbosity >= 1:
        print(msg)


def _report_verdicts(cfg, reports):
    for r in reports:
        _say(cfg, f"{r.claim}: lhs={r.lhs.mean:.6g} (se {r.lhs.std_error:.2g})  "
                  f"rhs={r.rhs.mean:.6g} (se {r.rhs.std_error:.2g})  "
                  f"margin={r.margin_se:.3g} se  verdict={r.verdict}")
        if cfg.verbosity >= 2 and r.meta:
            _say(cfg, f"  meta: {r.meta}")


def _out_path(cfg: ExperimentConfig, command: str) -> str:
    return os.path.join(cfg.out_dir, command.replace("-", "_") + ".csv")


def _cmd_audit(cfg: ExperimentConfig, threads) -> int:
    coeffs = config_coeffs(cfg)
    box = AuditBox(t_min=0.0, t_max=cfg.T, r0=cfg.r0)
    report = audit_assumptions(coeffs, box=box, n=cfg.n, seed=cfg.seed)
    rows = []
    for cond, c in sorted(report.conditions.items()):
        rows.append([cond, c.empirical_max, c.declared, c.passed, c.worst_t,
                     ";".join(_fmt(x) for x in np.atleast_1d(c.worst_point)),
                     cfg.n, cfg.seed, cfg.h, VERSION_TAG])
        _say(cfg, f"{cond}: empirical {c.empirical_max:.6g} vs declared "
                  f"{c.declared:.6g} -> {'pass' if c.passed else 'FAIL'}")
    _write_csv(_out_path(cfg, "audit"),
               ["condition", "empirical_max", "declared", "passed", "worst_t",
                "worst_point", "n", "seed", "h", "version"], rows)
    return 0 if report.all_passed else 2


def _cmd_simulate(cfg: ExperimentConfig, threads) -> int:
    coeffs = config_coeffs(cfg)
    grid = config_grid(cfg)
    xi = config_segment(cfg, cfg.xi)
    traj = simulate_path(coeffs, xi, grid, cfg.seed)
    rows = []
    for k in range(grid.n_T + 1):
        x = traj.values[grid.m + k]
        rows.append([k, k * grid.h, *x, cfg.seed, 1, cfg.h, VERSION_TAG])
    _write_csv(_out_path(cfg, "simulate"),
               ["step", "t", *[f"x{i}" for i in range(cfg.d)],
                "seed", "n", "h", "version"], rows)
    _say(cfg, f"simulated one path to t={grid.T:g}; endpoint {traj.endpoint()}")
    return 0


def _couple_dump(cfg, grid, sched, traj) -> None:
    d = cfg.d
    rows = []
    for k in range(grid.n_T + 1):
        t = k * grid.h
        x = traj.x_values[grid.m + k]
        y = traj.y_values[grid.m + k]
        gap = float(np.linalg.norm(x - y))
        g = gamma(t, sched) if t < sched.t0 else ""
        if k < grid.n_T:
            phi_sq = (traj.phi_sq_cum[k + 1] - traj.phi_sq_cum[k]) / grid.h
        else:
            phi_sq = ""
        rows.append([k, t, *x, *y, gap, g, phi_sq, traj.log_weight_cum[k],
                     cfg.seed, 1, cfg.h, VERSION_TAG])
    _write_csv(_out_path(cfg, "couple"),
               ["step", "t", *[f"x{i}" for i in range(d)],
                *[f"y{i}" for i in range(d)], "gap", "gamma", "phi_sq",
                "log_weight", "seed", "n", "h", "version"], rows)


def _cmd_couple(cfg: ExperimentConfig, threads) -> int:
    coeffs = config_coeffs(cfg)
    grid = config_grid(cfg)
    xi = config_segment(cfg, cfg.xi)
    eta = config_segment(cfg, cfg.eta)
    sched = GammaSchedule(theta=cfg.theta, k4=coeffs.constants.k4, t0=cfg.t0)

    if cfg.n == 1:
        run = simulate_coupled_P if cfg.measure == "P" else simulate_coupled_Q
        traj = run(coeffs, xi, eta, grid, cfg.t0, theta=cfg.theta,
                   seed=cfg.seed, delta_merge=cfg.delta_merge)
        _couple_dump(cfg, grid, sched, traj)
        _say(cfg, f"coupled pair dumped; merged={traj.merged}, "
                  f"log R_T={traj.log_weight_cum[-1]:.6g}")
        return 0

    reports = []
    if cfg.measure == "P":
        est = estimate_martingale_mean(coeffs, xi, eta, sched, grid, cfg.n,
                                       cfg.seed, cfg.delta_merge, threads)
        frac_fail = est.failures / cfg.n
        reports.append(make_verdict(
            "girsanov_weight_mean", est,
            MCEstimate(mean=1.0, std_error=0.0, n=0, seed=cfg.seed),
            bound=1.0, k_tol=cfg.k_tol, k_viol=cfg.k_viol,
            failure_fraction=frac_fail, two_sided=True))
    else:
        est = estimate_entropy_Q(coeffs, xi, eta, sched, grid, cfg.n, cfg.seed,
                                 delta_merge=cfg.delta_merge, threads=threads)
        frac_fail = est.failures / cfg.n

    unmerged = est.failures / cfg.n
    se = math.sqrt(max(unmerged * (1.0 - unmerged), 0.0) / cfg.n)
    lhs = MCEstimate(mean=unmerged, std_error=se, n=cfg.n, seed=cfg.seed,
                     diagnostics={"failures": est.failures})
    rhs = MCEstimate(mean=1e-3, std_error=0.0, n=0, seed=cfg.seed)
    reports.append(make_verdict("coupling_unmerged_fraction", lhs, rhs,
                                bound=1e-3, k_tol=cfg.k_tol, k_viol=cfg.k_viol))

    rows = [_verdict_row(r, cfg.n, cfg.seed, cfg.h) for r in reports]
    if cfg.measure == "Q":
        rows.append(["entropy_half_phi_sq", est.mean, est.std_error, "", "",
                     "", "", "info", cfg.n, cfg.seed, cfg.h, est.failures,
                     VERSION_TAG])
        _say(cfg, f"half mean int |phi|^2 = {est.mean:.6g} (se {est.std_error:.2g})")
    _report_verdicts(cfg, reports)
    _write_csv(_out_path(cfg, "couple"), VERDICT_HEADER, rows)
    return _exit_from_verdicts(reports)


def _cmd_entropy(cfg: ExperimentConfig, threads) -> int:
    coeffs = config_coeffs(cfg)
    grid = config_grid(cfg)
    xi = config_segment(cfg, cfg.xi)
    eta = config_segment(cfg, cfg.eta)
    sched = GammaSchedule(theta=cfg.theta, k4=coeffs.constants.k4, t0=cfg.t0)
    est = estimate_entropy_Q(coeffs, xi, eta, sched, grid, cfg.n, cfg.seed,
                             delta_merge=cfg.delta_merge, threads=threads)
    gaps = GapPair.from_segments(xi, eta)
    bound = bound_entropy_with_tail(coeffs.constants, cfg.t0, cfg.r0, gaps,
                                    theta=cfg.theta)
    rep = make_verdict(
        "entropy_vs_bound", est,
        MCEstimate(mean=bound, std_error=0.0, n=0, seed=cfg.seed),
        bound=bound, k_tol=cfg.k_tol, k_viol=cfg.k_viol,
        failure_fraction=est.failures / cfg.n)
    _report_verdicts(cfg, [rep])
    _write_csv(_out_path(cfg, "entropy"), VERDICT_HEADER,
               [_verdict_row(rep, cfg.n, cfg.seed, cfg.h)])
    return _exit_from_verdicts([rep])


def _cmd_bounds(cfg: ExperimentConfig, threads) -> int:
    consts = config_constants(cfg)
    xi = config_segment(cfg, cfg.xi)
    eta = config_segment(cfg, cfg.eta)
    gaps = GapPair.from_segments(xi, eta)
    header = ["claim", "value", "s_star", "eps_star", "gap_term",
              "segment_term", "eps_term", "quadratic_term", "at_boundary",
              "n", "seed", "h", "version"]
    rows = []

    rep = bound_H_T(consts, gaps, cfg.T, cfg.r0)
    rows.append(["log_harnack_H_T", rep.value, rep.s_star, "",
                 rep.terms["gap_term"], rep.terms["segment_term"], "", "",
                 rep.at_boundary, cfg.n, cfg.seed, cfg.h, VERSION_TAG])
    _say(cfg, f"log-Harnack additive constant: {rep.value:.6g} "
              f"at s = {rep.s_star:.6g}"
              + (" (boundary)" if rep.at_boundary else ""))
    _say(cfg, f"  gap term {rep.terms['gap_term']:.6g}, "
              f"segment term {rep.terms['segment_term']:.6g}")

    if cfg.t0 is not None:
        v1 = bound_entropy_prop21(consts, cfg.theta, cfg.t0, gaps, t0=cfg.t0)
        v2 = bound_entropy_with_tail(consts, cfg.t0, cfg.r0, gaps, cfg.theta)
        rows.append(["entropy_deadline_bound", v1, "", "", "", "", "", "",
                     "", cfg.n, cfg.seed, cfg.h, VERSION_TAG])
        rows.append(["entropy_full_bound", v2, "", "", "", "", "", "",
                     "", cfg.n, cfg.seed, cfg.h, VERSION_TAG])
        _say(cfg, f"entropy bound to the deadline: {v1:.6g}; "
                  f"with history tail: {v2:.6g}")

    if cfg.p is not None:
        prep = bound_Phi_p(cfg.p, cfg.T, consts, gaps, cfg.r0)
        rows.append(["power_harnack_Phi_p", prep.value, prep.s_star,
                     prep.eps_star, prep.terms["gap_term"],
                     prep.terms["segment_term"], prep.terms["eps_term"],
                     prep.terms["quadratic_term"], prep.at_boundary,
                     cfg.n, cfg.seed, cfg.h, VERSION_TAG])
        _say(cfg, f"power-Harnack exponent at p={cfg.p:g}: {prep.value:.6g} "
                  f"at (eps, s) = ({prep.eps_star:.4g}, {prep.s_star:.4g})")

    _write_csv(_out_path(cfg, "bounds"), header, rows)
    return 0


def _cmd_log_harnack(cfg: ExperimentConfig, threads) -> int:
    coeffs = config_coeffs(cfg)
    grid = config_grid(cfg)
    xi = config_segment(cfg, cfg.xi)
    eta = config_segment(cfg, cfg.eta)
    f = test_function(cfg.f_name, cfg.cap)
    rep = check_log_harnack(coeffs, xi, eta, f, cfg.T, grid, cfg.n, cfg.seed,
                            s_choice=cfg.s_choice, k_tol=cfg.k_tol,
                            k_viol=cfg.k_viol, threads=threads)
    _report_verdicts(cfg, [rep])
    _write_csv(_out_path(cfg, "log-harnack"), VERDICT_HEADER,
               [_verdict_row(rep, cfg.n, cfg.seed, cfg.h)])
    return _exit_from_verdicts([rep])


def _cmd_power_harnack(cfg: ExperimentConfig, threads) -> int:
    coeffs = config_coeffs(cfg)
    grid = config_grid(cfg)
    xi = config_segment(cfg, cfg.xi)
    eta = config_segment(cfg, cfg.eta)
    f = test_function(cfg.f_name, cfg.cap)
    rep = check_power_harnack(coeffs, xi, eta, f, cfg.p, cfg.T, grid, cfg.n,
                              cfg.seed, k_tol=cfg.k_tol, k_viol=cfg.k_viol,
                              threads=threads)
    _report_verdicts(cfg, [rep])
    _write_csv(_out_path(cfg, "power-harnack"), VERDICT_HEADER,
               [_verdict_row(rep, cfg.n, cfg.seed, cfg.h)])
    return _exit_from_verdicts([rep])


def _cmd_stationary(cfg: ExperimentConfig, threads) -> int:
    coeffs = config_coeffs(cfg)
    grid = config_grid(cfg)
    sample = sample_stationary_segments(coeffs, grid, cfg.n, cfg.burn_in,
                                        cfg.seed, threads)
    rows = []
    for i in range(cfg.d):
        rows.append([i, sample.endpoint_mean[i], sample.endpoint_var[i],
                     sample.lag_r0_autocov[i], cfg.n, cfg.seed, cfg.h,
                     VERSION_TAG])
    _write_csv(_out_path(cfg, "stationary"),
               ["component", "endpoint_mean", "endpoint_var",
                "lag_r0_autocov", "n", "seed", "h", "version"], rows)
    _say(cfg, f"stationary sample of {sample.n} segments: endpoint mean "
              f"{sample.endpoint_mean}, var {sample.endpoint_var}, "
              f"lag-r0 autocov {sample.lag_r0_autocov}")
    return 0


_DISPATCH = {
    "audit": _cmd_audit,
    "simulate": _cmd_simulate,
    "couple": _cmd_couple,
    "bounds": _cmd_bounds,
    "entropy": _cmd_entropy,
    "log-harnack": _cmd_log_harnack,
    "power-harnack": _cmd_power_harnack,
    "stationary": _cmd_stationary,
}


def run_command(argv) -> int:
    parser = argparse.ArgumentParser(
        prog="harnack-lab",
        description="Coupling, entropy and Harnack-type bound checks for "
                    "delay SDEs with multiplicative noise.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="experiment config file")
    parser.add_argument("--seed", type=int, help="override [mc] seed")
    parser.add_argument("--paths", type=int, help="override [mc] n")
    parser.add_argument("--out", help="override [output] dir")
    parser.add_argument("--threads", type=int,
                        help="worker threads (must not change results); "
                             "falls back to HARNACK_LAB_THREADS, then 1")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1

    try:
        with open(args.config) as fh:
            text = fh.read()
        cfg = parse_config(text)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.paths is not None:
            overrides["n"] = args.paths
        if args.out is not None:
            overrides["out_dir"] = args.out
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
        validate_for_command(cfg, args.command)
        return _DISPATCH[args.command](cfg, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OverflowError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()

"""Config-driven studies: policy sweeps, audits, learning traces and table export.

Configs are INI files read with :mod:`configparser`. Every section and key is
optional; see ``DEFAULTS`` for the full schema and README for a walkthrough.
"""
import configparser
import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple

import numpy as np

from .info_measures import epsilon_mn, error_curve
from .online import OnlineMaxGainFirst, OnlineThreshold, check_value_gap_bound
from .penalty import (JointPenalty, TruncationConfig, check_lower_bound, model_tables,
                      pair_grid, stack_tables, write_tables)
from .policies import (EMAMaxWeight, MaxAgeFirst, MaxExpectedError,
                       MaxGainFirst, RandomizedPolicy)
from .relaxed_mdp import cyclic_search, evaluate_joint_policy, joint_mdp_oracle
from .signal import default_model, stationary_variance
from .simulation import Simulator, evaluate_policy

log = logging.getLogger(__name__)

POLICY_NAMES = ("MGF", "Online-MGF", "MAF", "Random", "MEE", "EMAM")
SWEEP_AXES = ("none", "p", "M", "zeta", "r")
CSV_COLUMNS = ("sweep_axis", "sweep_value", "policy", "mean_disc_error", "ci95",
               "n_seeds", "n_episodes", "wall_ms")

DEFAULTS = {
    "model": {"num_sources": "10", "num_channels": "1", "a2": "0.9, 0.7",
              "noise_var": "1.0", "p": "0.6", "penalty_mode": "model_derived"},
    "sim": {"gamma": "0.7", "delta_bound": "50", "episode_length": "100",
            "episodes": "150", "burn_in": "100", "seeds": "20", "seed_offset": "0",
            "jobs": "1"},
    "policies": {"names": ", ".join(POLICY_NAMES)},
    "sweep": {"axis": "p", "values": "0, 0.2, 0.4, 0.6, 0.8, 1.0"},
    "audit": {"p_values": "0, 0.2, 0.4, 0.6, 0.8, 1.0", "instances": "50",
              "delta_bound": "15", "pair_delta_bound": "30", "seed": "0"},
    "beta_trace": {"zeta_values": "0.3, 0.6, 0.9", "seeds": "10", "episodes": "100",
                   "threshold": "0.05"},
    "output": {"path": "results.csv"},
}

# Per-policy keys accepted under ``[policy.<name>]`` and their parsers.
POLICY_PARAMS = {
    "MGF": {"theta": float, "lam_init": float, "tiebreak": str},
    "Online-MGF": {"eta": float, "zeta": float, "theta": float, "lam_init": float,
                   "loss_bound": str, "cumulative": bool, "monotone": bool,
                   "init": str, "tiebreak": str},
    "MAF": {"tiebreak": str},
    "Random": {"weights": str},
    "MEE": {"tiebreak": str},
    "EMAM": {"ema_rate": float, "tiebreak": str},
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def _floats(text):
    try:
        return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from exc


@dataclass
class ExperimentConfig:
    num_sources: int = 10
    num_channels: int = 1
    a2: Tuple[float, ...] = (0.9, 0.7)
    noise_var: float = 1.0
    p: float = 0.6
    penalty_mode: str = "model_derived"
    gamma: float = 0.7
    delta_bound: int = 50
    episode_length: int = 100
    episodes: int = 150
    burn_in: int = 100
    seeds: int = 20
    seed_offset: int = 0
    jobs: int = 1
    policies: Tuple[str, ...] = POLICY_NAMES
    policy_params: Dict[str, dict] = field(default_factory=dict)
    sweep_axis: str = "p"
    sweep_values: Tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    audit_p_values: Tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    audit_instances: int = 50
    audit_delta_bound: int = 15
    audit_pair_delta_bound: int = 30
    audit_seed: int = 0
    trace_zeta_values: Tuple[float, ...] = (0.3, 0.6, 0.9)
    trace_seeds: int = 10
    trace_episodes: int = 100
    trace_threshold: float = 0.05
    output: str = "results.csv"

    def validate(self):
        problems = []
        if not 0 < self.gamma < 1:
            problems.append("sim.gamma must lie in (0, 1)")
        if self.num_sources < 1:
            problems.append("model.num_sources must be >= 1")
        if not 1 <= self.num_channels < max(self.num_sources, 2):
            problems.append("model.num_channels must satisfy 1 <= N < M")
        if not 0 <= self.p <= 1:
            problems.append("model.p must lie in [0, 1]")
        if any(not 0 <= a <= 1 for a in self.a2) or not self.a2:
            problems.append("model.a2 entries must lie in [0, 1]")
        if len(self.a2) > self.num_sources:
            problems.append("model.a2 has more entries than sources")
        if self.noise_var < 0:
            problems.append("model.noise_var must be >= 0")
        if self.penalty_mode not in ("model_derived", "closed_form"):
            problems.append("model.penalty_mode must be model_derived or closed_form")
        if self.delta_bound < 2:
            problems.append("sim.delta_bound must be >= 2")
        if self.episode_length < 1 or self.episodes < 1:
            problems.append("sim.episode_length and sim.episodes must be positive")
        if not 0 <= self.burn_in < self.episodes:
            problems.append("sim.burn_in must be smaller than sim.episodes")
        if self.seeds < 1 or self.jobs == 0:
            problems.append("sim.seeds must be >= 1 and sim.jobs nonzero")
        for name in self.policies:
            if name not in POLICY_NAMES:
                problems.append(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")
        if not self.policies:
            problems.append("policies.names must not be empty")
        if self.sweep_axis not in SWEEP_AXES:
            problems.append(f"sweep.axis must be one of {', '.join(SWEEP_AXES)}")
        if self.sweep_axis != "none" and not self.sweep_values:
            problems.append("sweep.values must not be empty")
        if self.sweep_axis == "p" and any(not 0 <= v <= 1 for v in self.sweep_values):
            problems.append("p sweep values must lie in [0, 1]")
        if self.sweep_axis == "zeta" and any(not 0 < v < 1 for v in self.sweep_values):
            problems.append("zeta sweep values must lie in (0, 1)")
        if self.sweep_axis in ("M", "r") and any(v < 1 or v != int(v) for v in self.sweep_values):
            problems.append(f"{self.sweep_axis} sweep values must be positive integers")
        if not self.trace_zeta_values or any(not 0 < z < 1 for z in self.trace_zeta_values):
            problems.append("beta_trace.zeta_values must be nonempty and lie in (0, 1)")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def model(self, num_sources=None, p=None):
        M = self.num_sources if num_sources is None else int(num_sources)
        p = self.p if p is None else p
        return default_model(M, a2=self.a2, p=p, noise_var=self.noise_var)

    def seed_list(self, n=None):
        return list(range(self.seed_offset, self.seed_offset + (self.seeds if n is None else n)))


def load_config(path=None, overrides=None):
    """Parse an INI file (or only defaults when ``path`` is None) into a validated config."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    known = set(DEFAULTS) | {f"policy.{n}" for n in POLICY_NAMES}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]")
        if sec in DEFAULTS:
            extra = set(cp[sec]) - set(DEFAULTS[sec])
            if extra:
                raise ConfigError(f"unknown keys in [{sec}]: {', '.join(sorted(extra))}")
    try:
        m, s, a, b = cp["model"], cp["sim"], cp["audit"], cp["beta_trace"]
        cfg = ExperimentConfig(
            num_sources=m.getint("num_sources"), num_channels=m.getint("num_channels"),
            a2=tuple(_floats(m["a2"])), noise_var=m.getfloat("noise_var"),
            p=m.getfloat("p"), penalty_mode=m["penalty_mode"].strip(),
            gamma=s.getfloat("gamma"), delta_bound=s.getint("delta_bound"),
            episode_length=s.getint("episode_length"), episodes=s.getint("episodes"),
            burn_in=s.getint("burn_in"), seeds=s.getint("seeds"),
            seed_offset=s.getint("seed_offset"), jobs=s.getint("jobs"),
            policies=tuple(x.strip() for x in cp["policies"]["names"].split(",") if x.strip()),
            policy_params=_policy_params(cp),
            sweep_axis=cp["sweep"]["axis"].strip(),
            sweep_values=tuple(_floats(cp["sweep"]["values"])),
            audit_p_values=tuple(_floats(a["p_values"])),
            audit_instances=a.getint("instances"), audit_delta_bound=a.getint("delta_bound"),
            audit_pair_delta_bound=a.getint("pair_delta_bound"), audit_seed=a.getint("seed"),
            trace_zeta_values=tuple(_floats(b["zeta_values"])), trace_seeds=b.getint("seeds"),
            trace_episodes=b.getint("episodes"), trace_threshold=b.getfloat("threshold"),
            output=cp["output"]["path"].strip(),
        )
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config value: {exc}") from exc
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg.validate()


def _policy_params(cp):
    out = {}
    for name in POLICY_NAMES:
        sec = f"policy.{name}"
        if not cp.has_section(sec):
            continue
        spec = POLICY_PARAMS[name]
        params = {}
        for key, raw in cp[sec].items():
            if key not in spec:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            kind = spec[key]
            if kind is bool:
                params[key] = cp[sec].getboolean(key)
            elif key == "loss_bound":
                params[key] = raw.strip()
            elif key == "weights":
                params[key] = _floats(raw)
            else:
                params[key] = kind(raw.strip())
        out[name] = params
    return out


# ---------------------------------------------------------------------------
# policy construction


def _resolve_loss_bound(value, model):
    if value is None or value in ("", "none", "None"):
        return None
    if value == "auto":
        return 4.0 * max(stationary_variance(model, m) for m in range(model.num_sources))
    return float(value)


def build_policy(name, cfg, model, params=None):
    """Fitted policy ``name`` for ``model`` with config-level parameters applied."""
    params = dict(cfg.policy_params.get(name, {}) if params is None else params)
    N, gamma, B = cfg.num_channels, cfg.gamma, cfg.delta_bound
    tables = stack_tables(model_tables(model, TruncationConfig(B), cfg.penalty_mode))
    if name == "MGF":
        return MaxGainFirst(n_channels=N, gamma=gamma, **params).fit(tables)
    if name == "Online-MGF":
        params["loss_bound"] = _resolve_loss_bound(params.get("loss_bound"), model)
        return OnlineMaxGainFirst(n_channels=N, gamma=gamma, **params).fit(tables)
    if name == "MAF":
        return MaxAgeFirst(n_channels=N, **params).fit(tables)
    if name == "Random":
        return RandomizedPolicy(n_channels=N, **params).fit(tables)
    curves = np.vstack([error_curve(model, m, np.arange(1, B + 1))
                        for m in range(model.num_sources)])
    if name == "MEE":
        return MaxExpectedError(n_channels=N, **params).fit(curves)
    if name == "EMAM":
        return EMAMaxWeight(n_channels=N, **params).fit(
            curves, piggyback_prob=model.piggyback_prob)
    raise ConfigError(f"unknown policy {name!r}")


# ---------------------------------------------------------------------------
# run


@dataclass
class ResultRow:
    sweep_axis: str
    sweep_value: float
    policy: str
    mean_disc_error: float
    ci95: float
    n_seeds: int
    n_episodes: int
    wall_ms: float

    def as_list(self):
        return [self.sweep_axis, f"{self.sweep_value:g}", self.policy,
                repr(self.mean_disc_error), repr(self.ci95), self.n_seeds,
                self.n_episodes, f"{self.wall_ms:.0f}"]


def _sweep_points(cfg):
    """(sweep value, model, channels, policy overrides, scale) per point."""
    axis = cfg.sweep_axis
    values = cfg.sweep_values if axis != "none" else (float("nan"),)
    for v in values:
        if axis == "p":
            yield v, cfg.model(p=v), cfg.num_channels, {}, 1.0
        elif axis == "M":
            M = int(v)
            if cfg.num_channels >= M:
                raise ConfigError(f"M sweep value {M} leaves no contention for N={cfg.num_channels}")
            yield v, cfg.model(num_sources=M), cfg.num_channels, {}, 1.0
        elif axis == "zeta":
            yield v, cfg.model(), cfg.num_channels, {"Online-MGF": {"zeta": v}}, 1.0
        elif axis == "r":
            r = int(v)
            yield v, cfg.model(num_sources=r * cfg.num_sources), r * cfg.num_channels, {}, float(r)
        else:
            yield v, cfg.model(), cfg.num_channels, {}, 1.0


def run(cfg, out=None):
    """Evaluate every configured policy at every sweep point; returns the rows."""
    rows = []
    for value, model, N, overrides, scale in _sweep_points(cfg):
        point_cfg = replace(cfg, num_sources=model.num_sources, num_channels=N)
        names = cfg.policies if cfg.sweep_axis != "zeta" else ("Online-MGF",)
        for name in names:
            params = {**cfg.policy_params.get(name, {}), **overrides.get(name, {})}
            t0 = time.perf_counter()
            policy = build_policy(name, point_cfg, model, params)
            summ = evaluate_policy(model, policy, cfg.seed_list(), cfg.episodes,
                                   cfg.episode_length, cfg.gamma, cfg.delta_bound,
                                   cfg.burn_in, cfg.jobs)
            wall = 1e3 * (time.perf_counter() - t0)
            rows.append(ResultRow(cfg.sweep_axis, value, name, summ.mean / scale,
                                  summ.ci95 / scale, summ.n_seeds, cfg.episodes, wall))
            log.info("%s=%g %s: %.4f +/- %.4f", cfg.sweep_axis, value, name,
                     rows[-1].mean_disc_error, rows[-1].ci95)
    rows.sort(key=lambda r: (r.sweep_value if np.isfinite(r.sweep_value) else 0.0,
                             POLICY_NAMES.index(r.policy)))
    if out is not None:
        write_rows(out, rows)
    return rows


def write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(r.as_list())


# ---------------------------------------------------------------------------
# audit


@dataclass
class AuditItem:
    check: str
    case: str
    ok: bool
    detail: str


@dataclass
class AuditReport:
    items: List[AuditItem] = field(default_factory=list)

    @property
    def ok(self):
        return all(i.ok for i in self.items)

    def add(self, check, case, ok, detail):
        self.items.append(AuditItem(check, case, bool(ok), detail))

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["check", "case", "status", "detail"])
            for i in self.items:
                w.writerow([i.check, i.case, "pass" if i.ok else "FAIL", i.detail])


def random_monotone_pair(rng, delta_bound):
    """Random two-source joint penalty, nondecreasing in both ages."""
    B = delta_bound
    tables = []
    for _ in range(2):
        inc = rng.exponential(1.0, size=(B, B)) * (rng.random((B, B)) < 0.7)
        tables.append(np.cumsum(np.cumsum(inc, axis=0), axis=1))
    return np.stack(tables)


def audit_lower_bound(cfg, report, tol=1e-9):
    """Lower and gap bounds of the single-source penalty on the default model."""
    B = cfg.audit_pair_delta_bound
    for p in cfg.audit_p_values:
        model = cfg.model(p=p)
        M = model.num_sources
        joint = JointPenalty.from_model(model)
        tables = model_tables(model, TruncationConfig(B))
        eps = np.array([max((epsilon_mn(model, m, n, B).eps_sq for n in range(M) if n != m),
                            default=0.0) for m in range(M)])
        grid = np.vstack([pair_grid(M, m, n, B, fill) for m in range(M) for n in range(M)
                          if n != m for fill in (1, B)]) if M > 1 else np.arange(1, B + 1)[:, None]
        rep = check_lower_bound(joint, tables, grid, eps_sq=eps, tol=tol)
        worst = float(rep.min_gap.min())
        report.add("lower_bound", f"p={p:g}", worst >= -tol,
                   f"min gap {worst:.3e}")
        slack = float(np.min(rep.gap_limit - rep.max_gap))
        ok = np.all(rep.max_gap <= rep.gap_limit + 1e-6)
        if p == 0:
            ok = ok and np.all(np.abs(rep.max_gap) <= tol) and np.all(np.abs(rep.min_gap) <= tol)
        report.add("gap_bound", f"p={p:g}", ok,
                   f"max gap {float(rep.max_gap.max()):.3e}, min slack {slack:.3e}")


def audit_cyclic(cfg, report, tol=1e-6):
    rng = np.random.default_rng(cfg.audit_seed)
    B = cfg.audit_delta_bound
    worst = 0.0
    bad = []
    for i in range(cfg.audit_instances):
        table = random_monotone_pair(rng, B)
        g = JointPenalty.from_table(table)
        cyc = cyclic_search(g, B, cap=4 * B)
        orc = joint_mdp_oracle(g, 1, B)
        err = abs(cyc.L_opt - orc.value)
        worst = max(worst, err)
        if err > tol:
            bad.append(f"#{i}: cyclic {cyc.L_opt:.9g} vs oracle {orc.value:.9g}")
    report.add("cyclic_vs_oracle", f"{cfg.audit_instances} instances, B={B}", not bad,
               f"max |diff| {worst:.3e}" + ("; " + "; ".join(bad[:5]) if bad else ""))


def approximation_gap(model, gamma, delta_bound):
    """Left and right sides of the discounted approximation-gap bound for ``M = 2``.

    The left side compares the optimal joint value under the exact penalty
    with the value, under the exact penalty, of the policy that is optimal for
    the single-source approximation; the right side is
    ``2 / (1 - gamma) * sum_m max_n eps^2_{m,n}``.
    """
    M, B = model.num_sources, delta_bound
    joint = JointPenalty.from_model(model)
    opt = joint_mdp_oracle(joint, 1, B, gamma=gamma)
    tables = stack_tables(model_tables(model, TruncationConfig(B)))
    approx = JointPenalty.from_table(_separable_table(tables))
    pi_f = joint_mdp_oracle(approx, 1, B, gamma=gamma)
    V_f = evaluate_joint_policy(joint, pi_f.policy, 1, B, gamma)
    lhs = float(np.max(np.abs(V_f - opt.value)))
    eps = [max(epsilon_mn(model, m, n, B).eps_sq for n in range(M) if n != m) for m in range(M)]
    rhs = 2.0 / (1.0 - gamma) * float(np.sum(eps))
    return lhs, rhs


def _separable_table(tables):
    M, B = tables.shape
    out = np.empty((M,) + (B,) * M)
    for m in range(M):
        shape = [1] * M
        shape[m] = B
        out[m] = np.broadcast_to(tables[m].reshape(shape), (B,) * M)
    return out


def audit_gap(cfg, report, delta_bound=30):
    for p in cfg.audit_p_values:
        model = cfg.model(num_sources=2, p=p)
        lhs, rhs = approximation_gap(model, cfg.gamma, delta_bound)
        report.add("approximation_gap", f"M=2 p={p:g}", lhs <= rhs + 1e-6,
                   f"value gap {lhs:.3e} <= bound {rhs:.3e}")


def audit(cfg, out=None):
    report = AuditReport()
    audit_lower_bound(cfg, report)
    audit_cyclic(cfg, report)
    audit_gap(cfg, report)
    if out is not None:
        report.write(out)
    return report


# ---------------------------------------------------------------------------
# beta traces and penalty export


@dataclass
class TraceSummary:
    zeta: float
    first_below: List[int]

    @property
    def median(self):
        return float(np.median(self.first_below))


def beta_trace(cfg, out=None, model=None):
    """Run Online-MGF per ``zeta`` and seed; write (zeta, seed, episode, source, beta, max_d).

    Returns one :class:`TraceSummary` per ``zeta``; runs that never drop below
    the threshold count as ``trace_episodes``.
    """
    model = cfg.model() if model is None else model
    sim = Simulator(model, cfg.gamma, cfg.episode_length, cfg.delta_bound)
    base = dict(cfg.policy_params.get("Online-MGF", {}))
    rows, summaries = [], []
    for zeta in cfg.trace_zeta_values:
        firsts = []
        for seed in cfg.seed_list(cfg.trace_seeds):
            policy = build_policy("Online-MGF", cfg, model, {**base, "zeta": zeta})
            sim.run(policy, seed, cfg.trace_episodes)
            trace = policy.trace_
            hit = trace.first_below(cfg.trace_threshold)
            firsts.append(cfg.trace_episodes if hit is None else hit)
            rows.extend((zeta, seed, *r) for r in trace.rows())
        summaries.append(TraceSummary(zeta, firsts))
    if out is not None:
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["zeta", "seed", "episode", "source", "beta", "max_d"])
            for z, s, k, m, b, d in rows:
                w.writerow([f"{z:g}", s, k, m, repr(b), repr(d)])
    return summaries


def value_gap_run(model, gamma=0.7, lam=1.0, episodes=100, seed=0, T=100, delta_bound=50,
                  **params):
    """Fixed-multiplier online threshold run followed by the per-episode bound check."""
    shape = np.zeros((model.num_sources, delta_bound))
    policy = OnlineThreshold(gamma=gamma, lam=lam, **params).fit(shape)
    Simulator(model, gamma, T, delta_bound).run(policy, seed, episodes)
    return check_value_gap_bound(policy.trace_, gamma, lam)


def export_penalties(cfg, out):
    model = cfg.model()
    tables = model_tables(model, TruncationConfig(cfg.delta_bound), cfg.penalty_mode)
    write_tables(out, tables)
    return tables

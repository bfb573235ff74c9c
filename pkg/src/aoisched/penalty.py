"""Per-source approximate penalties f_m(delta) and the exact joint penalty g_m."""
import csv
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .info_measures import error_curve, geometric_error, h_l_empirical

PROVENANCES = ("closed_form", "model_derived", "empirical", "user")


@dataclass(frozen=True)
class TruncationConfig:
    delta_bound: int = 50

    def __post_init__(self):
        if int(self.delta_bound) < 2:
            raise ValueError("delta_bound must be >= 2")


@dataclass(frozen=True)
class PenaltyTable:
    """``values[d - 1]`` is the penalty at AoI ``d`` for ``d = 1..delta_bound``."""
    source: int
    values: np.ndarray
    provenance: str = "user"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel().copy()
        if v.size < 1 or not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("penalty values must be finite and nonnegative")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def delta_bound(self):
        return self.values.size

    def __call__(self, delta):
        """Penalty at ``delta``; ages past the bound are held at the last entry."""
        d = np.clip(np.asarray(delta, dtype=int), 1, self.delta_bound)
        return self.values[d - 1]

    def is_nondecreasing(self, tol=0.0):
        return bool(np.all(np.diff(self.values) >= -tol))


def stack_tables(tables):
    """``(M, delta_bound)`` array from a list of tables ordered by source."""
    return np.vstack([t.values for t in sorted(tables, key=lambda t: t.source)])


class JointPenalty:
    """Exact expected inference error ``g_m`` as a function of the AoI vector.

    Two forms are supported. ``from_model`` evaluates the piggyback model in
    closed form: the receiver keeps only the latest packet per source, so the
    freshest observation of ``Z_m`` is either ``m``'s own packet or one of the
    other retained packets that happened to carry ``Z_m``. ``from_table``
    wraps an explicit dense table ``(M, B, ..., B)`` indexed by 1-based ages.
    """

    def __init__(self, num_sources, evaluator, delta_bound=None):
        self.num_sources = num_sources
        self._evaluator = evaluator
        self.delta_bound = delta_bound

    @classmethod
    def from_model(cls, model):
        if not model.diagonal_noise:
            raise NotImplementedError("joint penalty needs diagonal noise covariance")
        M = model.num_sources
        a2 = model.ar_coeffs ** 2
        q = np.diag(model.noise_cov).copy()
        carry = model.piggyback_prob.copy()  # carry[m, n]: n's packet holds Z_m

        def evaluate(m, ages):
            ages = np.asarray(ages, dtype=float)
            c = carry[m]
            order = np.argsort(ages, axis=-1, kind="stable")
            sorted_ages = np.take_along_axis(ages, order, axis=-1)
            c_sorted = c[order]
            miss = np.cumprod(1.0 - c_sorted, axis=-1)
            before = np.concatenate([np.ones(miss.shape[:-1] + (1,)), miss[..., :-1]], axis=-1)
            weight = c_sorted * before
            v = geometric_error(a2[m], q[m], sorted_ages)
            return np.sum(weight * v, axis=-1)

        return cls(M, evaluate)

    @classmethod
    def from_table(cls, table):
        table = np.asarray(table, dtype=float)
        M = table.shape[0]
        if table.ndim != M + 1 or len(set(table.shape[1:])) != 1:
            raise ValueError("table must have shape (M, B, ..., B)")
        B = table.shape[1]

        def evaluate(m, ages):
            idx = np.clip(np.asarray(ages, dtype=int), 1, B) - 1
            return table[m][tuple(np.moveaxis(idx, -1, 0))]

        return cls(M, evaluate, delta_bound=B)

    def evaluate(self, m, ages):
        """g_m at ``ages`` (last axis has length M); vectorized over leading axes."""
        ages = np.asarray(ages)
        if ages.shape[-1] != self.num_sources:
            raise ValueError(f"expected {self.num_sources} ages, got {ages.shape[-1]}")
        return self._evaluator(m, ages)

    def __call__(self, m, ages):
        out = self.evaluate(m, ages)
        return float(out) if np.ndim(out) == 0 else out

    def total(self, ages):
        return sum(self.evaluate(m, ages) for m in range(self.num_sources))

    def dense(self, delta_bound):
        """Dense ``(M, B, ..., B)`` tabulation; intended for small M only."""
        M = self.num_sources
        grid = np.stack(np.meshgrid(*[np.arange(1, delta_bound + 1)] * M,
                                    indexing="ij"), axis=-1)
        return np.stack([self.evaluate(m, grid) for m in range(M)])


def qbar(Q, m):
    """Conditional variance of noise component ``m`` given all the others."""
    Q = np.asarray(Q, dtype=float)
    if Q.shape[0] == 1:
        return float(Q[0, 0])
    others = [i for i in range(Q.shape[0]) if i != m]
    q_m = Q[m, others]
    sub = Q[np.ix_(others, others)]
    if np.linalg.cond(sub) > 1e12:
        raise np.linalg.LinAlgError("noise covariance of the other sources is singular")
    return float(Q[m, m] - q_m @ np.linalg.solve(sub, q_m))


def f_closed_form(a, qbar_mm, delta):
    if np.any(np.asarray(delta) < 1):
        raise ValueError("delta must be >= 1")
    return geometric_error(float(a) ** 2, qbar_mm, delta)


def build_f_table(model, m, cfg=TruncationConfig(), mode="model_derived",
                  data=None, min_samples=1):
    """Single-source penalty table for source ``m``.

    Modes:
        ``closed_form``: LTI-Gaussian formula with the conditional noise
            variance; ignores piggybacked content.
        ``model_derived``: expected error when every other source delivered
            at the previous slot (all other ages set to 1), which conditions
            on piggybacked content in those fresh packets.
        ``empirical``: least-squares prediction error estimated from ``data``,
            an ``(n, M)`` array of states with one row per time step.
    """
    B = int(cfg.delta_bound)
    deltas = np.arange(1, B + 1)
    if mode == "closed_form":
        vals = f_closed_form(model.ar_coeffs[m], qbar(model.noise_cov, m), deltas)
    elif mode == "model_derived":
        joint = JointPenalty.from_model(model)
        ages = np.ones((B, model.num_sources))
        ages[:, m] = deltas
        vals = joint.evaluate(m, ages)
    elif mode == "empirical":
        if data is None:
            raise ValueError("empirical mode needs a dataset")
        vals = _empirical_f(np.asarray(data, dtype=float), m, B, min_samples)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return PenaltyTable(m, vals, mode)


def _empirical_f(data, m, B, min_samples):
    n, M = data.shape
    missing = [d for d in range(1, B + 1) if n - max(d, 1) < max(min_samples, M + 1)]
    if missing:
        raise ValueError(f"insufficient samples for ages {missing}")
    others = [i for i in range(M) if i != m]
    vals = np.empty(B)
    for d in range(1, B + 1):
        y = data[d:, m]
        cond = np.column_stack([data[:n - d, m], data[d - 1:n - 1, others]])
        vals[d - 1] = h_l_empirical(y, cond, binning="linear")
    return vals


def model_tables(model, cfg=TruncationConfig(), mode="model_derived"):
    return [build_f_table(model, m, cfg, mode) for m in range(model.num_sources)]


@dataclass
class LowerBoundReport:
    min_gap: np.ndarray
    max_gap: np.ndarray
    gap_limit: np.ndarray
    counterexamples: List[tuple] = field(default_factory=list)

    @property
    def ok(self):
        return not self.counterexamples


def pair_grid(num_sources, m, n, delta_bound, fill=1):
    """All ``(age_m, age_n)`` pairs with the remaining ages fixed at ``fill``."""
    d = np.arange(1, delta_bound + 1)
    grid = np.full((delta_bound, delta_bound, num_sources), fill, dtype=float)
    grid[..., n] = d[None, :]
    grid[..., m] = d[:, None]
    return grid.reshape(-1, num_sources)


def check_lower_bound(joint, tables, grid, eps_sq=None, tol=1e-9):
    """Audit ``f_m <= g_m <= f_m + 2 max_n eps^2_{m,n}`` on ``grid``.

    Args:
        joint: a :class:`JointPenalty`.
        tables: per-source :class:`PenaltyTable` list.
        grid: ``(n_points, M)`` AoI vectors within the table bound.
        eps_sq: per-source ``max_n eps^2_{m,n}``; skips the upper check if None.
        tol: slack on both inequalities.
    """
    grid = np.asarray(grid)
    M = joint.num_sources
    by_source = {t.source: t for t in tables}
    min_gap = np.empty(M)
    max_gap = np.empty(M)
    limit = np.full(M, np.inf) if eps_sq is None else 2.0 * np.asarray(eps_sq, float)
    bad = []
    for m in range(M):
        gap = joint.evaluate(m, grid) - by_source[m](grid[:, m])
        min_gap[m], max_gap[m] = gap.min(), gap.max()
        for i in np.flatnonzero((gap < -tol) | (gap > limit[m] + tol)):
            bad.append((m, tuple(int(x) for x in grid[i]), float(gap[i])))
    return LowerBoundReport(min_gap, max_gap, limit, bad)


def write_tables(path, tables):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "delta", "value"])
        for t in tables:
            for d, v in enumerate(t.values, start=1):
                w.writerow([t.source, d, repr(float(v))])


def read_tables(path, provenance="user"):
    rows = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(int(r["source"]), []).append((int(r["delta"]), float(r["value"])))
    out = []
    for m in sorted(rows):
        pts = sorted(rows[m])
        if [d for d, _ in pts] != list(range(1, len(pts) + 1)):
            raise ValueError(f"source {m}: ages must run 1..B without gaps")
        out.append(PenaltyTable(m, [v for _, v in pts], provenance))
    return out

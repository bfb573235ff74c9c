"""Per-source Lagrangian subproblems, gain indices and small exact oracles."""
import itertools
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .penalty import PenaltyTable

VI_TOL = 1e-10
VI_MAX_ITER = 100_000
MAX_ORACLE_STATES = 10_000


@dataclass(frozen=True)
class ValueFunction:
    source: int
    gamma: float
    lam: float
    values: np.ndarray
    residual: float
    n_iter: int
    diffs: Optional[np.ndarray] = field(default=None, repr=False)

    def __call__(self, delta):
        d = np.clip(np.asarray(delta, dtype=int), 1, self.values.size)
        return self.values[d - 1]


@dataclass(frozen=True)
class GainIndexTable:
    source: int
    gamma: float
    lam: float
    values: np.ndarray

    def __call__(self, delta):
        d = np.clip(np.asarray(delta, dtype=int), 1, self.values.size)
        return self.values[d - 1]


def bellman(F, J, gamma, lam):
    """One application of ``J(d) = f(d) + min(lam + g J(1), g J(d+1))``.

    Works row-wise on ``(..., B)`` arrays; ``J(B+1)`` is read as ``J(B)``.
    """
    nxt = np.concatenate([J[..., 1:], J[..., -1:]], axis=-1)
    return F + np.minimum(lam + gamma * J[..., :1], gamma * nxt)


def solve_values(F, gamma, lam, tol=VI_TOL, max_iter=VI_MAX_ITER, init=None, record=False):
    """Batched value iteration.

    Returns ``(J, residual, n_iter, diffs)`` where ``residual`` is the
    sup-norm Bellman residual of the returned ``J`` and ``diffs`` holds the
    successive iterate distances when ``record`` is set.
    """
    F = np.asarray(F, dtype=float)
    if not np.all(np.isfinite(F)):
        raise ValueError("penalty values must be finite")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    lam = np.asarray(lam, dtype=float)
    if lam.ndim:
        lam = lam.reshape(lam.shape + (1,) * (F.ndim - lam.ndim))
    J = np.zeros_like(F) if init is None else np.array(init, dtype=float)
    diffs = []
    for it in range(1, max_iter + 1):
        J_new = bellman(F, J, gamma, lam)
        diff = float(np.max(np.abs(J_new - J)))
        J = J_new
        if record:
            diffs.append(diff)
        # ||T J_new - J_new|| <= gamma * diff
        if gamma * diff <= tol:
            break
    else:
        raise RuntimeError(f"value iteration did not converge in {max_iter} sweeps")
    residual = float(np.max(np.abs(bellman(F, J, gamma, lam) - J)))
    return J, residual, it, (np.asarray(diffs) if record else None)


def value_iteration(f, gamma, lam, tol=VI_TOL, max_iter=VI_MAX_ITER, record=False):
    if isinstance(f, PenaltyTable):
        source, F = f.source, f.values
    else:
        source, F = -1, np.asarray(f, dtype=float)
    if F.ndim != 1:
        raise ValueError("value_iteration solves one source; use solve_values for batches")
    J, res, n, diffs = solve_values(F, gamma, lam, tol, max_iter, record=record)
    return ValueFunction(source, gamma, float(lam), J, res, n, diffs)


def gain_values(J):
    """``alpha(d) = J(d+1) - J(1)`` row-wise with saturation at the bound."""
    nxt = np.concatenate([J[..., 1:], J[..., -1:]], axis=-1)
    return nxt - J[..., :1]


def gain_index(J):
    return GainIndexTable(J.source, J.gamma, J.lam, gain_values(J.values))


def threshold_decide(alpha, delta, lam, gamma):
    """Schedule iff the gain index strictly exceeds ``lam / gamma``."""
    return bool(alpha(delta) > lam / gamma)


def q_difference_decide(J, f, delta, lam, gamma):
    """Same decision phrased through action values: schedule iff Q(d,0) > Q(d,1)."""
    fd = f(delta) if callable(f) else np.asarray(f)[delta - 1]
    q_idle = fd + gamma * J(delta + 1)
    q_send = fd + lam + gamma * J(1)
    return bool(q_idle - q_send > 0)


# ---------------------------------------------------------------------------
# Two-source cyclic policy


@dataclass(frozen=True)
class CyclicSearchResult:
    tau1: int
    tau2: int
    L_opt: float
    search_cap: int
    objective: np.ndarray = field(repr=False)


def cycle_cost(G, tau1, tau2):
    """Average cost of scheduling source 0 for ``tau1`` slots then source 1 for ``tau2``.

    ``G[i, j]`` is the summed penalty at ages ``(i+1, j+1)``. Ages beyond the
    table saturate. A zero-length phase means one source is never served, so
    the system settles at the saturated corner.
    """
    B = G.shape[0]
    if tau1 + tau2 < 1:
        raise ValueError("cycle period must be positive")
    if tau2 == 0:
        return float(G[0, B - 1])
    if tau1 == 0:
        return float(G[B - 1, 0])
    k = np.minimum(np.arange(2, tau1 + 2), B) - 1
    j = np.minimum(np.arange(2, tau2 + 2), B) - 1
    return float((G[0, k].sum() + G[j, 0].sum()) / (tau1 + tau2))


def cyclic_search(g, delta_bound, cap=200):
    """Exhaustive search over cycle lengths ``0..cap`` for two sources, one channel."""
    if g.num_sources != 2:
        raise ValueError("cyclic search applies to two sources")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    G = g.dense(delta_bound).sum(axis=0)
    B = delta_bound
    idx = np.minimum(np.arange(2, cap + 2), B) - 1
    row = np.concatenate([[0.0], np.cumsum(G[0, idx])])   # source-0 phase sums
    col = np.concatenate([[0.0], np.cumsum(G[idx, 0])])   # source-1 phase sums
    t1 = np.arange(cap + 1)[:, None]
    t2 = np.arange(cap + 1)[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        obj = (row[:, None] + col[None, :]) / (t1 + t2)
    obj[1:, 0] = G[0, B - 1]
    obj[0, 1:] = G[B - 1, 0]
    obj[0, 0] = np.inf
    best = float(obj.min())
    # Lexicographically smallest minimizer; tolerance absorbs summation-order noise.
    cand = np.argwhere(obj <= best + 1e-12 * max(1.0, abs(best)))
    tau1, tau2 = (int(x) for x in cand[0])
    if max(tau1, tau2) == cap:
        warnings.warn(f"cyclic search optimum touches the cap ({cap})", RuntimeWarning)
    return CyclicSearchResult(tau1, tau2, float(obj[tau1, tau2]), cap, obj)


# ---------------------------------------------------------------------------
# Joint-state oracle


@dataclass
class OracleResult:
    """Optimal value of the joint AoI MDP.

    ``value`` is ``L_opt`` (average mode) or the discounted value array over
    ``states``; ``policy[s]`` indexes ``actions``.
    """
    value: object
    policy: np.ndarray
    actions: List[tuple]
    states: np.ndarray
    relative_values: Optional[np.ndarray] = None
    bounds: Optional[tuple] = None

    def action_at(self, ages):
        B = int(self.states.max())
        s = np.ravel_multi_index(tuple(np.asarray(ages, int) - 1), (B,) * len(ages))
        return self.actions[int(self.policy[s])]


def _joint_space(M, N, B):
    n_states = B ** M
    if n_states > MAX_ORACLE_STATES:
        raise ValueError(f"joint state space too large: {B}^{M} = {n_states} states")
    shape = (B,) * M
    states = np.stack(np.unravel_index(np.arange(n_states), shape), axis=-1) + 1
    actions = list(itertools.combinations(range(M), N))
    nxt = np.empty((len(actions), n_states), dtype=np.int64)
    for a, chosen in enumerate(actions):
        ages = np.minimum(states + 1, B)
        ages[:, list(chosen)] = 1
        nxt[a] = np.ravel_multi_index(tuple((ages - 1).T), shape)
    return states, actions, nxt


def joint_mdp_oracle(g, n_channels, delta_bound, gamma=None, tol=1e-12,
                     max_iter=1_000_000, aperiodicity=0.5):
    """Solve the joint AoI scheduling MDP exactly on the truncated grid.

    With ``gamma`` this is discounted value iteration; without it, relative
    value iteration on the aperiodicity-transformed chain, stopped when the
    Odoni bounds on ``L_opt`` are within ``tol``.
    """
    M, B = g.num_sources, delta_bound
    if not 1 <= n_channels <= M:
        raise ValueError("need 1 <= N <= M")
    states, actions, nxt = _joint_space(M, n_channels, B)
    cost = g.total(states.astype(float))

    if gamma is not None:
        V, _, _, _ = _discounted(cost, nxt, gamma, tol, max_iter)
        policy = np.argmin(V[nxt], axis=0)
        return OracleResult(V, policy, actions, states)

    kappa = aperiodicity
    h = np.zeros_like(cost)
    for _ in range(max_iter):
        Th = cost + h[nxt].min(axis=0)
        diff = Th - h
        lo, hi = diff.min(), diff.max()
        if hi - lo <= tol:
            break
        h = h + kappa * diff
        h -= h[0]
    else:
        raise RuntimeError("relative value iteration did not converge")
    policy = np.argmin(h[nxt], axis=0)
    return OracleResult(0.5 * (lo + hi), policy, actions, states,
                        relative_values=h, bounds=(float(lo), float(hi)))


def _discounted(cost, nxt, gamma, tol, max_iter):
    V = np.zeros_like(cost)
    for it in range(max_iter):
        V_new = cost + gamma * V[nxt].min(axis=0)
        diff = float(np.max(np.abs(V_new - V)))
        V = V_new
        if gamma * diff <= tol * (1 - gamma):
            return V, diff, it, None
    raise RuntimeError("discounted value iteration did not converge")


def evaluate_joint_policy(g, policy, n_channels, delta_bound, gamma, tol=1e-12):
    """Discounted value under ``g`` of a stationary joint policy (action index per state)."""
    M, B = g.num_sources, delta_bound
    states, _, nxt = _joint_space(M, n_channels, B)
    cost = g.total(states.astype(float))
    follow = nxt[np.asarray(policy), np.arange(states.shape[0])]
    V = np.zeros_like(cost)
    while True:
        V_new = cost + gamma * V[follow]
        if np.max(np.abs(V_new - V)) <= tol * (1 - gamma):
            return V_new
        V = V_new

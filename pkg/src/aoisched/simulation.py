"""Closed-loop slot simulator and the multi-seed evaluation harness.

Timing within slot ``t``:

1. the receiver predicts every state from the packets delivered so far
   (generated at ``t - 1`` or earlier) and the loss against ``Z_t`` is booked;
2. the policy sees only the AoI vector and picks the sources to serve;
3. their packets, generated at ``t``, arrive at ``t + 1`` and replace the
   previously retained packet of the same sender.

The whole signal path and every piggyback draw are generated up front from
dedicated streams, so the sample path does not depend on the policy.
"""
import copy
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from .signal import make_streams, simulate_states


class ReceiverState:
    """Latest packet per sender: generation time and which states it carries."""

    def __init__(self, gen_time, carry):
        self.gen_time = np.array(gen_time, dtype=np.int64)
        self.carry = np.array(carry, dtype=bool)      # [sender, state]
        self._never = np.iinfo(np.int64).min // 2

    def deliver(self, senders, t, carry_rows):
        self.gen_time[senders] = t
        self.carry[senders] = carry_rows

    def observation_time(self):
        """Generation time of the freshest retained observation of each state."""
        return np.where(self.carry, self.gen_time[:, None], self._never).max(axis=0)

    def aoi(self, t):
        return t - self.gen_time

    def effective_age(self, t):
        return t - self.observation_time()


@dataclass
class EpisodeLog:
    """Per-slot record of one episode; arrays are ``(T, M)`` unless noted.

    ``aoi`` is what the scheduler saw (saturated at the bound), ``true_aoi``
    and ``effective_age`` are unsaturated, ``piggyback[t, s, n]`` says whether
    the packet that sender ``s`` would emit at ``t`` carries state ``n``.
    """
    index: int
    gamma: float
    aoi: np.ndarray
    true_aoi: np.ndarray
    effective_age: np.ndarray
    decisions: np.ndarray
    losses: np.ndarray
    piggyback: np.ndarray = field(repr=False)
    discounted_loss: float = 0.0
    lam: Optional[float] = None
    subgrad: Optional[float] = None

    @property
    def n_slots(self):
        return self.losses.shape[0]

    def recompute_discounted(self):
        disc = self.gamma ** np.arange(self.n_slots)
        return float(disc @ self.losses.sum(axis=1))

    def to_text(self, path):
        T, M = self.losses.shape
        cols = (["slot"] + [f"aoi_{m}" for m in range(M)] + [f"eff_{m}" for m in range(M)]
                + [f"sched_{m}" for m in range(M)] + [f"loss_{m}" for m in range(M)])
        body = np.column_stack([np.arange(T), self.aoi, self.effective_age,
                                self.decisions.astype(int), self.losses])
        fmt = ["%d"] * (1 + 3 * M) + ["%.10g"] * M
        np.savetxt(path, body, fmt=fmt, delimiter=",", header=",".join(cols), comments="")


@dataclass
class RunResult:
    seed: int
    discounted: np.ndarray
    logs: List[EpisodeLog] = field(default_factory=list, repr=False)
    policy: object = field(default=None, repr=False)

    def score(self, burn_in=0):
        return float(self.discounted[burn_in:].mean())


class Simulator:
    """Runs a fitted policy against a Gauss-Markov model for whole episodes."""

    def __init__(self, model, gamma=0.7, episode_length=100, delta_bound=50):
        if not model.diagonal_noise:
            raise NotImplementedError("simulation needs diagonal noise covariance")
        if not 0 < gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        self.model = model
        self.gamma = gamma
        self.T = int(episode_length)
        self.delta_bound = int(delta_bound)

    def run(self, policy, seed, episodes, keep_logs=False, check_capacity=True):
        model, T, B = self.model, self.T, self.delta_bound
        M = model.num_sources
        streams = make_streams(seed)
        n_slots = episodes * T
        Z = simulate_states(model, n_slots, streams["noise"])   # row r is slot r - 1
        carry_prob = model.piggyback_prob.T                                   # [sender, state]
        pig = streams["piggyback"].random((n_slots + 1, M, M)) < carry_prob
        policy.reset(streams["policy"])

        rx = ReceiverState(np.full(M, -1), pig[0])
        a = model.ar_coeffs
        cap = getattr(policy, "n_channels", M)
        constrained = check_capacity and getattr(policy, "constrained", True)
        disc = self.gamma ** np.arange(T)
        out = np.empty(episodes)
        logs = []
        for k in range(episodes):
            t0 = k * T
            true_aoi = np.empty((T, M), dtype=np.int64)
            obs = np.empty((T, M), dtype=np.int64)
            sched = np.zeros((T, M), dtype=bool)
            for i in range(T):
                t = t0 + i
                age = t - rx.gen_time
                true_aoi[i] = age
                obs[i] = rx.observation_time()
                chosen = policy.decide(np.minimum(age, B))
                if constrained and len(chosen) != cap:
                    raise RuntimeError(f"slot {t}: policy served {len(chosen)} sources, capacity {cap}")
                sched[i, chosen] = True
                rx.deliver(chosen, t, pig[t + 1][chosen])
            slots = np.arange(t0, t0 + T)
            d = slots[:, None] - obs
            pred = a ** d * Z[obs + 1, np.arange(M)]
            losses = (Z[slots + 1] - pred) ** 2
            if not np.all(np.isfinite(losses)):
                bad = np.argwhere(~np.isfinite(losses))[0]
                raise FloatingPointError(f"non-finite loss at slot {t0 + bad[0]}, target {bad[1]}")
            log = EpisodeLog(k, self.gamma, np.minimum(true_aoi, B), true_aoi, d, sched,
                             losses, pig[t0 + 1:t0 + T + 1])
            log.discounted_loss = float(disc @ losses.sum(axis=1))
            log.lam = getattr(policy, "lam_", None)
            log.subgrad = getattr(policy, "subgrad_", None)
            out[k] = log.discounted_loss
            policy.end_episode(log)
            if keep_logs:
                logs.append(log)
        return RunResult(seed, out, logs, policy)


def run_episode(model, policy, seed=0, T=100, gamma=0.7, delta_bound=50):
    """Single fresh episode; returns its :class:`EpisodeLog`."""
    sim = Simulator(model, gamma, T, delta_bound)
    return sim.run(policy, seed, 1, keep_logs=True).logs[0]


@dataclass
class PolicySummary:
    policy: str
    mean: float
    ci95: float
    per_seed: np.ndarray
    n_episodes: int
    burn_in: int

    @property
    def n_seeds(self):
        return self.per_seed.size

    @property
    def interval(self):
        return self.mean - self.ci95, self.mean + self.ci95


def mean_ci(values, level=0.95):
    """Mean and t-based half-width of the confidence interval."""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        return float(x.mean()), 0.0
    half = stats.t.ppf(0.5 + level / 2, x.size - 1) * x.std(ddof=1) / np.sqrt(x.size)
    return float(x.mean()), float(half)


def _one_seed(sim, policy, seed, episodes, burn_in):
    return sim.run(copy.deepcopy(policy), seed, episodes).score(burn_in)


def evaluate_policy(model, policy, seeds, episodes=50, T=100, gamma=0.7,
                    delta_bound=50, burn_in=0, n_jobs=1):
    """Mean discounted error per episode across ``seeds`` with a 95% interval.

    ``policy`` must already be fitted; each seed runs on a private copy.
    Episodes before ``burn_in`` are excluded from the per-seed average.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    if not 0 <= burn_in < episodes:
        raise ValueError("burn_in must be smaller than the number of episodes")
    sim = Simulator(model, gamma, T, delta_bound)
    if n_jobs == 1:
        scores = [_one_seed(sim, policy, s, episodes, burn_in) for s in seeds]
    else:
        scores = Parallel(n_jobs=n_jobs)(
            delayed(_one_seed)(sim, policy, s, episodes, burn_in) for s in seeds)
    mean, half = mean_ci(scores)
    return PolicySummary(getattr(policy, "name", type(policy).__name__), mean, half,
                         np.asarray(scores), episodes, burn_in)

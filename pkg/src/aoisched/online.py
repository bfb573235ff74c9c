"""Learning penalties from bandit feedback: optimistic estimates, mixed value
functions and the online threshold / max-gain drivers."""
from dataclasses import dataclass, field
from typing import List

import numpy as np

from ._validation import check_penalty_matrix, check_channels
from .policies import SchedulingPolicy, top_n
from .relaxed_mdp import VI_TOL, gain_values, solve_values


def confidence_radius(counts, eta):
    """Hoeffding radius ``sqrt(ln(2/eta) / (2 max(n, 1)))`` for losses in [0, 1]."""
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    n = np.maximum(np.asarray(counts, dtype=float), 1.0)
    return np.sqrt(np.log(2.0 / eta) / (2.0 * n))


class OnlineSourceEstimator:
    """Per-source penalty estimate and mixed value function.

    ``loss_bound`` is the cap ``B``: losses are clipped to it and the
    confidence radius is scaled by it. ``None`` leaves losses unclipped and
    uses the unit-range radius as is. With ``cumulative=True`` counts and
    sums carry over between episodes instead of being reset. ``monotone``
    replaces the optimistic estimate by its running maximum over ages, so
    ages never visited inherit the estimate of the nearest younger one.
    ``init`` picks the mixed value before the first solve: ``"zero"`` or
    ``"first"`` (adopt the first optimistic solution outright).
    """

    def __init__(self, source, delta_bound, gamma, eta=0.05, zeta=0.3,
                 loss_bound=None, cumulative=False, monotone=False, init="zero"):
        if not 0 < zeta < 1:
            raise ValueError("zeta must lie in (0, 1)")
        if not 0 < gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        confidence_radius(1, eta)
        self.source = source
        self.delta_bound = int(delta_bound)
        self.gamma = gamma
        self.eta = eta
        self.zeta = zeta
        self.loss_bound = loss_bound
        self.cumulative = cumulative
        self.monotone = monotone
        if init not in ("zero", "first"):
            raise ValueError(f"unknown init {init!r}")
        self.init = init
        B = self.delta_bound
        self.counts = np.zeros(B, dtype=np.int64)
        self.sums = np.zeros(B)
        self.f_hat = np.zeros(B)
        self.radius = self.scaled_radius(self.counts)
        self.f_tilde = np.zeros(B)
        self.J_mixed = np.zeros(B)
        self.k = 0

    def scaled_radius(self, counts):
        d = confidence_radius(counts, self.eta)
        return d if self.loss_bound is None else self.loss_bound * d

    def record_feedback(self, delta, loss):
        """Book ``loss`` observed while the source's AoI was ``delta``."""
        if not 1 <= delta:
            raise ValueError("delta must be >= 1")
        if not np.isfinite(loss) or loss < 0:
            raise ValueError("loss must be finite and nonnegative")
        if self.loss_bound is not None:
            loss = min(loss, self.loss_bound)
        i = min(int(delta), self.delta_bound) - 1
        self.counts[i] += 1
        self.sums[i] += loss

    def record_batch(self, deltas, losses):
        deltas = np.minimum(np.asarray(deltas, dtype=np.int64), self.delta_bound)
        losses = np.asarray(losses, dtype=float)
        if np.any(deltas < 1) or np.any(~np.isfinite(losses)) or np.any(losses < 0):
            raise ValueError("invalid feedback batch")
        if self.loss_bound is not None:
            losses = np.minimum(losses, self.loss_bound)
        self.counts += np.bincount(deltas - 1, minlength=self.delta_bound)
        self.sums += np.bincount(deltas - 1, weights=losses, minlength=self.delta_bound)

    def estimate(self):
        """Current empirical mean with a floor of one on the denominator."""
        return self.sums / np.maximum(self.counts, 1)

    def close_episode(self):
        """Freeze f_hat, the radius and the optimistic estimate for this episode."""
        self.f_hat = self.estimate()
        self.radius = self.scaled_radius(self.counts)
        self.f_tilde = np.maximum(self.f_hat - self.radius, 0.0)
        if self.monotone:
            self.f_tilde = np.maximum.accumulate(self.f_tilde)
        if not self.cumulative:
            self.counts[:] = 0
            self.sums[:] = 0.0
        return self.f_tilde

    def mix(self, J_optimistic):
        """``J_k = zeta^k J_opt + (1 - zeta^k) J_{k-1}``."""
        self.k += 1
        w = 1.0 if (self.k == 1 and self.init == "first") else self.zeta ** self.k
        self.J_mixed = w * np.asarray(J_optimistic) + (1 - w) * self.J_mixed
        return self.J_mixed

    def end_episode(self, lam):
        """Close the episode and solve the optimistic problem at ``lam`` alone."""
        f_tilde = self.close_episode()
        J, _, _, _ = solve_values(f_tilde, self.gamma, lam)
        return self.mix(J)


@dataclass
class ConvergenceTrace:
    """Per-episode learning diagnostics; rows are episodes, columns sources."""
    beta: List[np.ndarray] = field(default_factory=list)
    max_radius: List[np.ndarray] = field(default_factory=list)
    f_hat: List[np.ndarray] = field(default_factory=list)
    J_step: List[float] = field(default_factory=list)
    lam: List[float] = field(default_factory=list)

    def append(self, f_hat, radius, J_step, lam):
        prev = self.f_hat[-1] if self.f_hat else np.zeros_like(f_hat)
        self.beta.append(np.max(np.abs(f_hat - prev), axis=-1))
        self.max_radius.append(radius.max(axis=-1))
        self.f_hat.append(f_hat.copy())
        self.J_step.append(float(J_step))
        self.lam.append(float(lam))

    def beta_max(self):
        """Largest beta over sources for each episode."""
        return np.array([b.max() for b in self.beta])

    def first_below(self, threshold):
        """First episode index with max beta below ``threshold`` (None if never)."""
        hits = np.flatnonzero(self.beta_max() < threshold)
        return int(hits[0]) if hits.size else None

    def rows(self):
        for k, (b, d) in enumerate(zip(self.beta, self.max_radius)):
            for m in range(b.size):
                yield k, m, float(b[m]), float(d[m])


def online_threshold_decide(J_mixed, aoi, lam, gamma):
    """Independent per-source threshold decisions from mixed value functions."""
    alpha = gain_values(np.asarray(J_mixed))
    rows = np.arange(alpha.shape[0])
    return alpha[rows, np.asarray(aoi) - 1] > lam / gamma


class _OnlineBase(SchedulingPolicy):
    """Shared bookkeeping for the learned-penalty drivers.

    ``X`` passed to ``fit`` only fixes the shape ``(n_sources, delta_bound)``;
    its values are never read, the penalties are learned online.
    """

    def _fit_tables(self, X):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        self._rows = np.arange(self.n_sources_)

    def reset(self, rng=None):
        super().reset(rng)
        kw = dict(delta_bound=self.delta_bound_, gamma=self.gamma, eta=self.eta,
                  zeta=self.zeta, loss_bound=self.loss_bound,
                  cumulative=self.cumulative, monotone=self.monotone, init=self.init)
        self.estimators_ = [OnlineSourceEstimator(m, **kw) for m in range(self.n_sources_)]
        self.lam_ = float(self.lam_init)
        self.episode_ = 0
        self.trace_ = ConvergenceTrace()
        self.gains_ = np.zeros((self.n_sources_, self.delta_bound_))
        self._J_opt = None
        self._begin_episode()
        return self

    def _begin_episode(self):
        self._disc = 1.0
        self.subgrad_ = 0.0
        self._thresh = self.lam_ / self.gamma

    def _warmup(self, aoi):
        return top_n(np.asarray(aoi, dtype=float), self.n_channels)

    def _absorb(self, log):
        sched = log.decisions
        for m, est in enumerate(self.estimators_):
            hit = sched[:, m]
            est.record_batch(log.aoi[hit, m], log.losses[hit, m])

    def _relearn(self):
        """Close the episode for every source and re-solve at the current multiplier."""
        J_prev = np.array([e.J_mixed for e in self.estimators_])
        F = np.array([e.close_episode() for e in self.estimators_])
        self._J_opt, _, _, _ = solve_values(F, self.gamma, self.lam_, tol=VI_TOL,
                                            init=self._J_opt)
        J = np.array([e.mix(j) for e, j in zip(self.estimators_, self._J_opt)])
        self.gains_ = gain_values(J)
        f_hat = np.array([e.f_hat for e in self.estimators_])
        radius = np.array([e.radius for e in self.estimators_])
        self.trace_.append(f_hat, radius, np.max(np.abs(J - J_prev)), self.lam_)

    @property
    def J_mixed_(self):
        return np.array([e.J_mixed for e in self.estimators_])


class OnlineMaxGainFirst(_OnlineBase):
    """Max-gain-first with penalties learned from bandit feedback.

    Episode 0 serves by maximum age to gather feedback. After every episode
    the optimistic estimates are re-solved at the current multiplier and mixed
    into the running value functions; from episode 1 on the ``n_channels``
    sources with the largest learned gain index are served and the multiplier
    follows the same subgradient rule as :class:`~aoisched.policies.MaxGainFirst`.
    """

    name = "Online-MGF"

    def __init__(self, n_channels=1, gamma=0.7, eta=0.05, zeta=0.3, theta=1.0,
                 lam_init=0.0, loss_bound=None, cumulative=False, monotone=False,
                 init="zero", tiebreak="index"):
        self.n_channels = n_channels
        self.gamma = gamma
        self.eta = eta
        self.zeta = zeta
        self.theta = theta
        self.lam_init = lam_init
        self.loss_bound = loss_bound
        self.cumulative = cumulative
        self.monotone = monotone
        self.init = init
        self.tiebreak = tiebreak

    def decide(self, aoi):
        if self.episode_ == 0:
            return self._warmup(aoi)
        alpha = self.gains_[self._rows, np.asarray(aoi) - 1]
        self.subgrad_ += self._disc * np.count_nonzero(alpha > self._thresh)
        self._disc *= self.gamma
        return top_n(alpha, self.n_channels, self._tie_rng())

    def _scores(self, aoi):
        if self.episode_ == 0:
            return np.asarray(aoi, dtype=float)
        return self.gains_[self._rows, np.asarray(aoi) - 1]

    def end_episode(self, log):
        self._absorb(log)
        if self.episode_ >= 1:
            step = self.theta / self.episode_
            self.lam_ += step * (self.subgrad_ - self.n_channels / (1 - self.gamma))
        self._relearn()
        self.episode_ += 1
        self._begin_episode()


class OnlineThreshold(_OnlineBase):
    """Relaxed-problem learner: each source is served independently whenever its
    learned gain index exceeds ``lam / gamma``. The multiplier stays fixed, so
    the channel budget is not enforced; episode 0 serves by maximum age."""

    name = "Online-Threshold"
    constrained = False

    def __init__(self, n_channels=1, gamma=0.7, lam=1.0, eta=0.05, zeta=0.3,
                 loss_bound=None, cumulative=False, monotone=False, init="zero"):
        self.n_channels = n_channels
        self.gamma = gamma
        self.lam = lam
        self.eta = eta
        self.zeta = zeta
        self.loss_bound = loss_bound
        self.cumulative = cumulative
        self.monotone = monotone
        self.init = init

    @property
    def lam_init(self):
        return self.lam

    def decide(self, aoi):
        if self.episode_ == 0:
            return self._warmup(aoi)
        alpha = self.gains_[self._rows, np.asarray(aoi) - 1]
        return np.flatnonzero(alpha > self._thresh)

    _predict_one = decide

    def end_episode(self, log):
        self._absorb(log)
        self._relearn()
        self.episode_ += 1
        self._begin_episode()


@dataclass
class ValueGapReport:
    holds: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def fraction(self):
        return float(self.holds.mean()) if self.holds.size else float("nan")


def check_value_gap_bound(trace, gamma, lam, tol=1e-9):
    """Check ``|J_k - J_{k-1}| <= (2 max d_{k-1} + beta_k) / (1 - gamma)`` per episode.

    ``J_k`` is the value function solved offline on the realized estimate
    ``f_hat_k`` at the fixed multiplier ``lam``; an episode passes when every
    source satisfies the bound.
    """
    if len(trace.f_hat) < 2:
        return ValueGapReport(np.zeros(0, bool), np.zeros(0), np.zeros(0))
    F = np.stack(trace.f_hat)                       # (K, M, B)
    J, _, _, _ = solve_values(F, gamma, lam)
    lhs = np.max(np.abs(J[1:] - J[:-1]), axis=-1)   # (K-1, M)
    d_prev = np.stack(trace.max_radius)[:-1]
    beta = np.stack(trace.beta)[1:]
    rhs = (2.0 * d_prev + beta) / (1.0 - gamma)
    holds = np.all(lhs <= rhs + tol, axis=1)
    return ValueGapReport(holds, lhs, rhs)

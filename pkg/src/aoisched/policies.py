"""Scheduling policies with a scikit-learn estimator surface.

Every policy is fitted on a per-source table of shape ``(n_sources,
delta_bound)`` (penalty values, error curves, or a placeholder when only the
shape matters) and then maps AoI vectors to the set of scheduled sources.
``predict`` returns a 0/1 matrix for a batch of AoI vectors; the simulator
uses the cheaper :meth:`SchedulingPolicy.decide` one slot at a time and calls
:meth:`SchedulingPolicy.end_episode` at episode boundaries.
"""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_aoi, check_channels, check_penalty_matrix
from .relaxed_mdp import CyclicSearchResult, cyclic_search, gain_values, solve_values


def advance_aoi(aoi, chosen, delta_bound):
    """AoI at the next slot: delivered sources drop to 1, others age (saturating)."""
    nxt = np.minimum(np.asarray(aoi) + 1, delta_bound)
    nxt[np.asarray(chosen, dtype=int)] = 1
    return nxt


def top_n(scores, n, rng=None):
    """Indices of the ``n`` largest scores; ties go to the lowest index unless
    ``rng`` is given, in which case they are broken uniformly at random."""
    if rng is not None:
        perm = rng.permutation(scores.shape[0])
        picked = perm[np.argsort(-scores[perm], kind="stable")[:n]]
        return np.sort(picked)
    if n == 1:
        return np.array([int(np.argmax(scores))])
    return np.sort(np.argsort(-scores, kind="stable")[:n])


def to_indicator(chosen, n_sources):
    out = np.zeros(n_sources, dtype=np.int8)
    out[np.asarray(chosen, dtype=int)] = 1
    return out


class SchedulingPolicy(BaseEstimator):
    """Base class. Subclasses implement :meth:`_scores` or override :meth:`decide`."""

    constrained = True
    name = "policy"

    def fit(self, X, y=None):
        X = check_penalty_matrix(X)
        self.n_sources_, self.delta_bound_ = X.shape
        check_channels(self.n_channels, self.n_sources_)
        self._fit_tables(X)
        self.reset()
        return self

    def _fit_tables(self, X):
        pass

    def reset(self, rng=None):
        """Clear per-run state; ``rng`` drives any randomness in decisions."""
        self._rng = rng if rng is not None else np.random.default_rng(0)
        return self

    def _tie_rng(self):
        return self._rng if getattr(self, "tiebreak", "index") == "random" else None

    def decide(self, aoi):
        return top_n(self._scores(aoi), self.n_channels, self._tie_rng())

    def end_episode(self, log):
        pass

    def predict(self, X):
        check_is_fitted(self, "n_sources_")
        X = check_aoi(X, self.n_sources_, self.delta_bound_)
        return np.vstack([to_indicator(self._predict_one(row), self.n_sources_) for row in X])

    def _predict_one(self, aoi):
        return top_n(self._scores(aoi), self.n_channels, self._tie_rng())

    def metadata(self):
        return {"policy": self.name, **self.get_params()}


class MaxAgeFirst(SchedulingPolicy):
    """Serve the ``n_channels`` stalest sources."""

    name = "MAF"

    def __init__(self, n_channels=1, tiebreak="index"):
        self.n_channels = n_channels
        self.tiebreak = tiebreak

    def _scores(self, aoi):
        return np.asarray(aoi, dtype=float)


class RandomizedPolicy(SchedulingPolicy):
    """Stationary randomized policy: sample sources in proportion to ``weights``."""

    name = "Random"

    def __init__(self, n_channels=1, weights=None):
        self.n_channels = n_channels
        self.weights = weights

    def _fit_tables(self, X):
        w = np.ones(self.n_sources_) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (self.n_sources_,) or np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive, one per source")
        self.probs_ = w / w.sum()

    def decide(self, aoi):
        if self.n_channels == self.n_sources_:
            return np.arange(self.n_sources_)
        picked = self._rng.choice(self.n_sources_, size=self.n_channels,
                                  replace=False, p=self.probs_)
        return np.sort(picked)

    _predict_one = decide


class MaxExpectedError(SchedulingPolicy):
    """Serve the sources whose own-packet prediction error is largest.

    Fitted on the per-source error curves ``v_m(d)``; the benefit of
    piggybacked content is ignored.
    """

    name = "MEE"

    def __init__(self, n_channels=1, tiebreak="index"):
        self.n_channels = n_channels
        self.tiebreak = tiebreak

    def _fit_tables(self, X):
        self.curves_ = X
        self._rows = np.arange(self.n_sources_)

    def _scores(self, aoi):
        return self.curves_[self._rows, np.asarray(aoi) - 1]


class EMAMaxWeight(SchedulingPolicy):
    """Max-weight rule on smoothed error levels with known piggyback structure.

    Each slot the expected error of every target is computed from the AoI
    vector and the carry probabilities; an exponential moving average
    (``ema_rate``) smooths it, and source ``m`` gets weight
    ``sum_n p[n, m] * (smoothed_n - v_n(1))``: the error it is expected to
    remove across all targets whose state its packet may carry.
    """

    name = "EMAM"

    def __init__(self, n_channels=1, ema_rate=0.1, tiebreak="index"):
        self.n_channels = n_channels
        self.ema_rate = ema_rate
        self.tiebreak = tiebreak

    def fit(self, X, y=None, piggyback_prob=None):
        X = check_penalty_matrix(X)
        M = X.shape[0]
        P = np.eye(M) if piggyback_prob is None else np.array(piggyback_prob, dtype=float)
        if P.shape != (M, M):
            raise ValueError("piggyback_prob must be M x M")
        if not 0 < self.ema_rate <= 1:
            raise ValueError("ema_rate must lie in (0, 1]")
        np.fill_diagonal(P, 1.0)
        self.piggyback_prob_ = P
        return super().fit(X)

    def _fit_tables(self, X):
        self.curves_ = X
        self._rows = np.arange(self.n_sources_)[:, None]

    def reset(self, rng=None):
        super().reset(rng)
        self.smoothed_ = None
        return self

    def expected_errors(self, aoi):
        """Expected error of every target given the AoI vector (carry draws unknown)."""
        aoi = np.asarray(aoi)
        order = np.argsort(aoi, kind="stable")
        carry = self.piggyback_prob_[:, order]          # [target, sender]
        miss = np.cumprod(1.0 - carry, axis=1)
        before = np.hstack([np.ones((self.n_sources_, 1)), miss[:, :-1]])
        v = self.curves_[self._rows, aoi[order][None, :] - 1]
        return np.sum(carry * before * v, axis=1)

    def _weights(self, aoi, smoothed):
        e = self.expected_errors(aoi)
        s = e if smoothed is None else (1 - self.ema_rate) * smoothed + self.ema_rate * e
        w = (s - self.curves_[:, 0]) @ self.piggyback_prob_
        return w, s

    def decide(self, aoi):
        w, self.smoothed_ = self._weights(aoi, self.smoothed_)
        return top_n(w, self.n_channels, self._tie_rng())

    def _predict_one(self, aoi):
        w, _ = self._weights(aoi, self.smoothed_)
        return top_n(w, self.n_channels, self._tie_rng())


class MaxGainFirst(SchedulingPolicy):
    """Maximum-gain-first scheduling with subgradient updates of the multiplier.

    Fitted on penalty tables ``f_m(d)``. Before each episode the per-source
    relaxed problems are solved at the current multiplier; inside the episode
    the ``n_channels`` sources with the largest gain index are served, and the
    discounted count of sources whose gain clears ``lam / gamma`` drives the
    multiplier update ``lam += (theta / k) * (count - N / (1 - gamma))``.
    """

    name = "MGF"

    def __init__(self, n_channels=1, gamma=0.7, theta=1.0, lam_init=0.0,
                 update_lambda=True, tiebreak="index", tol=1e-10):
        self.n_channels = n_channels
        self.gamma = gamma
        self.theta = theta
        self.lam_init = lam_init
        self.update_lambda = update_lambda
        self.tiebreak = tiebreak
        self.tol = tol

    def _fit_tables(self, X):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        self.penalties_ = X
        self._rows = np.arange(self.n_sources_)

    def reset(self, rng=None):
        super().reset(rng)
        self.lam_ = float(self.lam_init)
        self.episode_ = 1
        self.lam_history_ = [self.lam_]
        self._J = None
        self._solve()
        self._begin_episode()
        return self

    def _solve(self):
        self._J, _, _, _ = solve_values(self.penalties_, self.gamma, self.lam_,
                                        tol=self.tol, init=self._J)
        self.gains_ = gain_values(self._J)

    def _begin_episode(self):
        self._t = 0
        self._disc = 1.0
        self.subgrad_ = 0.0
        self._thresh = self.lam_ / self.gamma

    def _scores(self, aoi):
        return self.gains_[self._rows, np.asarray(aoi) - 1]

    def decide(self, aoi):
        alpha = self._scores(aoi)
        self.subgrad_ += self._disc * np.count_nonzero(alpha > self._thresh)
        self._disc *= self.gamma
        self._t += 1
        return top_n(alpha, self.n_channels, self._tie_rng())

    def end_episode(self, log=None):
        if self.update_lambda:
            step = self.theta / self.episode_
            self.lam_ += step * (self.subgrad_ - self.n_channels / (1 - self.gamma))
            self._solve()
        self.lam_history_.append(self.lam_)
        self.episode_ += 1
        self._begin_episode()


class CyclicTwoSource(SchedulingPolicy):
    """Deterministic period: source 0 for ``tau1`` slots, then source 1 for ``tau2``.

    Fit either with explicit ``tau1``/``tau2`` or with a dense joint penalty
    table of shape ``(2, B, B)``, in which case the best cycle is searched.
    """

    name = "Cyclic"

    def __init__(self, tau1=None, tau2=None, cap=200):
        self.n_channels = 1
        self.tau1 = tau1
        self.tau2 = tau2
        self.cap = cap

    def fit(self, X=None, y=None):
        from .penalty import JointPenalty

        if self.tau1 is not None and self.tau2 is not None:
            if self.tau1 < 0 or self.tau2 < 0 or self.tau1 + self.tau2 < 1:
                raise ValueError("cycle lengths must be nonnegative with a positive sum")
            self.result_ = CyclicSearchResult(int(self.tau1), int(self.tau2),
                                              float("nan"), 0, np.empty(0))
            B = 2 if X is None else np.asarray(X).shape[-1]
        else:
            X = np.asarray(X, dtype=float)
            if X.ndim != 3 or X.shape[0] != 2:
                raise ValueError("cyclic policy applies to two sources: need a (2, B, B) table")
            B = X.shape[1]
            self.result_ = cyclic_search(JointPenalty.from_table(X), B, self.cap)
        self.n_sources_, self.delta_bound_ = 2, B
        self.reset()
        return self

    def reset(self, rng=None):
        super().reset(rng)
        self._slot = 0
        return self

    def _at(self, slot):
        r = self.result_
        return 0 if slot % (r.tau1 + r.tau2) < r.tau1 else 1

    def decide(self, aoi=None):
        src = self._at(self._slot)
        self._slot += 1
        return np.array([src])

    def predict(self, X):
        """Decisions for consecutive slots starting at the current phase."""
        check_is_fitted(self, "result_")
        X = check_aoi(X, 2, self.delta_bound_)
        return np.vstack([to_indicator([self._at(self._slot + i)], 2)
                          for i in range(X.shape[0])])

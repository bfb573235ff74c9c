"""L-entropy quantities for quadratic loss on Gauss-Markov sources, plus
sample-based estimators for arbitrary losses."""
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .signal import stationary_variance


@dataclass(frozen=True)
class LossSpec:
    """Loss used by empirical estimators.

    ``kind="quadratic"`` uses the sample mean as the minimizing action.
    ``kind="sample"`` minimizes the average of ``loss_fn(y, a)`` over a finite
    candidate set (``actions``, or the observed targets when omitted).
    ``bound`` is the cap ``B`` applied on the bandit-feedback path; analytic
    routines ignore it.
    """
    kind: str = "quadratic"
    bound: Optional[float] = None
    loss_fn: Optional[Callable] = None
    actions: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.kind not in ("quadratic", "sample"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "sample" and self.loss_fn is None:
            raise ValueError("sample loss requires loss_fn")
        if self.bound is not None and self.bound <= 0:
            raise ValueError("loss bound must be positive")


@dataclass(frozen=True)
class ConditioningSet:
    """Freshest retained observation age of each state (``None`` = absent)."""
    ages: tuple

    def __post_init__(self):
        for a in self.ages:
            if a is not None and a < 1:
                raise ValueError("content ages must be >= 1")

    def with_content(self, n, age):
        """Add an observation of state ``n`` at ``age``, keeping the fresher one."""
        ages = list(self.ages)
        ages[n] = age if ages[n] is None else min(ages[n], age)
        return ConditioningSet(tuple(ages))


def geometric_error(a2, scale, d):
    """``scale * sum_{k<d} a2**k``: d-step AR(1) prediction error variance."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 1):
        raise ValueError("content age must be >= 1")
    if np.isclose(a2, 1.0):
        return scale * d
    return scale * (1.0 - a2 ** d) / (1.0 - a2)


def error_curve(model, m, ages):
    """MMSE of ``Z[m, t]`` from an observation of ``Z[m]`` aged ``ages``.

    Vectorized over ``ages``; this is the per-source curve ``v_m`` used by
    the penalty, policy and simulation layers. Exact for diagonal noise.
    """
    a2 = float(model.ar_coeffs[m]) ** 2
    return geometric_error(a2, float(model.noise_cov[m, m]), ages)


def h_l_quadratic_gaussian(model, m, cond):
    if not model.diagonal_noise:
        raise NotImplementedError(
            "closed form needs diagonal noise; use h_l_empirical on samples")
    age = cond.ages[m]
    if age is None:
        a2 = float(model.ar_coeffs[m]) ** 2
        if a2 >= 1:
            raise ValueError(f"unbounded entropy: no content for nonstationary source {m}")
        return float(stationary_variance(model, m))
    return float(error_curve(model, m, age))


def _bin_keys(cond, binning):
    if binning == "exact":
        return cond
    n_bins = int(binning)
    keys = np.empty(cond.shape, dtype=np.int64)
    for j in range(cond.shape[1]):
        edges = np.quantile(cond[:, j], np.linspace(0, 1, n_bins + 1)[1:-1])
        keys[:, j] = np.searchsorted(edges, cond[:, j], side="right")
    return keys


def h_l_empirical(targets, conditioning=None, loss=LossSpec(), binning="exact"):
    """Empirical L-conditional entropy.

    Args:
        targets: 1-D array of target samples.
        conditioning: ``(n, k)`` array of conditioning values, or None.
        loss: the :class:`LossSpec` to minimize.
        binning: ``"exact"`` groups identical conditioning rows; an integer
            bins each column into that many quantile bins; ``"linear"``
            (quadratic loss only) fits the least-squares affine predictor,
            which is the exact conditional mean for jointly Gaussian data.

    Returns:
        Occupancy-weighted average over bins of the minimal mean loss.
    """
    y = np.asarray(targets, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("empty dataset")
    n = y.size
    if conditioning is None:
        cond = np.zeros((n, 0))
    else:
        cond = np.asarray(conditioning, dtype=float).reshape(n, -1)

    if binning == "linear":
        if loss.kind != "quadratic":
            raise ValueError("linear binning is only valid for quadratic loss")
        design = np.column_stack([np.ones(n), cond])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        return float(np.mean((y - design @ coef) ** 2))

    if cond.shape[1] == 0:
        groups = np.zeros(n, dtype=np.int64)
    else:
        _, groups = np.unique(_bin_keys(cond, binning), axis=0, return_inverse=True)
        groups = groups.ravel()

    if loss.kind == "quadratic":
        counts = np.bincount(groups)
        means = np.bincount(groups, weights=y) / counts
        return float(np.mean((y - means[groups]) ** 2))

    actions = np.unique(y) if loss.actions is None else np.asarray(loss.actions, float)
    total = 0.0
    for g in np.unique(groups):
        yg = y[groups == g]
        costs = [np.mean(loss.loss_fn(yg, a)) for a in actions]
        total += min(costs) * yg.size
    return float(total / n)


@dataclass(frozen=True)
class EpsilonResult:
    """Correlation strength between a target and a fresh update of another source.

    ``eps_sq`` is the largest conditional mutual information found on the
    grid; ``truncation_error`` bounds what ages beyond ``delta_bound`` could add.
    """
    target: int
    source: int
    eps_sq: float
    delta_bound: int
    truncation_error: float
    cmi_grid: np.ndarray

    @property
    def value(self):
        return float(np.sqrt(self.eps_sq))


def cmi_fresh_update(model, m, n, ages):
    """I_L(Z_m; X_{n,t-1} | retained packets at ``ages``) for the piggyback model.

    A fresh packet from ``n`` carries ``Z_m`` with probability ``c``; then the
    error drops to ``v_m(1)``, otherwise the retained contents stay in force,
    so the information equals ``c * (g_m(ages) - v_m(1))``.
    """
    from .penalty import JointPenalty  # local import: penalty depends on this module

    joint = JointPenalty.from_model(model)
    c = model.carry_prob(m, n)
    return c * (joint.evaluate(m, ages) - float(error_curve(model, m, 1)))


def epsilon_mn(model, m, n, delta_bound=50):
    """``sqrt(max I_L)`` over the truncated AoI grid for target ``m``, source ``n``.

    The grid sweeps ``(age_m, age_n)`` over ``1..delta_bound`` with all other
    ages held at ``delta_bound``: the information is nondecreasing in every
    other age, so that slice attains the hypercube maximum.
    """
    if m == n:
        raise ValueError("epsilon is defined for distinct sources only")
    M = model.num_sources
    d = np.arange(1, delta_bound + 1)
    ages = np.full((delta_bound, delta_bound, M), delta_bound, dtype=float)
    ages[..., m] = d[:, None]
    ages[..., n] = d[None, :]
    cmi = cmi_fresh_update(model, m, n, ages)
    c = model.carry_prob(m, n)
    a2 = float(model.ar_coeffs[m]) ** 2
    if c == 0:
        trunc = 0.0
    elif a2 >= 1:
        trunc = float("inf")
    else:
        trunc = c * (stationary_variance(model, m) - float(error_curve(model, m, delta_bound)))
    return EpsilonResult(m, n, float(cmi.max()), delta_bound, float(trunc), cmi)

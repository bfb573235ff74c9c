"""Correlated Gauss-Markov sources with probabilistic piggybacking.

Each source ``m`` evolves as ``Z[m, t] = a[m] * Z[m, t-1] + W[m, t]`` with
``W[:, t] ~ N(0, Q)``. A packet emitted by source ``m`` always carries its
own state and, independently for every other source ``n``, carries ``Z[n, t]``
with probability ``piggyback_prob[n, m]``.

Sources are 0-indexed throughout the package, so "source 1" of the usual
two-class setup (the one that overhears everybody) is index 0.
"""
from dataclasses import dataclass, field

import numpy as np

STREAM_NAMES = ("noise", "piggyback", "policy")


@dataclass(frozen=True)
class GaussMarkovModel:
    ar_coeffs: np.ndarray
    noise_cov: np.ndarray
    piggyback_prob: np.ndarray
    _noise_factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.ar_coeffs, dtype=float))
        m = a.shape[0]
        q = np.asarray(self.noise_cov, dtype=float)
        p = np.asarray(self.piggyback_prob, dtype=float)
        if a.ndim != 1 or m < 1:
            raise ValueError("ar_coeffs must be a non-empty vector")
        if not np.all(np.isfinite(a)) or np.any(np.abs(a) > 1):
            raise ValueError("AR coefficients must be finite with |a_m| <= 1")
        if q.shape != (m, m) or p.shape != (m, m):
            raise ValueError(f"noise_cov and piggyback_prob must be {m}x{m}")
        if not np.allclose(q, q.T):
            raise ValueError("noise_cov must be symmetric")
        if np.any((p < 0) | (p > 1)):
            raise ValueError("piggyback probabilities must lie in [0, 1]")
        p = p.copy()
        np.fill_diagonal(p, 1.0)
        object.__setattr__(self, "ar_coeffs", a)
        object.__setattr__(self, "noise_cov", q)
        object.__setattr__(self, "piggyback_prob", p)
        object.__setattr__(self, "_noise_factor", _psd_factor(q))
        for arr in (a, q, p, self._noise_factor):
            arr.setflags(write=False)

    @property
    def num_sources(self) -> int:
        return self.ar_coeffs.shape[0]

    @property
    def diagonal_noise(self) -> bool:
        q = self.noise_cov
        return bool(np.allclose(q, np.diag(np.diag(q))))

    def carry_prob(self, target: int, sender: int) -> float:
        """Probability that ``sender``'s packet contains the state of ``target``."""
        return float(self.piggyback_prob[target, sender])


def _psd_factor(q):
    try:
        return np.linalg.cholesky(q)
    except np.linalg.LinAlgError:
        # Degenerate (e.g. zero) covariances are allowed for deterministic tests.
        w, v = np.linalg.eigh(q)
        if np.any(w < -1e-10 * max(1.0, np.abs(w).max())):
            raise ValueError("noise_cov must be positive semi-definite") from None
        return v * np.sqrt(np.clip(w, 0.0, None))


def default_model(num_sources=10, a2=(0.9, 0.7), p=0.6, noise_var=1.0):
    """Build the reference simulation model.

    ``a2`` lists squared AR coefficients; a shorter list is split into equal
    contiguous blocks (``(0.9, 0.7)`` with 10 sources gives five of each).
    Only source 0 piggybacks, carrying every other state with probability ``p``.
    """
    a2 = np.atleast_1d(np.asarray(a2, dtype=float))
    if a2.size != num_sources:
        blocks = np.array_split(np.arange(num_sources), a2.size)
        full = np.empty(num_sources)
        for val, idx in zip(a2, blocks):
            full[idx] = val
        a2 = full
    if np.any(a2 < 0):
        raise ValueError("squared AR coefficients must be nonnegative")
    pig = np.zeros((num_sources, num_sources))
    pig[1:, 0] = p
    return GaussMarkovModel(
        ar_coeffs=np.sqrt(a2),
        noise_cov=noise_var * np.eye(num_sources),
        piggyback_prob=pig,
    )


@dataclass(frozen=True)
class SignalState:
    time: int
    states: np.ndarray


@dataclass(frozen=True)
class UpdatePacket:
    source: int
    gen_time: int
    own_state: float
    piggyback: dict


def make_streams(seed):
    """Independent named generators so policies can share a sample path."""
    children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
    return {name: np.random.default_rng(s) for name, s in zip(STREAM_NAMES, children)}


def draw_noise(model, rng, size=None):
    shape = (model.num_sources,) if size is None else (size, model.num_sources)
    e = rng.standard_normal(shape)
    # Row-wise reduction (no BLAS) keeps single and batched draws bit-identical.
    return (e[..., None, :] * model._noise_factor).sum(axis=-1)


def step(model, state, rng):
    z = model.ar_coeffs * state.states + draw_noise(model, rng)
    if not np.all(np.isfinite(z)):
        raise FloatingPointError(f"non-finite state after t={state.time}: {z}")
    return SignalState(state.time + 1, z)


def emit_update(model, state, m, rng):
    """Packet generated by source ``m`` at ``state.time``.

    All ``M`` uniforms are consumed regardless of which entries are relevant,
    keeping the stream aligned across calls.
    """
    if not 0 <= m < model.num_sources:
        raise IndexError(f"source {m} out of range")
    u = rng.random(model.num_sources)
    carried = u < model.piggyback_prob[:, m]
    pig = {int(n): float(state.states[n])
           for n in np.flatnonzero(carried) if n != m}
    return UpdatePacket(m, state.time, float(state.states[m]), pig)


def stationary_variance(model, m):
    a2 = model.ar_coeffs[m] ** 2
    if a2 >= 1:
        raise ValueError(f"nonstationary source {m} (a^2={a2})")
    return model.noise_cov[m, m] / (1.0 - a2)


def stationary_cov(model):
    a = model.ar_coeffs
    denom = 1.0 - np.outer(a, a)
    if np.any(denom <= 0):
        raise ValueError("nonstationary source present")
    return model.noise_cov / denom


def simulate_states(model, n_steps, rng, initial=None):
    """Trajectory array of shape ``(n_steps + 1, M)``; row 0 is the initial state.

    Uses the same draws as repeated :func:`step` calls, so both paths agree
    bit-for-bit. Without ``initial`` the chain starts from its stationary law
    (or zero when a source has ``|a| = 1``).
    """
    M = model.num_sources
    if initial is None:
        if np.all(np.abs(model.ar_coeffs) < 1):
            initial = rng.standard_normal(M) @ _psd_factor(stationary_cov(model)).T
        else:
            initial = np.zeros(M)
    z = np.empty((n_steps + 1, M))
    z[0] = initial
    w = draw_noise(model, rng, n_steps)
    a = model.ar_coeffs
    for t in range(n_steps):
        z[t + 1] = a * z[t] + w[t]
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite state in trajectory")
    return z

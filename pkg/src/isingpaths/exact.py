"""Brute-force enumeration of the Ising Boltzmann distribution for L <= 4.

State ``k`` (an integer in ``[0, 2**(L*L))``) has spin ``+1`` at row-major
site ``i = y*L + x`` when bit ``i`` of ``k`` is set and ``-1`` otherwise.
All probability arithmetic stays in the log domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .ising import energy

MAX_SIDE = 4


class StateSpaceTooLarge(ValueError):
    pass


class NonFiniteModelError(FloatingPointError):
    """A model assigned a non-finite log-probability to some state."""


def all_states(L: int) -> np.ndarray:
    """Every configuration as an ``(2**N, L, L)`` int8 array of +-1."""
    N = L * L
    k = np.arange(2 ** N, dtype=np.int64)
    bits = (k[:, None] >> np.arange(N)) & 1
    return (2 * bits - 1).astype(np.int8).reshape(-1, L, L)


@dataclass(frozen=True)
class ExactDistribution:
    L: int
    beta: float
    log_weights: np.ndarray
    log_Z: float
    energies: np.ndarray

    @property
    def log_probs(self) -> np.ndarray:
        return self.log_weights - self.log_Z

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def states(self) -> np.ndarray:
        return all_states(self.L)


def enumerate_states(L: int, beta: float) -> ExactDistribution:
    if L not in (2, 4):
        if L > MAX_SIDE:
            raise StateSpaceTooLarge(f"L={L} has 2**{L * L} states; enumeration capped at L={MAX_SIDE}")
        raise ValueError(f"enumeration supports L in (2, 4), got {L}")
    E = energy(all_states(L)).astype(np.float64)
    log_w = -beta * E
    return ExactDistribution(L, float(beta), log_w, float(logsumexp(log_w)), E)


def energy_histogram(L: int) -> dict[int, int]:
    """Degeneracy of each energy level, counted with integer bit operations.

    Independent of :func:`isingpaths.ising.energy`: each bond contributes
    ``+1`` when its endpoint bits differ (XOR) and ``-1`` otherwise.
    """
    N = L * L
    k = np.arange(2 ** N, dtype=np.int64)
    unsatisfied = np.zeros_like(k)
    for i in range(N):
        y, x = divmod(i, L)
        for j in (y * L + (x + 1) % L, ((y + 1) % L) * L + x):
            unsatisfied += ((k >> i) ^ (k >> j)) & 1
    n_bonds = 2 * N
    E = 2 * unsatisfied - n_bonds
    levels, counts = np.unique(E, return_counts=True)
    return {int(e): int(c) for e, c in zip(levels, counts)}


def correlation_from_moments(pair: np.ndarray, site_mean: np.ndarray) -> np.ndarray:
    """Translation-averaged connected correlation.

    ``pair[dy, dx]`` is ``(1/N) sum_s <s_{x,y} s_{x+dx,y+dy}>`` and
    ``site_mean[y, x]`` is ``<s_{x,y}>``.  Returns ``G[dy, dx]`` with
    displacements taken modulo L (so ``G[-d]`` is the min-image partner).
    """
    L = site_mean.shape[0]
    G = np.empty((L, L))
    for dy in range(L):
        for dx in range(L):
            shifted = np.roll(site_mean, (-dy, -dx), axis=(0, 1))
            G[dy, dx] = pair[dy, dx] - (site_mean * shifted).mean()
    return G


def _pair_moments(states: np.ndarray, weights: np.ndarray) -> np.ndarray:
    L = states.shape[-1]
    s = states.astype(np.float64)
    pair = np.empty((L, L))
    for dy in range(L):
        for dx in range(L):
            shifted = np.roll(s, (-dy, -dx), axis=(1, 2))
            pair[dy, dx] = weights @ (s * shifted).mean(axis=(1, 2))
    return pair


def exact_observables(d: ExactDistribution) -> dict:
    p = d.probs
    states = d.states()
    N = d.L * d.L
    mag = np.abs(states.reshape(len(states), -1).sum(axis=1)) / N
    site_mean = np.tensordot(p, states.astype(np.float64), axes=1)
    pair = _pair_moments(states, p)
    return {
        "energy_per_site": float(p @ d.energies) / N,
        "abs_magnetization": float(p @ mag),
        "correlation_table": correlation_from_moments(pair, site_mean),
    }


def exact_entropy(d: ExactDistribution) -> float:
    """Shannon entropy in nats."""
    logp = d.log_probs
    return float(-(np.exp(logp) * logp).sum())


def model_kld(d: ExactDistribution, model_logprob: Callable[[np.ndarray], np.ndarray] | np.ndarray) -> float:
    """``KL(p || q)`` where ``q`` is given per state.

    ``model_logprob`` is either an array of ``log q`` indexed like the states
    or a callable mapping the ``(2**N, L, L)`` state array to that array.
    """
    logq = model_logprob(d.states()) if callable(model_logprob) else model_logprob
    logq = np.asarray(logq, dtype=np.float64)
    if logq.shape != d.log_weights.shape:
        raise ValueError("model log-probabilities must cover every state")
    if not np.isfinite(logq).all():
        bad = np.flatnonzero(~np.isfinite(logq))
        raise NonFiniteModelError(f"{len(bad)} states have non-finite model log-probability (first: {bad[0]})")
    logp = d.log_probs
    return float(np.exp(logp) @ (logp - logq))


def cross_entropy(d: ExactDistribution, logq: np.ndarray) -> float:
    """``-sum p log q``, the expected NLL of exact samples under the model."""
    return float(-(d.probs @ np.asarray(logq, dtype=np.float64)))

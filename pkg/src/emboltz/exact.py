"""Brute-force oracle for machines small enough to enumerate.

State index encoding is little-endian: bit i of the integer index is x_i.
With the first m units visible, index = code(v) + 2^m * code(h), so the
full probability table reshaped to (2^(n-m), 2^m) has one hidden
completion per row. Everything here is O(2^n) and refuses to run above
the enumeration cap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import BoltzmannMachine

ENUMERATION_CAP = 25
_CHUNK_BITS = 16  # states processed per block: 2^16 rows


class EnumerationCapError(ValueError):
    """Raised when an exact computation would enumerate more than 2^cap states."""


def _require_under_cap(n: int, cap: int):
    if n > cap:
        raise EnumerationCapError(
            f"n={n} exceeds the enumeration cap of {cap} units (2^{n} states)")


def state_bits(indices: np.ndarray, n: int) -> np.ndarray:
    """Decode integer state indices to (count, n) 0/1 float rows."""
    indices = np.asarray(indices, dtype=np.int64)
    return ((indices[:, None] >> np.arange(n)) & 1).astype(np.float64)


def state_index(X: np.ndarray) -> np.ndarray:
    """Encode (count, n) 0/1 rows to integer state indices."""
    X = np.asarray(X)
    n = X.shape[-1]
    weights = (1 << np.arange(n)).astype(np.int64)
    return (X.astype(np.int64) @ weights)


@dataclass
class ExactDistribution:
    """Full probability table of a machine, indexed by state code."""

    probs: np.ndarray
    log_z: float
    n: int
    m: int


def _chunked_energies(machine: BoltzmannMachine, total: int):
    """Yield (start, energies) blocks over all `total` state indices."""
    chunk = 1 << _CHUNK_BITS
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        X = state_bits(idx, machine.n)
        yield start, machine.energies(X), X


def exact_distribution(machine: BoltzmannMachine,
                       cap: int = ENUMERATION_CAP) -> ExactDistribution:
    """Enumerate all 2^n states: normalized probabilities and log Z."""
    _require_under_cap(machine.n, cap)
    total = 1 << machine.n
    neg_energy = np.empty(total)
    for start, E, _ in _chunked_energies(machine, total):
        neg_energy[start:start + E.size] = -E
    # log-sum-exp with max subtraction: safe for strongly biased machines
    peak = neg_energy.max()
    w = np.exp(neg_energy - peak)
    z = w.sum()
    log_z = peak + np.log(z)
    return ExactDistribution(probs=w / z, log_z=float(log_z), n=machine.n, m=machine.m)


def visible_marginal_exact(machine: BoltzmannMachine,
                           cap: int = ENUMERATION_CAP) -> np.ndarray:
    """p(v) over the 2^m visible configurations, summed over hidden states."""
    dist = exact_distribution(machine, cap)
    return marginalize_visible(dist)


def marginalize_visible(dist: ExactDistribution) -> np.ndarray:
    """Sum a full table over hidden completions (little-endian layout)."""
    return dist.probs.reshape(1 << (dist.n - dist.m), 1 << dist.m).sum(axis=0)


def kl_divergence(q: np.ndarray, p: np.ndarray) -> float:
    """KL(q || p) in nats; +inf when q puts mass where p has none.

    Both arguments must be normalized probability vectors of equal length.
    """
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape or q.ndim != 1:
        raise ValueError("q and p must be probability vectors of equal length")
    if np.any(q < 0) or np.any(p < 0):
        raise ValueError("probabilities must be nonnegative")
    if abs(q.sum() - 1.0) > 1e-9 or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("q and p must each sum to 1 within 1e-9")
    support = q > 0
    if np.any(p[support] == 0):
        return float("inf")
    qs = q[support]
    return float(np.sum(qs * (np.log(qs) - np.log(p[support]))))


def table_moments(probs: np.ndarray, n: int, m_limit: int):
    """First and pairwise moments of an arbitrary 2^n probability table."""
    if m_limit > n:
        raise ValueError(f"m_limit={m_limit} exceeds n={n}")
    total = 1 << n
    first = np.zeros(m_limit)
    pair = np.zeros((m_limit, m_limit))
    chunk = 1 << _CHUNK_BITS
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        X = state_bits(idx, n)[:, :m_limit]
        w = probs[start:start + idx.size]
        first += w @ X
        pair += (X * w[:, None]).T @ X
    return first, pair


def exact_moments(dist: ExactDistribution, m_limit: int):
    """Exact moments of the model distribution over unit indices < m_limit.

    Returns a MomentVector; the pairwise diagonal carries the first moments
    (x_i^2 = x_i for binary units) and no consumer reads it.
    """
    from .gradients import MomentVector

    first, pair = table_moments(dist.probs, dist.n, m_limit)
    return MomentVector(first=first, pair=pair)


def clamped_hidden_table(machine: BoltzmannMachine, v: np.ndarray,
                         cap: int = ENUMERATION_CAP) -> np.ndarray:
    """Exact p(h | v) over the 2^(n-m) hidden completions of one visible vector."""
    _require_under_cap(machine.n, cap)
    nh = machine.n_hidden
    H = state_bits(np.arange(1 << nh), nh)
    X = np.concatenate([np.broadcast_to(v, (1 << nh, machine.m)), H], axis=1)
    neg = -machine.energies(np.ascontiguousarray(X))
    neg -= neg.max()
    w = np.exp(neg)
    return w / w.sum()


def posterior_weighted_table(machine: BoltzmannMachine, q_visible: np.ndarray,
                             cap: int = ENUMERATION_CAP) -> np.ndarray:
    """Full table of q(v) p(h | v; theta): the E-step's target distribution.

    `q_visible` is any distribution over the 2^m visible configurations.
    """
    _require_under_cap(machine.n, cap)
    dist = exact_distribution(machine, cap)
    pv = marginalize_visible(dist)
    table = dist.probs.reshape(1 << (machine.n - machine.m), 1 << machine.m)
    ratio = np.where(pv > 0, q_visible / np.where(pv > 0, pv, 1.0), 0.0)
    return (table * ratio[None, :]).reshape(-1)


def empirical_visible_table(vectors: np.ndarray, m: int) -> np.ndarray:
    """Empirical distribution of a visible data set over the 2^m codes."""
    codes = state_index(vectors)
    table = np.bincount(codes, minlength=1 << m).astype(np.float64)
    return table / table.sum()

"""Boltzmann machine parameterization: energy, conditionals, persistence.

Units are binary (0/1). A machine with n units keeps the first m as the
visible layer and the remaining n - m as hidden. States are numpy vectors
of 0.0/1.0 floats (float64 so they feed matrix products without casts);
batches of states are (count, n) arrays, one state per row.

Energy of a state x:

    E(x) = -( sum_{i<j} w_ij x_i x_j + sum_i b_i x_i )

with W symmetric and zero-diagonal, so the interaction term is 0.5 x'Wx.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np


def sigmoid(z):
    """Logistic function, overflow-safe for large |z|."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid_scalar(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return ez / (1.0 + ez)


@dataclass
class BoltzmannMachine:
    """Pairwise binary energy model with m visible of n total units.

    W is the symmetric zero-diagonal interaction matrix, b the bias vector.
    The constructor validates the invariants; code that mutates W or b in
    place (the trainers do) is responsible for preserving them and can call
    :meth:`check_invariants` to re-verify.
    """

    n: int
    m: int
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.n < 1:
            raise ValueError("n must be positive")
        if not (1 <= self.m <= self.n):
            raise ValueError("m must satisfy 1 <= m <= n")
        if self.W.shape != (self.n, self.n):
            raise ValueError(f"W must be {self.n}x{self.n}, got {self.W.shape}")
        if self.b.shape != (self.n,):
            raise ValueError(f"b must have length {self.n}, got {self.b.shape}")
        self.check_invariants()

    def check_invariants(self):
        """Raise ValueError if W/b violate symmetry, zero diagonal, or finiteness."""
        if not np.all(np.isfinite(self.W)) or not np.all(np.isfinite(self.b)):
            raise ValueError("parameters must be finite")
        if np.any(np.diagonal(self.W) != 0.0):
            raise ValueError("W must have zero diagonal")
        if not np.array_equal(self.W, self.W.T):
            raise ValueError("W must be symmetric")

    @property
    def n_hidden(self) -> int:
        return self.n - self.m

    def copy(self) -> "BoltzmannMachine":
        return BoltzmannMachine(self.n, self.m, self.W.copy(), self.b.copy())

    def energy(self, x: np.ndarray) -> float:
        """E(x) for a single state vector."""
        x = _check_state(self.n, x)
        return float(-(0.5 * x @ self.W @ x + self.b @ x))

    def energies(self, X: np.ndarray) -> np.ndarray:
        """Row-wise energies of a (count, n) batch of states."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise ValueError(f"expected (count, {self.n}) state batch")
        return -(0.5 * np.einsum("ki,ki->k", X @ self.W, X) + X @ self.b)

    def conditional_prob(self, x: np.ndarray, i: int) -> float:
        """p(x_i = 1 | x_{-i}); independent of the current value of x_i."""
        x = _check_state(self.n, x)
        if not 0 <= i < self.n:
            raise IndexError(f"unit index {i} out of range for n={self.n}")
        return sigmoid_scalar(float(self.W[i] @ x + self.b[i]))

    def conditional_probs(self, X: np.ndarray, units: np.ndarray | slice) -> np.ndarray:
        """p(x_i = 1 | x_{-i}) for each row of X and each unit in `units`."""
        X = np.asarray(X, dtype=np.float64)
        return sigmoid(X @ self.W[:, units] + self.b[units])

    # -- persistence -------------------------------------------------------

    def save(self, path_or_file):
        """Write the model in the text format (round-trips exactly)."""
        if hasattr(path_or_file, "write"):
            self._write(path_or_file)
        else:
            with open(path_or_file, "w") as fh:
                self._write(fh)

    def _write(self, fh):
        fh.write(f"BM {self.n} {self.m}\n")
        fh.write(" ".join(repr(v) for v in self.b.tolist()) + "\n")
        for i in range(self.n - 1):
            row = self.W[i, i + 1:].tolist()
            fh.write(" ".join(repr(v) for v in row) + "\n")

    @classmethod
    def load(cls, path_or_file) -> "BoltzmannMachine":
        """Read a model saved by :meth:`save`. Malformed input raises ValueError."""
        if hasattr(path_or_file, "read"):
            return cls._read(path_or_file)
        with open(path_or_file) as fh:
            return cls._read(fh)

    @classmethod
    def _read(cls, fh) -> "BoltzmannMachine":
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "BM":
            raise ValueError("bad model header; expected 'BM <n> <m>'")
        try:
            n, m = int(header[1]), int(header[2])
        except ValueError as exc:
            raise ValueError("bad model header counts") from exc
        bias_line = fh.readline().split()
        if len(bias_line) != n:
            raise ValueError(f"expected {n} bias entries, got {len(bias_line)}")
        rest = fh.read().split()
        expected = n * (n - 1) // 2
        if len(rest) != expected:
            raise ValueError(f"expected {expected} interaction entries, got {len(rest)}")
        try:
            b = np.array([float(v) for v in bias_line])
            tri = np.array([float(v) for v in rest])
        except ValueError as exc:
            raise ValueError("non-numeric model entry") from exc
        W = np.zeros((n, n))
        pos = 0
        for i in range(n - 1):
            count = n - 1 - i
            W[i, i + 1:] = tri[pos:pos + count]
            pos += count
        W += W.T
        return cls(n, m, W, b)

    def dumps(self) -> str:
        buf = io.StringIO()
        self._write(buf)
        return buf.getvalue()

    @classmethod
    def loads(cls, text: str) -> "BoltzmannMachine":
        return cls._read(io.StringIO(text))


def _check_state(n: int, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError(f"state must have length {n}, got shape {x.shape}")
    return x


def validate_states(n: int, X: np.ndarray) -> np.ndarray:
    """Check a (count, n) batch holds only 0/1 entries; returns float64 view."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != n:
        raise ValueError(f"expected (count, {n}) state batch, got {X.shape}")
    if not np.all((X == 0.0) | (X == 1.0)):
        raise ValueError("states must be binary 0/1")
    return X


def init_random(n: int, m: int, seed: int, scale: float = 0.01) -> BoltzmannMachine:
    """Random machine: W from symmetrized N(0, scale^2) draws, b = 0."""
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    rng = np.random.default_rng(seed)
    A = rng.normal(0.0, scale, size=(n, n))
    W = (A + A.T) / 2.0
    np.fill_diagonal(W, 0.0)
    return BoltzmannMachine(n, m, W, np.zeros(n))


def init_random_rbm(m: int, n_hidden: int, seed: int, scale: float = 0.01) -> BoltzmannMachine:
    """Random bipartite machine: only visible-hidden interactions, b = 0."""
    machine = init_random(m + n_hidden, m, seed, scale)
    machine.W[:m, :m] = 0.0
    machine.W[m:, m:] = 0.0
    return machine

"""MCMC kernels: random-scan Gibbs, clamped hidden sampling, RBM block steps.

Batch variants operate on (count, n) state arrays in place; one row is one
chain. Random-scan batch kernels share the unit visiting order across rows
(the Bernoulli draws stay per-row independent), which keeps every row a
correct single-chain kernel while allowing one matrix product per update.
The per-chain variant used by the evaluation estimators draws independent
unit indices per row so that chains are fully independent and between-chain
standard errors are honest.

Variate budgets are fixed: each single-unit update consumes one uniform for
the unit choice (when the kernel chooses it) and one for the flip, so the
total consumption is a pure function of (steps, n, m).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import BoltzmannMachine, sigmoid, sigmoid_scalar
from .streams import rand_indices


@dataclass
class ChainState:
    """Persistent sampler states: one row per chain, length-n 0/1 floats."""

    states: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[0] < 1:
            raise ValueError("chain states must be a nonempty (count, n) array")

    @property
    def count(self) -> int:
        return self.states.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def copy(self) -> "ChainState":
        return ChainState(self.states.copy())


def init_chains(machine: BoltzmannMachine, count: int, rng: np.random.Generator) -> ChainState:
    """Fresh chains with every unit independently Bernoulli(1/2)."""
    if count < 1:
        raise ValueError("chain count must be positive")
    states = (rng.random((count, machine.n)) < 0.5).astype(np.float64)
    return ChainState(states)


@dataclass
class RbmLayout:
    """A machine verified to be bipartite: no visible-visible or hidden-hidden terms."""

    machine: BoltzmannMachine

    def __post_init__(self):
        m, W = self.machine.m, self.machine.W
        if self.machine.n_hidden == 0:
            raise ValueError("bipartite layout needs at least one hidden unit")
        if np.any(W[:m, :m] != 0.0) or np.any(W[m:, m:] != 0.0):
            raise ValueError("machine has intralayer interactions; not bipartite")

    @property
    def m(self) -> int:
        return self.machine.m

    @property
    def n(self) -> int:
        return self.machine.n

    @property
    def n_hidden(self) -> int:
        return self.machine.n_hidden

    @property
    def w_vh(self) -> np.ndarray:
        return self.machine.W[:self.m, self.m:]

    @property
    def b_v(self) -> np.ndarray:
        return self.machine.b[:self.m]

    @property
    def b_h(self) -> np.ndarray:
        return self.machine.b[self.m:]


def is_bipartite(machine: BoltzmannMachine) -> bool:
    m = machine.m
    if machine.n_hidden == 0:
        return False
    return not (np.any(machine.W[:m, :m] != 0.0) or np.any(machine.W[m:, m:] != 0.0))


# -- single-state kernels ---------------------------------------------------

def gibbs_update(machine: BoltzmannMachine, state: np.ndarray, i: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Resample unit i from its conditional; consumes exactly one variate."""
    p = machine.conditional_prob(state, i)
    out = np.array(state, dtype=np.float64)
    out[i] = 1.0 if rng.random() < p else 0.0
    return out


def sample_hidden_given_visible(machine_or_layout, visible: np.ndarray, steps: int,
                                rng: np.random.Generator,
                                init: np.ndarray | None = None) -> np.ndarray:
    """Sample hidden units with the visible slice clamped; returns the full state.

    For a general machine this runs `steps` random-scan updates over the
    hidden indices (uniform with replacement), warm-started from `init` when
    given, else from independent Bernoulli(1/2). For an RbmLayout the
    conditional factorizes and a single exact block sample is taken.
    """
    if isinstance(machine_or_layout, RbmLayout):
        layout = machine_or_layout
        V = _check_visible(layout.machine, visible)[None, :]
        H = rbm_sample_hidden(layout, V, rng)
        return np.concatenate([V[0], H[0]])
    machine = machine_or_layout
    v = _check_visible(machine, visible)
    nh = machine.n_hidden
    if nh == 0:
        return v.copy()
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.empty(machine.n)
    x[:machine.m] = v
    if init is not None:
        init = np.asarray(init, dtype=np.float64)
        if init.shape != (nh,):
            raise ValueError(f"init must have length {nh}")
        x[machine.m:] = init
    else:
        x[machine.m:] = (rng.random(nh) < 0.5).astype(np.float64)
    units = machine.m + rand_indices(rng, nh, steps)
    for i in units:
        field = machine.W[i] @ x + machine.b[i]
        x[i] = 1.0 if rng.random() < sigmoid_scalar(field) else 0.0
    return x


def gibbs_sweep_all(machine: BoltzmannMachine, state: np.ndarray, sweeps: int,
                    rng: np.random.Generator, scan: str = "random") -> np.ndarray:
    """Advance one state by `sweeps` full sweeps (n single-unit updates each).

    Nothing is clamped. scan="systematic" visits units 0..n-1 in order
    instead of uniformly at random.
    """
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    x = np.array(state, dtype=np.float64)
    n = machine.n
    if scan == "random":
        units = rand_indices(rng, n, sweeps * n)
    elif scan == "systematic":
        units = np.tile(np.arange(n), sweeps)
    else:
        raise ValueError(f"unknown scan mode {scan!r}")
    for i in units:
        field = machine.W[i] @ x + machine.b[i]
        x[i] = 1.0 if rng.random() < sigmoid_scalar(field) else 0.0
    return x


# -- batch kernels ----------------------------------------------------------

def _check_visible(machine, visible):
    visible = np.asarray(visible, dtype=np.float64)
    if visible.shape != (machine.m,):
        raise ValueError(f"visible vector must have length {machine.m}")
    return visible


def sweep_states(machine: BoltzmannMachine, X: np.ndarray, sweeps: int,
                 rng: np.random.Generator, scan: str = "random") -> np.ndarray:
    """In-place batch analog of gibbs_sweep_all with a shared visiting order."""
    n = machine.n
    if scan == "random":
        units = rand_indices(rng, n, sweeps * n)
    elif scan == "systematic":
        units = np.tile(np.arange(n), sweeps)
    else:
        raise ValueError(f"unknown scan mode {scan!r}")
    W, b = machine.W, machine.b
    count = X.shape[0]
    for i in units:
        p = sigmoid(X @ W[i] + b[i])
        X[:, i] = (rng.random(count) < p).astype(np.float64)
    return X


def perchain_sweep(machine: BoltzmannMachine, X: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    """One full random-scan sweep with independent unit choices per row."""
    n = machine.n
    W, b = machine.W, machine.b
    count = X.shape[0]
    rows = np.arange(count)
    for _ in range(n):
        units = rand_indices(rng, n, count)
        fields = np.einsum("cj,cj->c", X, W[units]) + b[units]
        X[rows, units] = (rng.random(count) < sigmoid(fields)).astype(np.float64)
    return X


def sample_hidden_batch(machine_or_layout, V: np.ndarray, steps: int,
                        rng: np.random.Generator,
                        init: np.ndarray | None = None) -> np.ndarray:
    """Clamped hidden sampling for a whole (count, m) visible batch at once.

    General machines share the hidden visiting order across rows; RBM layouts
    take the exact one-shot block sample. Returns a fresh (count, n) array.
    """
    if isinstance(machine_or_layout, RbmLayout):
        layout = machine_or_layout
        V = np.asarray(V, dtype=np.float64)
        H = rbm_sample_hidden(layout, V, rng)
        return np.concatenate([V, H], axis=1)
    machine = machine_or_layout
    V = np.asarray(V, dtype=np.float64)
    count = V.shape[0]
    nh = machine.n_hidden
    X = np.empty((count, machine.n))
    X[:, :machine.m] = V
    if nh == 0:
        return X
    if init is not None:
        X[:, machine.m:] = init
    else:
        X[:, machine.m:] = (rng.random((count, nh)) < 0.5).astype(np.float64)
    W, b = machine.W, machine.b
    units = machine.m + rand_indices(rng, nh, steps)
    for i in units:
        p = sigmoid(X @ W[i] + b[i])
        X[:, i] = (rng.random(count) < p).astype(np.float64)
    return X


# -- RBM block sampling -----------------------------------------------------

def rbm_sample_hidden(layout: RbmLayout, V: np.ndarray,
                      rng: np.random.Generator) -> np.ndarray:
    """Exact block draw of all hidden units given (count, m) visibles."""
    p = sigmoid(V @ layout.w_vh + layout.b_h)
    return (rng.random(p.shape) < p).astype(np.float64)


def rbm_sample_visible(layout: RbmLayout, H: np.ndarray,
                       rng: np.random.Generator) -> np.ndarray:
    """Exact block draw of all visible units given (count, n-m) hiddens."""
    p = sigmoid(H @ layout.w_vh.T + layout.b_v)
    return (rng.random(p.shape) < p).astype(np.float64)


def rbm_block_step(layout: RbmLayout, state: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    """One full Gibbs step in two half-steps: visibles given hidden, then
    hiddens given the fresh visibles (Hinton's scheme)."""
    squeeze = state.ndim == 1
    X = np.atleast_2d(np.asarray(state, dtype=np.float64)).copy()
    m = layout.m
    X[:, :m] = rbm_sample_visible(layout, X[:, m:], rng)
    X[:, m:] = rbm_sample_hidden(layout, X[:, :m], rng)
    return X[0] if squeeze else X


def rbm_block_step_streams(layout: RbmLayout, X: np.ndarray,
                           rng_v: np.random.Generator,
                           rng_h: np.random.Generator) -> np.ndarray:
    """Block step with separate streams per half-step (seed-sharing protocol)."""
    m = layout.m
    X[:, :m] = rbm_sample_visible(layout, X[:, m:], rng_v)
    X[:, m:] = rbm_sample_hidden(layout, X[:, :m], rng_h)
    return X

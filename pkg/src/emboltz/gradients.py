"""Gradient estimators for fitting a machine to complete (fully observed) data.

Three interchangeable estimators drive the training loop's M-step: CD-k
(negative chains restarted at the data), PCD (persistent negative chains),
and the pseudo-likelihood gradient (deterministic, no sampling). The
Hinton-style RBM CD path is kept separate so its equivalence with the
CD-through-completion composition can be checked draw for draw.

Gradients follow the ascent convention: parameters move as W += lr * dW.
dW entries are derivatives with respect to the symmetric pair parameter
w_ij (both matrix entries move together when applied). When a bipartite
layout is supplied, dW is masked to the visible-hidden block so that RBM
structure is preserved under training.

Seed-sharing protocol: estimators take a SeedTree and derive the draw for
chain step s from key (PHASE_VISIBLE, s) or (PHASE_HIDDEN, s), with
(PHASE_HIDDEN, 0) reserved for the data-completion draw. Any two samplers
handed the same tree therefore consume identical variates at matching
steps — the basis of the bitwise CD equivalence tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import BoltzmannMachine, sigmoid
from .sampling import (ChainState, RbmLayout, rbm_block_step_streams,
                       rbm_sample_hidden, rbm_sample_visible, sweep_states)
from .streams import SeedTree

PHASE_HIDDEN = 0
PHASE_VISIBLE = 1
PHASE_SCAN = 2

_FRECHET_SLACK = 1e-9


@dataclass
class MomentVector:
    """First moments and pairwise moments over a set of units.

    `pair` is symmetric; its diagonal duplicates `first` (x_i^2 = x_i for
    binary units) and is never read by any consumer.
    """

    first: np.ndarray
    pair: np.ndarray

    def __post_init__(self):
        self.first = np.asarray(self.first, dtype=np.float64)
        self.pair = np.asarray(self.pair, dtype=np.float64)
        d = self.first.shape[0]
        if self.pair.shape != (d, d):
            raise ValueError("pair matrix shape must match first moments")

    @property
    def size(self) -> int:
        return self.first.shape[0]

    def check_bounds(self):
        """Verify moment consistency: [0,1] range and the Frechet upper bound."""
        if np.any(self.first < -_FRECHET_SLACK) or np.any(self.first > 1 + _FRECHET_SLACK):
            raise ValueError("first moments out of [0, 1]")
        cap = np.minimum(self.first[:, None], self.first[None, :])
        off = ~np.eye(self.size, dtype=bool)
        if np.any(self.pair[off] > cap[off] + _FRECHET_SLACK):
            raise ValueError("pairwise moment exceeds min of its marginals")

    @classmethod
    def from_states(cls, X: np.ndarray) -> "MomentVector":
        X = np.asarray(X, dtype=np.float64)
        count = X.shape[0]
        return cls(first=X.mean(axis=0), pair=(X.T @ X) / count)


@dataclass
class GradientUpdate:
    """Parameter increment: symmetric zero-diagonal dW and bias vector db."""

    dW: np.ndarray
    db: np.ndarray

    def __post_init__(self):
        self.dW = np.asarray(self.dW, dtype=np.float64)
        self.db = np.asarray(self.db, dtype=np.float64)
        n = self.db.shape[0]
        if self.dW.shape != (n, n):
            raise ValueError("dW must be square and match db")

    def check_invariants(self):
        if not (np.all(np.isfinite(self.dW)) and np.all(np.isfinite(self.db))):
            raise ValueError("gradient entries must be finite")
        if np.any(np.diagonal(self.dW) != 0.0):
            raise ValueError("dW diagonal must be zero")
        if not np.array_equal(self.dW, self.dW.T):
            raise ValueError("dW must be symmetric")

    def max_abs(self) -> float:
        return float(max(np.abs(self.dW).max(), np.abs(self.db).max()))


def _states_of(batch) -> np.ndarray:
    X = batch.states if hasattr(batch, "states") else np.asarray(batch, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("batch must be a nonempty (count, n) state array")
    return X


def data_moments(batch) -> MomentVector:
    """Empirical first and pairwise moments of a complete-data batch."""
    return MomentVector.from_states(_states_of(batch))


def _moment_difference(pos: MomentVector, neg: MomentVector,
                       layout: RbmLayout | None) -> GradientUpdate:
    dW = pos.pair - neg.pair
    np.fill_diagonal(dW, 0.0)
    if layout is not None:
        m = layout.m
        dW[:m, :m] = 0.0
        dW[m:, m:] = 0.0
    return GradientUpdate(dW=dW, db=pos.first - neg.first)


def _advance_rbm_chain(layout: RbmLayout, X: np.ndarray, k: int, seeds: SeedTree) -> np.ndarray:
    for s in range(1, k + 1):
        rbm_block_step_streams(layout, X,
                               seeds.rng(PHASE_VISIBLE, s),
                               seeds.rng(PHASE_HIDDEN, s))
    return X


def cd_gradient(machine: BoltzmannMachine, batch, k: int, seeds: SeedTree,
                layout: RbmLayout | None = None) -> GradientUpdate:
    """CD-k: negative chains start at the batch and run k steps.

    General machines advance by k full random-scan sweeps; with a bipartite
    layout (batch rows holding visible+hidden pairs) the chain advances by
    k two-half-step block moves instead.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    X = _states_of(batch)
    pos = MomentVector.from_states(X)
    chain = X.copy()
    if layout is not None:
        _advance_rbm_chain(layout, chain, k, seeds)
    else:
        sweep_states(machine, chain, k, seeds.rng(PHASE_SCAN))
    return _moment_difference(pos, MomentVector.from_states(chain), layout)


def pcd_gradient(machine: BoltzmannMachine, batch, chains: ChainState, k: int,
                 seeds: SeedTree, layout: RbmLayout | None = None
                 ) -> tuple[GradientUpdate, ChainState]:
    """PCD: the negative phase advances persistent chains, never the batch.

    Returns the gradient together with the advanced chains; callers thread
    the returned ChainState into the next call.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    X = _states_of(batch)
    if chains.n != machine.n:
        raise ValueError(f"chains were built for n={chains.n}, machine has n={machine.n}")
    pos = MomentVector.from_states(X)
    advanced = chains.copy()
    if layout is not None:
        _advance_rbm_chain(layout, advanced.states, k, seeds)
    else:
        sweep_states(machine, advanced.states, k, seeds.rng(PHASE_SCAN))
    grad = _moment_difference(pos, MomentVector.from_states(advanced.states), layout)
    return grad, advanced


def pseudo_log_likelihood(machine: BoltzmannMachine, batch) -> float:
    """Mean over the batch of sum_i log p(x_i | x_{-i}); the PE objective."""
    X = _states_of(batch)
    fields = X @ machine.W + machine.b
    # log p(x_i|x_-i) = x_i*field - softplus(field), stable via logaddexp
    ll = X * fields - np.logaddexp(0.0, fields)
    return float(ll.sum(axis=1).mean())


def pl_gradient(machine: BoltzmannMachine, batch,
                layout: RbmLayout | None = None) -> GradientUpdate:
    """Exact gradient of the mean log-pseudo-likelihood. Deterministic.

    db_i averages x_i - sigma_i(x); dW_ij averages
    (x_i - sigma_i(x)) x_j + (x_j - sigma_j(x)) x_i, the derivative with
    respect to the shared symmetric parameter w_ij.
    """
    X = _states_of(batch)
    count = X.shape[0]
    resid = X - sigmoid(X @ machine.W + machine.b)
    R = (resid.T @ X) / count
    dW = R + R.T
    np.fill_diagonal(dW, 0.0)
    if layout is not None:
        m = layout.m
        dW[:m, :m] = 0.0
        dW[m:, m:] = 0.0
    return GradientUpdate(dW=dW, db=resid.mean(axis=0))


def rbm_cd_gradient_hinton(layout: RbmLayout, visible_batch, k: int, seeds: SeedTree,
                           analytic_hidden: bool = True,
                           h0_rng: np.random.Generator | None = None) -> GradientUpdate:
    """Hinton's RBM CD-k on a visible batch, as a full-size GradientUpdate.

    Positive phase at the data, negative phase at the k-step end of the
    two-half-step chain. With analytic_hidden the hidden factors enter
    through their conditional probabilities (v_i * p(h_j=1|v) in both
    phases); otherwise sampled hidden states are used, drawn from the
    seed-sharing streams so the estimator is draw-for-draw comparable with
    the completion-based CD path. `h0_rng` overrides the stream for the
    initial hidden draw (the trainers hand in their completion stream here).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    V0 = np.asarray(visible_batch.vectors if hasattr(visible_batch, "vectors")
                    else visible_batch, dtype=np.float64)
    if V0.ndim != 2 or V0.shape[1] != layout.m:
        raise ValueError(f"visible batch must be (count, {layout.m})")
    count = V0.shape[0]
    m, n = layout.m, layout.n

    if h0_rng is None:
        h0_rng = seeds.rng(PHASE_HIDDEN, 0)
    H0 = rbm_sample_hidden(layout, V0, h0_rng)
    chain = np.concatenate([V0, H0], axis=1)
    for s in range(1, k):
        rbm_block_step_streams(layout, chain,
                               seeds.rng(PHASE_VISIBLE, s), seeds.rng(PHASE_HIDDEN, s))
    # final step: the hidden half is only sampled when the estimator needs it
    chain[:, :m] = rbm_sample_visible(layout, chain[:, m:], seeds.rng(PHASE_VISIBLE, k))
    Vk = chain[:, :m]

    if analytic_hidden:
        Hpos = sigmoid(V0 @ layout.w_vh + layout.b_h)
        Hneg = sigmoid(Vk @ layout.w_vh + layout.b_h)
    else:
        Hpos = H0
        Hneg = rbm_sample_hidden(layout, Vk, seeds.rng(PHASE_HIDDEN, k))

    # divide each phase before subtracting: entry-for-entry the same float
    # sequence as the moment-difference path, so the identity is bitwise
    cross = V0.T @ Hpos / count - Vk.T @ Hneg / count
    dW = np.zeros((n, n))
    dW[:m, m:] = cross
    dW[m:, :m] = cross.T
    db = np.empty(n)
    db[:m] = (V0.mean(axis=0) - Vk.mean(axis=0))
    db[m:] = (Hpos.mean(axis=0) - Hneg.mean(axis=0))
    return GradientUpdate(dW=dW, db=db)

"""Training loops: the EM-style outer iteration and the per-batch RBM baseline.

One outer iteration of the EM-style loop recompletes the hidden units of
the whole data set under the current parameters (Monte Carlo E-step), then
applies one of the complete-data gradient estimators over mini-batches
(M-step). The baseline loop is the conventional RBM procedure: hidden
states are drawn per mini-batch right before each update, with no outer
completion pass. The difference between the two on small batches is real
and measurable; at one batch per epoch they coincide draw for draw.

Stream layout (all randomness below one SeedTree rooted at config.seed):

    (0,)            first-epoch hidden completions (general machines)
    (1,)            persistent chain initialization
    (2, e, 1)       epoch-e mini-batch shuffle
    (2, e, 2, j)    epoch-e batch-j estimator subtree (chain half-steps)
    (2, e, 3)       epoch-e E-step draw; (2, e, 3, j) per-batch redraws
                    in the baseline when there is more than one batch
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .datasets import BinaryDataSet, batch_indices
from .gradients import (GradientUpdate, cd_gradient, pcd_gradient, pl_gradient,
                        rbm_cd_gradient_hinton)
from .model import BoltzmannMachine
from .sampling import (ChainState, RbmLayout, init_chains, is_bipartite,
                       rbm_sample_hidden, sample_hidden_batch)
from .streams import SeedTree

EM_METHODS = ("em-cd", "em-pcd", "em-pe")
BASELINE_METHODS = ("cd", "pcd")


class TrainingDiverged(RuntimeError):
    """Parameters left the finite range during training."""

    def __init__(self, epoch: int, batch_index: int, max_update: float):
        self.epoch = epoch
        self.batch_index = batch_index
        self.max_update = max_update
        super().__init__(
            f"non-finite parameters at epoch {epoch}, mini-batch {batch_index} "
            f"(max |update entry| = {max_update:g}); lower the learning rate")


@dataclass
class TrainConfig:
    method: str = "em-pcd"
    k: int = 1
    batch_size: int = 100
    learning_rate: float = 0.007
    epochs: int = 100
    e_step_multiplier: int = 1
    eval_every: int = 10
    seed: int = 0
    lr_policy: str = "constant"
    lr_tau: float = 1000.0
    shuffle: bool = True  # ordered batching makes the CD/EM-CD identity testable

    def validate(self, data_count: int):
        if self.method not in EM_METHODS + BASELINE_METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 1 <= self.batch_size <= data_count:
            raise ValueError(f"batch_size must be in [1, {data_count}]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.e_step_multiplier < 1:
            raise ValueError("e_step_multiplier must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.lr_policy not in ("constant", "inverse"):
            raise ValueError(f"unknown lr_policy {self.lr_policy!r}")


def lr_schedule(alpha0: float, t: int, policy: str = "constant",
                tau: float = 1000.0) -> float:
    """Learning rate for (0-based) epoch t."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if policy == "constant":
        return alpha0
    if policy == "inverse":
        return alpha0 / (1.0 + t / tau)
    raise ValueError(f"unknown lr_policy {policy!r}")


@dataclass
class CompleteDataSet:
    """Data vectors paired with their current hidden completions (K, n)."""

    states: np.ndarray
    m: int

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2:
            raise ValueError("states must be (K, n)")
        if not 1 <= self.m <= self.states.shape[1]:
            raise ValueError("visible count out of range")

    @property
    def visible(self) -> np.ndarray:
        return self.states[:, :self.m]

    @property
    def hidden(self) -> np.ndarray:
        return self.states[:, self.m:]


@dataclass
class TraceRow:
    epoch: int
    alpha: float
    wall_time: float
    metrics: dict = field(default_factory=dict)


@dataclass
class TrainTrace:
    rows: list = field(default_factory=list)

    def add(self, row: TraceRow):
        if self.rows and row.epoch <= self.rows[-1].epoch:
            raise ValueError("trace epochs must be strictly increasing")
        self.rows.append(row)

    def column(self, name: str) -> list:
        return [r.metrics.get(name) for r in self.rows]

    def epochs(self) -> list[int]:
        return [r.epoch for r in self.rows]


def _apply(machine: BoltzmannMachine, grad: GradientUpdate, alpha: float,
           epoch: int, batch_index: int):
    # overflow surfaces through the finiteness check, not a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        machine.W += alpha * grad.dW
        machine.b += alpha * grad.db
    if not (np.all(np.isfinite(machine.W)) and np.all(np.isfinite(machine.b))):
        raise TrainingDiverged(epoch, batch_index, grad.max_abs())


def _epoch_batches(count: int, config: TrainConfig, tree: SeedTree, epoch0: int):
    if config.shuffle:
        return batch_indices(count, config.batch_size, tree.rng(2, epoch0, 1))
    order = np.arange(count)
    return [order[s:s + config.batch_size] for s in range(0, count, config.batch_size)]


def _should_eval(t: int, config: TrainConfig) -> bool:
    return t % config.eval_every == 0 or t == config.epochs


def train_emlike(machine: BoltzmannMachine, data: BinaryDataSet, config: TrainConfig,
                 evaluator=None) -> tuple[BoltzmannMachine, TrainTrace]:
    """EM-style training: outer completion pass, mini-batch gradient updates.

    `evaluator`, when given, is called as evaluator(epoch, machine,
    machine_at_epoch_start) at epoch 0 and after every eval_every-th epoch,
    and must return a dict of metric values for the trace. The input machine
    is not modified; the trained copy is returned.
    """
    config.validate(data.count)
    if config.method not in EM_METHODS:
        raise ValueError(f"train_emlike expects an EM method, got {config.method!r}")
    if data.m != machine.m:
        raise ValueError(f"data has {data.m} visible units, machine has {machine.m}")

    machine = machine.copy()
    layout = RbmLayout(machine) if is_bipartite(machine) else None
    tree = SeedTree(config.seed)
    K, m, nh = data.count, machine.m, machine.n_hidden

    complete = CompleteDataSet(np.empty((K, machine.n)), m)
    complete.states[:, :m] = data.as_float()
    if nh > 0 and layout is None:
        complete.states[:, m:] = (tree.rng(0).random((K, nh)) < 0.5).astype(np.float64)

    chains: ChainState | None = None
    if config.method == "em-pcd":
        chains = init_chains(machine, config.batch_size, tree.rng(1))

    trace = TrainTrace()
    start = time.perf_counter()
    if evaluator is not None:
        trace.add(TraceRow(0, lr_schedule(config.learning_rate, 0, config.lr_policy,
                                          config.lr_tau),
                           time.perf_counter() - start,
                           dict(evaluator(0, machine, None))))

    for t in range(1, config.epochs + 1):
        e = t - 1
        alpha = lr_schedule(config.learning_rate, e, config.lr_policy, config.lr_tau)
        snapshot = machine.copy() if (evaluator is not None and _should_eval(t, config)) else None

        if nh > 0:
            if layout is not None:
                complete.states[:, m:] = rbm_sample_hidden(layout, complete.visible,
                                                           tree.rng(2, e, 3))
            else:
                steps = config.e_step_multiplier * nh
                complete.states[:] = sample_hidden_batch(
                    machine, complete.visible, steps, tree.rng(2, e, 3),
                    init=complete.hidden)

        for j, idx in enumerate(_epoch_batches(K, config, tree, e)):
            seeds = tree.child(2, e, 2, j)
            batch = complete.states[idx]
            if config.method == "em-cd":
                grad = cd_gradient(machine, batch, config.k, seeds, layout)
            elif config.method == "em-pcd":
                grad, chains = pcd_gradient(machine, batch, chains, config.k,
                                            seeds, layout)
            else:
                grad = pl_gradient(machine, batch, layout)
            _apply(machine, grad, alpha, t, j)

        if evaluator is not None and _should_eval(t, config):
            trace.add(TraceRow(t, alpha, time.perf_counter() - start,
                               dict(evaluator(t, machine, snapshot))))
    return machine, trace


def train_rbm_baseline(machine: BoltzmannMachine, data: BinaryDataSet,
                       config: TrainConfig, evaluator=None
                       ) -> tuple[BoltzmannMachine, TrainTrace]:
    """Conventional RBM training: hidden states drawn per mini-batch.

    method "cd" runs Hinton's CD-k update on each mini-batch; "pcd" keeps
    persistent negative chains. At batch_size == K with shuffling off this
    reproduces one-batch EM training update for update.
    """
    config.validate(data.count)
    if config.method not in BASELINE_METHODS:
        raise ValueError(f"train_rbm_baseline expects 'cd' or 'pcd', got {config.method!r}")
    if data.m != machine.m:
        raise ValueError(f"data has {data.m} visible units, machine has {machine.m}")
    if not is_bipartite(machine):
        raise ValueError("the baseline trainer requires a bipartite machine")

    machine = machine.copy()
    layout = RbmLayout(machine)
    tree = SeedTree(config.seed)
    K = data.count
    V = data.as_float()

    chains: ChainState | None = None
    if config.method == "pcd":
        chains = init_chains(machine, config.batch_size, tree.rng(1))

    trace = TrainTrace()
    start = time.perf_counter()
    if evaluator is not None:
        trace.add(TraceRow(0, lr_schedule(config.learning_rate, 0, config.lr_policy,
                                          config.lr_tau),
                           time.perf_counter() - start,
                           dict(evaluator(0, machine, None))))

    for t in range(1, config.epochs + 1):
        e = t - 1
        alpha = lr_schedule(config.learning_rate, e, config.lr_policy, config.lr_tau)
        snapshot = machine.copy() if (evaluator is not None and _should_eval(t, config)) else None

        index_batches = _epoch_batches(K, config, tree, e)
        single = len(index_batches) == 1
        for j, idx in enumerate(index_batches):
            seeds = tree.child(2, e, 2, j)
            h_rng = tree.rng(2, e, 3) if single else tree.rng(2, e, 3, j)
            if config.method == "cd":
                grad = rbm_cd_gradient_hinton(layout, V[idx], config.k, seeds,
                                              analytic_hidden=False, h0_rng=h_rng)
            else:
                H = rbm_sample_hidden(layout, V[idx], h_rng)
                batch = np.concatenate([V[idx], H], axis=1)
                grad, chains = pcd_gradient(machine, batch, chains, config.k,
                                            seeds, layout)
            _apply(machine, grad, alpha, t, j)

        if evaluator is not None and _should_eval(t, config):
            trace.add(TraceRow(t, alpha, time.perf_counter() - start,
                               dict(evaluator(t, machine, snapshot))))
    return machine, trace

"""Model quality measurement: avg-error, moment estimators, AIS, log-probability.

The headline statistic is avg-error: the sum of squared differences between
data and model first/pairwise moments over the visible units,

    sum_{i<j<=m} (p_ij - q_ij)^2 + sum_{i<=m} (p_i - q_i)^2.

Data moments come from indicator counts. Model moments come either from the
enumeration oracle (small machines) or from Gibbs chains with the
conditional-probability (Rao-Blackwellized) estimator

    p_i  ~= mean_k p(x_i=1 | x_-i^(k))
    p_ij ~= mean_k p(x_i=1 | x_-i^(k)) x_j^(k),

which costs one conditional per kept sample per visible unit, O(R m n)
arithmetic overall. Difference-fraction statistics count, for each
threshold, the ordered pairs i != j plus the m singleton terms whose
absolute moment difference clears it, divided by m^2 (the same m^2
normalization the mean-absolute-difference 'avg' statistic uses, so equal
moment vectors score exactly 1.0 on every '<' threshold).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exact import (ENUMERATION_CAP, exact_distribution, exact_moments, kl_divergence,
                    marginalize_visible, posterior_weighted_table, table_moments)
from .gradients import MomentVector
from .model import BoltzmannMachine, sigmoid
from .sampling import RbmLayout, perchain_sweep, rbm_sample_hidden, rbm_sample_visible

DEFAULT_THRESHOLDS = ("<0.01", "<0.05", "<0.1", "<0.2", ">0.5", ">0.9", ">0.95")


@dataclass
class EvalConfig:
    samples: int | None = None      # kept Gibbs samples R; default samples_per_unit * n
    samples_per_unit: int = 1000
    burn_in: int = 100              # discarded full sweeps per chain
    chains: int = 10
    thresholds: tuple = DEFAULT_THRESHOLDS
    ordered_pairs: bool = True
    exact: bool = False             # use the enumeration oracle for model moments
    ais_temperatures: int = 1000
    ais_runs: int = 100
    seed: int = 0

    def resolve_samples(self, n: int) -> int:
        r = self.samples if self.samples is not None else self.samples_per_unit * n
        if r < 1:
            raise ValueError("sample count must be positive")
        return r


@dataclass
class EvalReport:
    """One evaluation of one machine against one data split."""

    avg_error: float
    avg_abs_diff: float
    diff_fractions: dict
    epoch: int | None = None
    exact_kl: float | None = None
    log_z: float | None = None
    log_z_se: float | None = None
    avg_log_prob_train: float | None = None
    avg_log_prob_test: float | None = None

    def __post_init__(self):
        for key, frac in self.diff_fractions.items():
            if not 0.0 <= frac <= 1.0:
                raise ValueError(f"fraction for {key} out of [0, 1]")

    @staticmethod
    def csv_header(thresholds: tuple = DEFAULT_THRESHOLDS) -> list[str]:
        frac_cols = [_threshold_label(t) for t in thresholds]
        return (["epoch", "avg_error", "exact_kl", "avg_abs_diff"] + frac_cols
                + ["log_z", "avg_log_prob_train", "avg_log_prob_test"])

    def csv_row(self, thresholds: tuple = DEFAULT_THRESHOLDS) -> list[str]:
        def fmt(v):
            return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)

        cells = [fmt(self.epoch), fmt(self.avg_error), fmt(self.exact_kl),
                 fmt(self.avg_abs_diff)]
        cells += [fmt(self.diff_fractions.get(str(t))) for t in thresholds]
        cells += [fmt(self.log_z), fmt(self.avg_log_prob_train), fmt(self.avg_log_prob_test)]
        return cells


def _threshold_label(threshold) -> str:
    op, a = parse_threshold(threshold)
    return f"frac_{'lt' if op == '<' else 'gt'}_{a:g}"


def parse_threshold(threshold) -> tuple[str, float]:
    """Accepts '<0.05', '>0.9', or a bare float (read as '<')."""
    if isinstance(threshold, str):
        text = threshold.strip()
        if not text or text[0] not in "<>":
            raise ValueError(f"threshold {threshold!r} must start with '<' or '>'")
        op, a = text[0], float(text[1:])
    else:
        op, a = "<", float(threshold)
    if not 0.0 < a < 1.0:
        raise ValueError(f"threshold value {a} must lie in (0, 1)")
    return op, a


# -- moment estimators --------------------------------------------------------

def data_moment_estimate(data) -> MomentVector:
    """Indicator-count moments of a visible data set."""
    V = data.as_float() if hasattr(data, "as_float") else np.asarray(data, dtype=np.float64)
    if V.ndim != 2 or V.shape[0] == 0:
        raise ValueError("data must be a nonempty (K, m) array")
    count = V.shape[0]
    return MomentVector(first=V.mean(axis=0), pair=(V.T @ V) / count)


def model_moment_estimate(machine: BoltzmannMachine, samples: int,
                          rng: np.random.Generator, burn_in: int = 100,
                          chains: int = 10, rao_blackwell: bool = True) -> MomentVector:
    """Gibbs-chain estimate of the model's visible moments.

    Runs `chains` independent random-scan chains, discards `burn_in` full
    sweeps, then keeps one state per chain per sweep until `samples` states
    are consumed. With rao_blackwell each kept state contributes conditional
    probabilities instead of indicators. The pairwise estimate is averaged
    over the two conditioning directions so the matrix comes out symmetric.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    if chains < 1:
        raise ValueError("chains must be >= 1")
    m, n = machine.m, machine.n
    X = (rng.random((chains, n)) < 0.5).astype(np.float64)
    for _ in range(burn_in):
        perchain_sweep(machine, X, rng)

    sum_first = np.zeros(m)
    sum_pair = np.zeros((m, m))
    kept = 0
    visible = slice(0, m)
    while kept < samples:
        perchain_sweep(machine, X, rng)
        take = min(chains, samples - kept)
        rows = X[:take]
        vis = rows[:, :m]
        if rao_blackwell:
            P = machine.conditional_probs(rows, visible)
            sum_first += P.sum(axis=0)
            sum_pair += P.T @ vis
        else:
            sum_first += vis.sum(axis=0)
            sum_pair += vis.T @ vis
        kept += take

    first = sum_first / samples
    pair = (sum_pair + sum_pair.T) / (2.0 * samples)
    np.fill_diagonal(pair, first)
    return MomentVector(first=first, pair=pair)


def exact_model_moments(machine: BoltzmannMachine,
                        cap: int = ENUMERATION_CAP) -> MomentVector:
    """Oracle visible moments by enumeration."""
    return exact_moments(exact_distribution(machine, cap), machine.m)


# -- avg-error and difference statistics --------------------------------------

def avg_error(q: MomentVector, p: MomentVector, m: int | None = None) -> float:
    """Squared moment mismatch over visible units (pairs i<j once, plus singles)."""
    if m is None:
        m = min(q.size, p.size)
    if q.size < m or p.size < m:
        raise ValueError(f"moment vectors must cover {m} units")
    dfirst = p.first[:m] - q.first[:m]
    dpair = p.pair[:m, :m] - q.pair[:m, :m]
    upper = np.triu_indices(m, k=1)
    return float(np.sum(dpair[upper] ** 2) + np.sum(dfirst ** 2))


def diff_stats(q: MomentVector, p: MomentVector, m: int | None = None,
               thresholds: tuple = DEFAULT_THRESHOLDS,
               ordered_pairs: bool = True) -> tuple[dict, float]:
    """Threshold fractions and the mean absolute moment difference.

    Ordered mode counts both (i, j) and (j, i) for every off-diagonal pair
    plus the m singleton terms, normalizing by m^2. The unordered variant
    counts each pair once over m(m+1)/2 terms.
    """
    if not thresholds:
        raise ValueError("at least one threshold is required")
    if m is None:
        m = min(q.size, p.size)
    dfirst = np.abs(p.first[:m] - q.first[:m])
    dpair = np.abs(p.pair[:m, :m] - q.pair[:m, :m])
    if ordered_pairs:
        off = ~np.eye(m, dtype=bool)
        pair_terms = dpair[off]
        denom = m * m
    else:
        pair_terms = dpair[np.triu_indices(m, k=1)]
        denom = m * (m + 1) // 2
    fractions = {}
    for threshold in thresholds:
        op, a = parse_threshold(threshold)
        if op == "<":
            count = int(np.sum(pair_terms < a)) + int(np.sum(dfirst < a))
        else:
            count = int(np.sum(pair_terms > a)) + int(np.sum(dfirst > a))
        fractions[str(threshold)] = count / denom
    avg = float((pair_terms.sum() + dfirst.sum()) / denom)
    return fractions, avg


# -- exact KL and its gradient -------------------------------------------------

def exact_kl_visible(machine: BoltzmannMachine, q_visible: np.ndarray,
                     cap: int = ENUMERATION_CAP) -> float:
    """KL(q(v) || p(v; theta)) by enumeration."""
    return kl_divergence(q_visible, visible_marginal(machine, cap))


def visible_marginal(machine: BoltzmannMachine, cap: int = ENUMERATION_CAP) -> np.ndarray:
    return marginalize_visible(exact_distribution(machine, cap))


def kl_gradient_check(machine: BoltzmannMachine, q_visible: np.ndarray,
                      cap: int = ENUMERATION_CAP) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradient of KL(q(v) || p(v; theta)) with respect to (b, W).

    Returns (db, dW) where db_i = p_i - q_i and dW_ij = p_ij - q_ij; the
    q-moments weight states by q(v) p(h|v; theta), the p-moments by the full
    model distribution. dW is the derivative with respect to the shared
    symmetric parameter w_ij.
    """
    dist = exact_distribution(machine, cap)
    p_first, p_pair = table_moments(dist.probs, machine.n, machine.n)
    qbar = posterior_weighted_table(machine, q_visible, cap)
    q_first, q_pair = table_moments(qbar, machine.n, machine.n)
    dW = p_pair - q_pair
    np.fill_diagonal(dW, 0.0)
    return p_first - q_first, dW


def augmented_kl(machine_before: BoltzmannMachine, machine_after: BoltzmannMachine,
                 q_visible: np.ndarray, cap: int = ENUMERATION_CAP) -> float:
    """KL of the completion distribution built at the old parameters against
    the full model distribution at the new ones."""
    qbar = posterior_weighted_table(machine_before, q_visible, cap)
    dist = exact_distribution(machine_after, cap)
    return kl_divergence(qbar, dist.probs)


# -- AIS and log-probability ---------------------------------------------------

def _softplus(z):
    return np.logaddexp(0.0, z)


def ais_log_z(layout: RbmLayout, n_temps: int, n_runs: int,
              rng: np.random.Generator, bootstrap: int = 200) -> tuple[float, float]:
    """Annealed importance sampling estimate of log Z for a bipartite machine.

    The path scales only the interaction term: intermediate models share the
    biases and use beta * W for beta on an even ladder over [0, 1] with
    `n_temps` transitions. Hidden units are summed out analytically, so the
    annealing state is the visible vector alone. Returns the estimate and a
    bootstrap standard error of the log mean weight.
    """
    if n_temps < 1:
        raise ValueError("n_temps must be >= 1")
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    w_vh, b_v, b_h = layout.w_vh, layout.b_v, layout.b_h
    log_z0 = float(_softplus(b_v).sum() + _softplus(b_h).sum())
    betas = np.linspace(0.0, 1.0, n_temps + 1)

    V = (rng.random((n_runs, layout.m)) < sigmoid(b_v)).astype(np.float64)
    log_w = np.zeros(n_runs)
    for s in range(1, n_temps + 1):
        act = V @ w_vh
        log_w += (_softplus(betas[s] * act + b_h)
                  - _softplus(betas[s - 1] * act + b_h)).sum(axis=1)
        if s < n_temps:
            p_h = sigmoid(betas[s] * act + b_h)
            H = (rng.random(p_h.shape) < p_h).astype(np.float64)
            p_v = sigmoid(betas[s] * (H @ w_vh.T) + b_v)
            V = (rng.random(p_v.shape) < p_v).astype(np.float64)

    log_mean_w = _log_mean_exp(log_w)
    if bootstrap > 0 and n_runs > 1:
        picks = rng.integers(0, n_runs, size=(bootstrap, n_runs))
        replicates = _log_mean_exp(log_w[picks], axis=1)
        se = float(replicates.std(ddof=1))
    else:
        se = float("nan")
    return log_z0 + log_mean_w, se


def _log_mean_exp(a, axis=None):
    a = np.asarray(a, dtype=np.float64)
    peak = a.max(axis=axis, keepdims=True)
    out = np.log(np.mean(np.exp(a - peak), axis=axis, keepdims=True)) + peak
    return float(out.reshape(())) if axis is None else np.squeeze(out, axis=axis)


def free_energy_visible(layout: RbmLayout, V: np.ndarray) -> np.ndarray:
    """log sum_h exp(-E(v, h)) per row: the unnormalized log marginal."""
    V = np.asarray(V, dtype=np.float64)
    return V @ layout.b_v + _softplus(V @ layout.w_vh + layout.b_h).sum(axis=1)


def avg_log_prob(layout: RbmLayout, data, log_z: float) -> float:
    """Mean log p(v) of a data set under the machine, given log Z."""
    if not np.isfinite(log_z):
        raise ValueError("log_z must be finite")
    V = data.as_float() if hasattr(data, "as_float") else np.asarray(data, dtype=np.float64)
    return float(free_energy_visible(layout, V).mean() - log_z)


# -- orchestration --------------------------------------------------------------

def evaluate_machine(machine: BoltzmannMachine, data, config: EvalConfig,
                     target_visible: np.ndarray | None = None,
                     with_ais: bool = False, split: str = "train",
                     cap: int = ENUMERATION_CAP) -> EvalReport:
    """Full report of a machine against one data split."""
    q = data_moment_estimate(data)
    if config.exact and machine.n <= cap:
        p = exact_model_moments(machine, cap)
    else:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0,)))
        p = model_moment_estimate(machine, config.resolve_samples(machine.n), rng,
                                  burn_in=config.burn_in, chains=config.chains)
    fractions, avg = diff_stats(q, p, machine.m, config.thresholds, config.ordered_pairs)
    report = EvalReport(avg_error=avg_error(q, p, machine.m), avg_abs_diff=avg,
                        diff_fractions=fractions)

    if target_visible is not None and machine.n <= cap:
        report.exact_kl = exact_kl_visible(machine, target_visible, cap)

    if with_ais:
        layout = RbmLayout(machine)
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(1,)))
        log_z, se = ais_log_z(layout, config.ais_temperatures, config.ais_runs, rng)
        report.log_z = log_z
        report.log_z_se = se
        lp = avg_log_prob(layout, data, log_z)
        if split == "test":
            report.avg_log_prob_test = lp
        else:
            report.avg_log_prob_train = lp
    return report

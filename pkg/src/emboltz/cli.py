"""Experiment harness: train, evaluate, oracle, ais, figdata, gen-data.

Configuration is a flat key-value text file (one `key value` pair per line,
'#' comments) with every key overridable on the command line as --key
value. Each training run writes three artifacts into --out-dir: the model
file, the trace CSV (epoch, avg_error, exact_kl, wall_time, alpha), and a
metadata file that echoes the resolved configuration and can itself be fed
back through --config to reproduce the run. Files are written atomically.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from .datasets import (BinaryDataSet, TargetDistribution, load_dataset, load_mnist_idx,
                       load_target, make_artificial_target, sample_target,
                       save_dataset, save_target)
from .evaluation import (DEFAULT_THRESHOLDS, EvalConfig, EvalReport, ais_log_z,
                         avg_error, data_moment_estimate, evaluate_machine,
                         exact_kl_visible, model_moment_estimate)
from .exact import (ENUMERATION_CAP, EnumerationCapError, empirical_visible_table,
                    exact_distribution, exact_moments, kl_divergence,
                    marginalize_visible, posterior_weighted_table)
from .model import BoltzmannMachine, init_random, init_random_rbm
from .sampling import RbmLayout, is_bipartite
from .streams import RNG_ALGORITHM, SeedTree
from .training import TrainConfig, TrainingDiverged, train_emlike, train_rbm_baseline

EM_METHODS = ("em-cd", "em-pcd", "em-pe")
# wall time stays in the in-memory trace; the emitted CSV keeps only the
# deterministic columns so one config+seed always writes identical bytes
TRACE_COLUMNS = ["epoch", "avg_error", "exact_kl", "alpha"]
FIGDATA_EXPERIMENTS = ("little-kl", "estep-steps", "rbm-gap", "method-compare")


@dataclass
class RunConfig:
    """Resolved settings of one run; field names double as config keys."""

    seed: int = 0
    method: str = "em-pcd"
    k: int = 1
    batch_size: int = 500
    learning_rate: float = 0.007
    lr_policy: str = "constant"
    lr_tau: float = 1000.0
    epochs: int = 100
    e_step_multiplier: int = 1
    eval_every: int = 10
    shuffle: bool = True
    data_kind: str = "artificial"       # artificial | mnist | file
    mnist_images: str = ""
    mnist_labels: str = ""
    data_file: str = ""
    test_file: str = ""
    data_limit: int = 0                 # 0 = use everything
    target_seed: int = 0
    target_mode: str = "teacher"
    target_file: str = ""
    sample_count: int = 2000
    n_hidden: int = 7
    rbm: bool = False
    init_scale: float = 0.01
    init_seed: int = -1                 # -1 = derive from seed
    init_model: str = ""
    eval_samples_per_unit: int = 1000
    eval_samples: int = 0               # 0 = per-unit rule
    eval_burn_in: int = 100
    eval_chains: int = 10
    eval_exact: bool = True             # oracle moments whenever n <= cap
    thresholds: str = ",".join(DEFAULT_THRESHOLDS)
    ais: bool = False
    ais_temperatures: int = 1000
    ais_runs: int = 100
    out_dir: str = "runs/latest"

    def train_config(self) -> TrainConfig:
        return TrainConfig(method=self.method, k=self.k, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, epochs=self.epochs,
                           e_step_multiplier=self.e_step_multiplier,
                           eval_every=self.eval_every, seed=self.seed,
                           lr_policy=self.lr_policy, lr_tau=self.lr_tau,
                           shuffle=self.shuffle)

    def eval_config(self, seed: int | None = None) -> EvalConfig:
        return EvalConfig(samples=self.eval_samples or None,
                          samples_per_unit=self.eval_samples_per_unit,
                          burn_in=self.eval_burn_in, chains=self.eval_chains,
                          thresholds=tuple(t for t in self.thresholds.split(",") if t),
                          exact=self.eval_exact,
                          ais_temperatures=self.ais_temperatures,
                          ais_runs=self.ais_runs,
                          seed=self.seed if seed is None else seed)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def parse_config_text(text: str) -> dict:
    """Flat `key value` lines into a dict of strings."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise ValueError(f"config line {lineno}: expected 'key value', got {raw!r}")
        entries[parts[0]] = parts[1].strip()
    return entries


def build_run_config(config_path: str | None, overrides: dict) -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    merged: dict = {}
    if config_path:
        with open(config_path) as fh:
            for key, value in parse_config_text(fh.read()).items():
                if key not in known:
                    raise ValueError(f"unknown config key {key!r}")
                merged[key] = value
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    resolved = {}
    for key, value in merged.items():
        typ = known[key].type
        if isinstance(value, str):
            if typ in ("bool", bool):
                resolved[key] = _parse_bool(value)
            elif typ in ("int", int):
                resolved[key] = int(value)
            elif typ in ("float", float):
                resolved[key] = float(value)
            else:
                resolved[key] = value
        else:
            resolved[key] = value
    return RunConfig(**resolved)


def config_to_text(config: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if value == "":
            continue  # empty paths equal their defaults; blank values do not parse
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} {value}")
    return "\n".join(lines) + "\n"


def atomic_write(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


# -- data / model resolution ---------------------------------------------------

def resolve_data(config: RunConfig) -> tuple[BinaryDataSet, TargetDistribution | None]:
    """Build the training set and, when known, the exact target distribution."""
    if config.data_kind == "artificial":
        if config.target_file:
            target = load_target(config.target_file)
        else:
            target = make_artificial_target(config.target_seed, mode=config.target_mode)
        rng = SeedTree(config.seed).rng(10)
        data = sample_target(target, config.sample_count, rng)
        return data, target
    if config.data_kind == "mnist":
        if not config.mnist_images:
            raise ValueError("data_kind mnist requires mnist_images")
        limit = config.data_limit or None
        data = load_mnist_idx(config.mnist_images, config.mnist_labels or None,
                              limit=limit)
        return data, None
    if config.data_kind == "file":
        if not config.data_file:
            raise ValueError("data_kind file requires data_file")
        data = load_dataset(config.data_file)
        if config.data_limit:
            data = BinaryDataSet(data.vectors[:config.data_limit], source=data.source)
        target = load_target(config.target_file) if config.target_file else None
        return data, target
    raise ValueError(f"unknown data_kind {config.data_kind!r}")


def resolve_machine(config: RunConfig, m: int) -> BoltzmannMachine:
    if config.init_model:
        machine = BoltzmannMachine.load(config.init_model)
        if machine.m != m:
            raise ValueError(f"init model has {machine.m} visible units, data has {m}")
        return machine
    init_seed = config.init_seed if config.init_seed >= 0 else config.seed + 1
    if config.rbm:
        return init_random_rbm(m, config.n_hidden, init_seed, config.init_scale)
    return init_random(m + config.n_hidden, m, init_seed, config.init_scale)


def make_trace_evaluator(config: RunConfig, data: BinaryDataSet,
                         target: TargetDistribution | None, machine_n: int,
                         with_augmented_kl: bool = False):
    """Trace hook computing avg-error (oracle when possible) and exact KL.

    One enumeration pass per evaluation serves all the exact metrics.
    """
    q = data_moment_estimate(data)
    use_oracle = config.eval_exact and machine_n <= ENUMERATION_CAP
    target_probs = None
    if target is not None and machine_n <= ENUMERATION_CAP:
        target_probs = target.probs

    def hook(epoch: int, machine: BoltzmannMachine, before: BoltzmannMachine | None):
        metrics = {}
        if use_oracle:
            dist = exact_distribution(machine)
            p = exact_moments(dist, machine.m)
            if target_probs is not None:
                metrics["exact_kl"] = kl_divergence(target_probs,
                                                    marginalize_visible(dist))
                if with_augmented_kl and before is not None:
                    qbar = posterior_weighted_table(before, target_probs)
                    metrics["kl_aug"] = kl_divergence(qbar, dist.probs)
        else:
            rng = SeedTree(config.seed).rng(11, epoch)
            cfg = config.eval_config()
            p = model_moment_estimate(machine, cfg.resolve_samples(machine.n), rng,
                                      burn_in=cfg.burn_in, chains=cfg.chains)
            if target_probs is not None:
                metrics["exact_kl"] = exact_kl_visible(machine, target_probs)
        metrics["avg_error"] = avg_error(q, p, machine.m)
        return metrics

    return hook


def write_trace_csv(path: str, trace, extra: dict | None = None):
    buf = io.StringIO()
    writer = csv.writer(buf)
    head = list(extra or ()) + TRACE_COLUMNS
    writer.writerow(head)
    for row in trace.rows:
        cells = [extra[k] for k in extra] if extra else []
        cells += [row.epoch, _fmt_metric(row.metrics.get("avg_error")),
                  _fmt_metric(row.metrics.get("exact_kl")),
                  _fmt_metric(row.alpha)]
        writer.writerow(cells)
    atomic_write(path, buf.getvalue())


def write_metadata(path: str, config: RunConfig):
    text = ("# run metadata; reusable via --config\n"
            + config_to_text(config)
            + f"# rng_algorithm {RNG_ALGORITHM}\n"
            + f"# numpy_version {np.__version__}\n"
            + f"# emboltz_version {__version__}\n")
    atomic_write(path, text)


# -- subcommands -----------------------------------------------------------------

def cmd_train(args) -> int:
    config = build_run_config(args.config, _override_dict(args))
    data, target = resolve_data(config)
    machine = resolve_machine(config, data.m)
    os.makedirs(config.out_dir, exist_ok=True)

    evaluator = make_trace_evaluator(config, data, target, machine.n)
    if config.method in EM_METHODS:
        trained, trace = train_emlike(machine, data, config.train_config(), evaluator)
    else:
        trained, trace = train_rbm_baseline(machine, data, config.train_config(), evaluator)

    trained.save(os.path.join(config.out_dir, "model.bm"))
    write_trace_csv(os.path.join(config.out_dir, "trace.csv"), trace)
    write_metadata(os.path.join(config.out_dir, "run.meta"), config)
    print(f"trained {config.method} for {config.epochs} epochs -> {config.out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    config = build_run_config(args.config, _override_dict(args))
    machine = BoltzmannMachine.load(args.model)
    splits: list[tuple[str, BinaryDataSet]] = []
    if config.data_file or config.data_kind != "file":
        data, target = resolve_data(config)
        splits.append(("train", data))
    else:
        target = None
    if config.test_file:
        splits.append(("test", load_dataset(config.test_file)))
    if not splits:
        raise ValueError("no data to evaluate against")
    for _, data in splits:
        if data.m != machine.m:
            raise ValueError(f"data has {data.m} visible units, model has {machine.m}")

    cfg = config.eval_config()
    target_probs = target.probs if target is not None else None
    if target_probs is None and config.eval_exact and machine.m <= 20:
        target_probs = empirical_visible_table(splits[0][1].vectors, machine.m)

    rows = []
    for split, data in splits:
        report = evaluate_machine(machine, data, cfg, target_visible=target_probs,
                                  with_ais=config.ais, split=split)
        report.epoch = config.epochs
        rows.append(report.csv_row(cfg.thresholds))

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(EvalReport.csv_header(cfg.thresholds))
    writer.writerows(rows)
    if args.out:
        atomic_write(args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_oracle(args) -> int:
    machine = BoltzmannMachine.load(args.model)
    try:
        dist = exact_distribution(machine)
    except EnumerationCapError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 2
    print(f"n {machine.n}")
    print(f"m {machine.m}")
    print(f"log_z {dist.log_z!r}")
    moments = exact_moments(dist, machine.n)
    for i in range(machine.n):
        print(f"moment {i} {float(moments.first[i])!r}")
    for i in range(machine.n):
        for j in range(i + 1, machine.n):
            print(f"pair {i} {j} {float(moments.pair[i, j])!r}")
    if args.target:
        target = load_target(args.target)
        if target.m != machine.m:
            print(f"target is over {target.m} units, model has {machine.m} visible",
                  file=sys.stderr)
            return 1
        print(f"exact_kl {exact_kl_visible(machine, target.probs)!r}")
    return 0


def cmd_ais(args) -> int:
    machine = BoltzmannMachine.load(args.model)
    if not is_bipartite(machine):
        print("AIS requires a bipartite machine", file=sys.stderr)
        return 1
    rng = SeedTree(args.seed).rng(1)
    log_z, se = ais_log_z(RbmLayout(machine), args.temperatures, args.runs, rng)
    print(f"log_z {log_z!r}")
    print(f"log_z_se {se!r}")
    return 0


def cmd_gen_data(args) -> int:
    if args.kind == "artificial":
        target = make_artificial_target(args.target_seed, mode=args.target_mode)
        os.makedirs(args.out_dir, exist_ok=True)
        save_target(target, os.path.join(args.out_dir, "target.td"))
        rng = SeedTree(args.seed).rng(10)
        save_dataset(sample_target(target, args.count, rng),
                     os.path.join(args.out_dir, "train.ds"))
        if args.test_count:
            rng_test = SeedTree(args.seed).rng(12)
            save_dataset(sample_target(target, args.test_count, rng_test),
                         os.path.join(args.out_dir, "test.ds"))
        print(f"wrote target + data under {args.out_dir}")
        return 0
    if args.kind == "mnist":
        data = load_mnist_idx(args.images, args.labels or None,
                              limit=args.count or None)
        save_dataset(data, args.out)
        print(f"wrote {data.count} vectors to {args.out}")
        return 0
    raise ValueError(f"unknown data kind {args.kind!r}")


# -- figdata ----------------------------------------------------------------------

def _figdata_methods(experiment: str):
    if experiment == "rbm-gap":
        return ("cd", "em-cd", "pcd", "em-pcd")
    return EM_METHODS


def cmd_figdata(args) -> int:
    if args.experiment not in FIGDATA_EXPERIMENTS:
        print(f"unknown experiment {args.experiment!r}; "
              f"choose from {', '.join(FIGDATA_EXPERIMENTS)}", file=sys.stderr)
        return 2
    config = build_run_config(args.config, _override_dict(args))
    os.makedirs(config.out_dir, exist_ok=True)
    out_path = os.path.join(config.out_dir, f"{args.experiment}.csv")

    data, target = resolve_data(config)
    methods = _figdata_methods(args.experiment)
    multipliers = (1, 10) if args.experiment == "estep-steps" else (config.e_step_multiplier,)
    want_aug = args.experiment == "little-kl"

    buf = io.StringIO()
    writer = csv.writer(buf)
    head = ["method"]
    if args.experiment == "estep-steps":
        head.append("e_step_multiplier")
    head += ["epoch", "kl", "kl_aug", "avg_error"] if want_aug else ["epoch", "kl", "avg_error"]
    writer.writerow(head)

    for mi, method in enumerate(methods):
        for mult in multipliers:
            run = RunConfig(**{f.name: getattr(config, f.name) for f in fields(RunConfig)})
            run.method = method
            run.e_step_multiplier = mult
            run.rbm = config.rbm or args.experiment == "rbm-gap"
            # shared ladder: one data set and one starting machine for every
            # method, method-specific training streams
            run.init_seed = (config.init_seed if config.init_seed >= 0
                             else config.seed + 1)
            run.seed = config.seed + 1000 * (mi + 1)
            machine = resolve_machine(run, data.m)
            # an empty epoch budget yields a header-only file
            evaluator = None if config.epochs == 0 else make_trace_evaluator(
                run, data, target, machine.n, with_augmented_kl=want_aug)
            if method in EM_METHODS:
                _, trace = train_emlike(machine, data, run.train_config(), evaluator)
            else:
                _, trace = train_rbm_baseline(machine, data, run.train_config(), evaluator)
            for row in trace.rows:
                cells = [method]
                if args.experiment == "estep-steps":
                    cells.append(mult)
                cells.append(row.epoch)
                cells.append(_fmt_metric(row.metrics.get("exact_kl")))
                if want_aug:
                    cells.append(_fmt_metric(row.metrics.get("kl_aug")))
                cells.append(_fmt_metric(row.metrics.get("avg_error")))
                writer.writerow(cells)

    atomic_write(out_path, buf.getvalue())
    print(f"wrote {out_path}")
    return 0


def _fmt_metric(value):
    return "" if value is None else repr(float(value))


# -- argument parsing ---------------------------------------------------------------

def _add_config_options(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="flat key-value config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f.name, metavar=f.type.upper()
                            if isinstance(f.type, str) else "V")


def _override_dict(args) -> dict:
    names = {f.name for f in fields(RunConfig)}
    return {k: v for k, v in vars(args).items() if k in names and v is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emboltz",
        description="Train and evaluate Boltzmann machines with EM-style "
                    "Monte Carlo completion and pluggable gradient estimators.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training job")
    _add_config_options(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="report avg-error and friends for a model")
    p_eval.add_argument("model", help="model file")
    p_eval.add_argument("--out", help="CSV output path (default: stdout)")
    _add_config_options(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_oracle = sub.add_parser("oracle", help="exact logZ/moments/KL for small models")
    p_oracle.add_argument("model")
    p_oracle.add_argument("--target", help="target distribution file for exact KL")
    p_oracle.set_defaults(func=cmd_oracle)

    p_ais = sub.add_parser("ais", help="annealed importance sampling log Z")
    p_ais.add_argument("model")
    p_ais.add_argument("--temperatures", type=int, default=1000)
    p_ais.add_argument("--runs", type=int, default=100)
    p_ais.add_argument("--seed", type=int, default=0)
    p_ais.set_defaults(func=cmd_ais)

    p_fig = sub.add_parser("figdata", help="emit plot-ready CSVs for the study figures")
    p_fig.add_argument("experiment", help=", ".join(FIGDATA_EXPERIMENTS))
    _add_config_options(p_fig)
    p_fig.set_defaults(func=cmd_figdata)

    p_gen = sub.add_parser("gen-data", help="materialize data sets on disk")
    p_gen.add_argument("--kind", choices=("artificial", "mnist"), required=True)
    p_gen.add_argument("--target-seed", type=int, default=0)
    p_gen.add_argument("--target-mode", default="teacher")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--count", type=int, default=2000)
    p_gen.add_argument("--test-count", type=int, default=0)
    p_gen.add_argument("--out-dir", default="data")
    p_gen.add_argument("--images", help="IDX image file (mnist kind)")
    p_gen.add_argument("--labels", help="IDX label file (mnist kind)")
    p_gen.add_argument("--out", default="mnist.ds", help="output path (mnist kind)")
    p_gen.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

import csv
import io
import os

import numpy as np
import pytest

from emboltz.cli import (RunConfig, build_parser, build_run_config, config_to_text,
                         main, parse_config_text)
from emboltz.datasets import make_artificial_target, sample_target, save_dataset, save_target
from emboltz.model import BoltzmannMachine, init_random_rbm
from emboltz.streams import SeedTree


def run_cli(*argv):
    return main(list(argv))


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


ART = ["--data-kind", "artificial", "--sample-count", "200", "--target-seed", "3",
       "--n-hidden", "4"]


class TestConfigPlumbing:
    def test_parse_flat_text(self):
        text = "method em-cd\nk 10   # CD steps\n\n# comment line\nbatch_size 500\n"
        assert parse_config_text(text) == {"method": "em-cd", "k": "10",
                                           "batch_size": "500"}

    def test_bad_line_rejected(self):
        with pytest.raises(ValueError, match="line 1"):
            parse_config_text("methodonly\n")

    def test_round_trip_through_text(self, tmp_path):
        config = RunConfig(method="em-cd", k=7, shuffle=False, learning_rate=0.01)
        path = tmp_path / "run.cfg"
        path.write_text(config_to_text(config))
        back = build_run_config(str(path), {})
        assert back == config

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("momentum 0.9\n")
        with pytest.raises(ValueError, match="unknown config key"):
            build_run_config(str(path), {})

    def test_overrides_beat_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("k 3\nmethod em-pe\n")
        config = build_run_config(str(path), {"k": "9"})
        assert config.k == 9 and config.method == "em-pe"

    def test_bool_parsing(self):
        config = build_run_config(None, {"shuffle": "false", "ais": "true"})
        assert config.shuffle is False and config.ais is True
        with pytest.raises(ValueError):
            build_run_config(None, {"shuffle": "maybe"})


class TestTrainCommand:
    def test_writes_artifacts_and_is_reproducible(self, tmp_path):
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        argv = ["train", *ART, "--method", "em-pcd", "--k", "2", "--batch-size", "50",
                "--epochs", "6", "--eval-every", "3", "--seed", "5"]
        assert run_cli(*argv, "--out-dir", out1) == 0
        assert run_cli(*argv, "--out-dir", out2) == 0
        for name in ("model.bm", "trace.csv", "run.meta"):
            assert os.path.exists(os.path.join(out1, name))
        with open(os.path.join(out1, "trace.csv")) as fh:
            trace1 = fh.read()
        with open(os.path.join(out2, "trace.csv")) as fh:
            trace2 = fh.read()
        assert trace1 == trace2  # byte-identical under one config+seed
        rows = read_csv(os.path.join(out1, "trace.csv"))
        assert rows[0] == ["epoch", "avg_error", "exact_kl", "alpha"]
        assert [r[0] for r in rows[1:]] == ["0", "3", "6"]
        assert float(rows[1][3]) == 0.007  # the paper-fixed default rate

    def test_metadata_reproduces_run(self, tmp_path):
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        run_cli("train", *ART, "--method", "em-cd", "--k", "1", "--batch-size", "40",
                "--epochs", "4", "--seed", "9", "--out-dir", out1)
        run_cli("train", "--config", os.path.join(out1, "run.meta"),
                "--out-dir", out2)
        with open(os.path.join(out1, "model.bm")) as fh:
            first = fh.read()
        with open(os.path.join(out2, "model.bm")) as fh:
            second = fh.read()
        assert first == second

    def test_zero_epochs_yields_serialized_init(self, tmp_path):
        out = str(tmp_path / "r")
        run_cli("train", *ART, "--method", "em-pcd", "--batch-size", "50",
                "--epochs", "0", "--seed", "4", "--init-scale", "0.05",
                "--out-dir", out)
        saved = BoltzmannMachine.load(os.path.join(out, "model.bm"))
        from emboltz.cli import resolve_machine

        config = build_run_config(None, dict(zip(
            ["data_kind", "sample_count", "target_seed", "n_hidden"],
            ["artificial", "200", "3", "4"])) | {"seed": "4", "init_scale": "0.05"})
        expected = resolve_machine(config, 13)
        assert np.array_equal(saved.W, expected.W)
        assert np.array_equal(saved.b, expected.b)

    def test_bad_config_exits_nonzero(self, tmp_path, capsys):
        assert run_cli("train", "--data-kind", "nosuch",
                       "--out-dir", str(tmp_path)) == 1
        assert "error" in capsys.readouterr().err


class TestEvaluateCommand:
    def test_rbm_report_with_ais(self, tmp_path, capsys):
        machine = init_random_rbm(6, 3, seed=2, scale=0.2)
        model = tmp_path / "m.bm"
        machine.save(model)
        target = make_artificial_target(5, m=6)
        data = sample_target(target, 300, np.random.default_rng(1))
        ds = tmp_path / "d.ds"
        save_dataset(data, ds)
        test = tmp_path / "t.ds"
        save_dataset(sample_target(target, 100, np.random.default_rng(2)), test)
        td = tmp_path / "t.td"
        save_target(target, td)
        assert run_cli("evaluate", str(model), "--data-kind", "file",
                       "--data-file", str(ds), "--test-file", str(test),
                       "--target-file", str(td), "--ais", "true",
                       "--ais-temperatures", "100", "--ais-runs", "20") == 0
        out = capsys.readouterr().out
        rows = list(csv.reader(io.StringIO(out)))
        assert rows[0][:4] == ["epoch", "avg_error", "exact_kl", "avg_abs_diff"]
        assert len(rows) == 3  # header + train + test
        train_row, test_row = rows[1], rows[2]
        assert float(train_row[1]) >= 0.0
        assert train_row[-2] != "" and train_row[-1] == ""  # train log prob col
        assert test_row[-2] == "" and test_row[-1] != ""
        assert float(train_row[11]) == pytest.approx(float(test_row[11]))  # same log Z

    def test_dimension_mismatch_fails(self, tmp_path):
        machine = init_random_rbm(4, 2, seed=0, scale=0.1)
        model = tmp_path / "m.bm"
        machine.save(model)
        data = sample_target(make_artificial_target(1, m=6), 50,
                             np.random.default_rng(0))
        ds = tmp_path / "d.ds"
        save_dataset(data, ds)
        assert run_cli("evaluate", str(model), "--data-kind", "file",
                       "--data-file", str(ds)) == 1


class TestOracleCommand:
    def test_uniform_machine(self, tmp_path, capsys):
        machine = BoltzmannMachine(3, 3, np.zeros((3, 3)), np.zeros(3))
        model = tmp_path / "m.bm"
        machine.save(model)
        assert run_cli("oracle", str(model)) == 0
        out = capsys.readouterr().out
        lines = dict(line.split(maxsplit=1) for line in out.splitlines() if line)
        assert float(lines["log_z"]) == pytest.approx(3 * np.log(2), abs=1e-12)

    def test_cap_refusal(self, tmp_path, capsys):
        machine = BoltzmannMachine(26, 13, np.zeros((26, 26)), np.zeros(26))
        model = tmp_path / "big.bm"
        machine.save(model)
        assert run_cli("oracle", str(model)) == 2
        assert "refused" in capsys.readouterr().err

    def test_kl_against_own_marginal_is_zero(self, tmp_path, capsys):
        from emboltz.datasets import TargetDistribution
        from emboltz.evaluation import visible_marginal

        machine = init_random_rbm(4, 3, seed=3, scale=0.3)
        model = tmp_path / "m.bm"
        machine.save(model)
        td = tmp_path / "own.td"
        save_target(TargetDistribution(visible_marginal(machine), m=4), td)
        assert run_cli("oracle", str(model), "--target", str(td)) == 0
        out = capsys.readouterr().out
        kl = float([l for l in out.splitlines() if l.startswith("exact_kl")][0].split()[1])
        assert abs(kl) < 1e-12


class TestAisCommand:
    def test_matches_oracle(self, tmp_path, capsys):
        from emboltz.exact import exact_distribution

        machine = init_random_rbm(5, 4, seed=1, scale=0.3)
        model = tmp_path / "m.bm"
        machine.save(model)
        assert run_cli("ais", str(model), "--temperatures", "200",
                       "--runs", "50", "--seed", "3") == 0
        out = capsys.readouterr().out
        est = float([l for l in out.splitlines() if l.startswith("log_z ")][0].split()[1])
        assert abs(est - exact_distribution(machine).log_z) < 0.5

    def test_rejects_general_machine(self, tmp_path, capsys):
        from emboltz.model import init_random

        machine = init_random(6, 3, seed=0, scale=0.1)
        model = tmp_path / "m.bm"
        machine.save(model)
        assert run_cli("ais", str(model)) == 1
        assert "bipartite" in capsys.readouterr().err


class TestGenDataCommand:
    def test_artificial_files(self, tmp_path):
        out = str(tmp_path / "data")
        assert run_cli("gen-data", "--kind", "artificial", "--target-seed", "2",
                       "--count", "80", "--test-count", "20",
                       "--out-dir", out) == 0
        from emboltz.datasets import load_dataset, load_target

        target = load_target(os.path.join(out, "target.td"))
        train = load_dataset(os.path.join(out, "train.ds"))
        test = load_dataset(os.path.join(out, "test.ds"))
        assert target.m == 13 and train.count == 80 and test.count == 20

    def test_mnist_slice(self, tmp_path):
        from tests.test_datasets import write_idx_images

        imgs = tmp_path / "i.idx"
        write_idx_images(imgs, np.full((5, 2, 2), 130, dtype=np.uint8))
        out = tmp_path / "m.ds"
        assert run_cli("gen-data", "--kind", "mnist", "--images", str(imgs),
                       "--count", "3", "--out", str(out)) == 0
        from emboltz.datasets import load_dataset

        assert load_dataset(out).count == 3


class TestFigdataCommand:
    def test_little_kl_columns(self, tmp_path):
        out = str(tmp_path / "fig")
        assert run_cli("figdata", "little-kl", *ART, "--epochs", "4",
                       "--eval-every", "2", "--batch-size", "100",
                       "--k", "1", "--out-dir", out) == 0
        rows = read_csv(os.path.join(out, "little-kl.csv"))
        assert rows[0] == ["method", "epoch", "kl", "kl_aug", "avg_error"]
        methods = {r[0] for r in rows[1:]}
        assert methods == {"em-cd", "em-pcd", "em-pe"}
        epoch0 = [r for r in rows[1:] if r[1] == "0"]
        assert all(r[3] == "" for r in epoch0)       # no previous machine yet
        later = [r for r in rows[1:] if r[1] != "0"]
        assert all(float(r[3]) >= 0.0 for r in later)

    def test_estep_steps_has_multiplier_column(self, tmp_path):
        out = str(tmp_path / "fig")
        assert run_cli("figdata", "estep-steps", *ART, "--epochs", "2",
                       "--eval-every", "1", "--batch-size", "100",
                       "--out-dir", out) == 0
        rows = read_csv(os.path.join(out, "estep-steps.csv"))
        assert rows[0][:2] == ["method", "e_step_multiplier"]
        assert {r[1] for r in rows[1:]} == {"1", "10"}

    def test_rbm_gap_runs_baselines(self, tmp_path):
        out = str(tmp_path / "fig")
        assert run_cli("figdata", "rbm-gap", *ART, "--epochs", "2",
                       "--eval-every", "1", "--batch-size", "50",
                       "--out-dir", out) == 0
        rows = read_csv(os.path.join(out, "rbm-gap.csv"))
        assert {r[0] for r in rows[1:]} == {"cd", "em-cd", "pcd", "em-pcd"}

    def test_empty_epoch_budget_header_only(self, tmp_path):
        out = str(tmp_path / "fig")
        assert run_cli("figdata", "method-compare", *ART, "--epochs", "0",
                       "--batch-size", "50", "--out-dir", out) == 0
        rows = read_csv(os.path.join(out, "method-compare.csv"))
        assert rows == [["method", "epoch", "kl", "avg_error"]]

    def test_unknown_experiment(self, capsys):
        assert run_cli("figdata", "nosuch") == 2
        assert "unknown experiment" in capsys.readouterr().err


def test_parser_help_lists_subcommands():
    parser = build_parser()
    text = parser.format_help()
    for sub in ("train", "evaluate", "oracle", "ais", "figdata", "gen-data"):
        assert sub in text

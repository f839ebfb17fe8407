import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cpmix.cli import main
from cpmix.confusion import ConfusionMatrix
from cpmix.data import load_csv
from cpmix.experiment import (SCHEMA, ConfigError, ExperimentConfig, build_datasets, for_method,
                              load_config, parse_config_text, run_experiment, run_single,
                              summarize, sweep)
from cpmix.nn import load_model
from cpmix.report import metrics_from_confusion

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL = {"dataset": "toy", "rho": "10", "n_majority": "100", "n_test_per_class": "100",
         "hidden": "16", "epochs": "3", "batch_size": "50", "seeds": "0, 1"}


def small_cfg(**kw) -> ExperimentConfig:
    return ExperimentConfig.from_dict({**SMALL, **{k: str(v) for k, v in kw.items()}})


def small_flags(**kw) -> list[str]:
    out = []
    for k, v in {**SMALL, **kw}.items():
        out += ["--" + k.replace("_", "-"), str(v)]
    return out


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig.from_dict({})
        assert cfg.method == "cpmix" and cfg.alpha == 1.0 and cfg.cp_start is None
        assert set(cfg.values) == set(SCHEMA)

    def test_parse_text(self):
        raw = parse_config_text("# c\nrho = 50  # trailing\n\nhidden = [64, 32]\n")
        assert raw == {"rho": "50", "hidden": "[64, 32]"}
        cfg = ExperimentConfig.from_dict(raw)
        assert cfg.rho == 50.0 and cfg.hidden == [64, 32]

    def test_line_errors(self):
        with pytest.raises(ConfigError) as e:
            parse_config_text("rho = 2\nnonsense\nrho = 3\n", "x.cfg")
        assert e.value.problems == ["x.cfg:2: expected 'key = value'",
                                    "x.cfg:3: duplicate field 'rho'"]

    def test_every_problem_is_reported(self):
        with pytest.raises(ConfigError) as e:
            ExperimentConfig.from_dict({"rho": "abc", "bogus": "1", "epochs": "2"})
        assert len(e.value.problems) == 2
        with pytest.raises(ConfigError) as e:
            ExperimentConfig.from_dict({"t": "2", "alpha": "0", "method": "cpmix"})
        assert len(e.value.problems) == 2

    def test_method_specific_fields(self):
        with pytest.raises(ConfigError, match="not used by method 'erm_ce'"):
            ExperimentConfig.from_dict({"method": "erm_ce", "gamma_cp": "2"})
        cfg = ExperimentConfig.from_dict({"method": "cpmix", "gamma_cp": "2"})
        assert for_method(cfg, "erm_ce").method == "erm_ce"

    def test_overrides_beat_file(self, tmp_path):
        p = tmp_path / "a.cfg"
        p.write_text("rho = 5\nepochs = 4\n")
        cfg = load_config(p, {"rho": "7"})
        assert cfg.rho == 7.0 and cfg.epochs == 4 and cfg.batch_size == 100

    def test_dumps_roundtrip(self):
        cfg = small_cfg(bag_decay=0.5, milestones="3,4")
        again = ExperimentConfig.from_dict(parse_config_text(cfg.dumps()))
        assert again.values == cfg.values

    def test_shipped_configs_load(self):
        files = sorted(CONFIGS.glob("*.cfg"))
        assert len(files) >= 8
        dirs = set()
        for f in files:
            dirs.add(load_config(f).output_dir)
        assert len(dirs) == len(files)


class TestRuns:
    def test_run_single_extras(self):
        res = run_single(small_cfg(method="erm_ce"), seed=0)
        extra = res.metrics.extra
        assert extra["minority_classes"] == [2, 3]
        assert extra["target_pairs"] == [[2, 1], [3, 0]]
        cm = res.metrics.confusion.counts
        assert extra["target_confusion_sum"] == cm[2, 1] + cm[3, 0]

    def test_artifacts_and_byte_identical_rerun(self, tmp_path):
        cfg = small_cfg()
        a = run_experiment(cfg, tmp_path / "a")
        b = run_experiment(cfg, tmp_path / "b")
        for seed in (0, 1):
            run = a / f"cpmix-seed{seed}"
            names = {p.name for p in run.iterdir()}
            assert names == {"config.cfg", "metrics.json", "confusion.csv", "train_log.jsonl",
                             "model.bin", "dataset.json", "bag.json"}
            for name in names:
                assert (run / name).read_bytes() == (b / run.name / name).read_bytes(), name
            m = json.loads((run / "metrics.json").read_text())
            cm = ConfusionMatrix.from_csv(run / "confusion.csv")
            meta = json.loads((run / "dataset.json").read_text())
            again = metrics_from_confusion(cm, meta["class_counts"])
            assert again.top1 == m["top1"]
            assert again.subgroup_acc == m["subgroup_acc"]

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(ConfigError, match="output_dir"):
            run_experiment(small_cfg(), blocker / "sub")

    def test_sweep_rows(self, tmp_path):
        cfg = small_cfg(epochs=2)
        path = sweep(cfg, [2, 20], ["erm_ce", "cpmix"], tmp_path)
        with path.open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 * 2 * 2
        assert {(r["rho"], r["method"]) for r in rows} == {
            (rho, m) for rho in ("2", "20") for m in ("erm_ce", "cpmix")}

    def test_single_rho_sweep_matches_run(self, tmp_path):
        cfg = small_cfg(epochs=2, seeds="3")
        sweep(cfg, [10], None, tmp_path / "s")
        run_experiment(cfg, tmp_path / "r")
        assert ((tmp_path / "s" / "rho10" / "cpmix-seed3" / "metrics.json").read_bytes()
                == (tmp_path / "r" / "cpmix-seed3" / "metrics.json").read_bytes())

    def test_csv_dataset(self, tmp_path):
        train, test = build_datasets(small_cfg(), 0)
        from cpmix.data import save_csv
        save_csv(train, tmp_path / "tr.csv")
        save_csv(test, tmp_path / "te.csv")
        cfg = small_cfg(dataset="csv", train_csv=tmp_path / "tr.csv", test_csv=tmp_path / "te.csv",
                        seeds=0, method="erm_bs")
        res = run_single(cfg, 0)
        assert res.metrics.extra["minority_classes"] == [2, 3]  # the 10-sample classes are 'few'
        assert res.metrics.confusion.counts.sum() == len(test)

    def test_summarize(self, tmp_path):
        run_experiment(small_cfg(method="erm_bs"), tmp_path)
        rows = summarize(tmp_path, tmp_path / "s.csv")
        assert [r["seed"] for r in rows] == [0, 1]
        assert (tmp_path / "s.csv").read_text().startswith("run_dir,method,seed")


class TestCli:
    def test_train_and_report(self, tmp_path, capsys):
        assert main(["train", *small_flags(output_dir=tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "cpmix seed=0 top1=" in out
        assert main(["report", "--runs", str(tmp_path), "--out", str(tmp_path / "r.csv")]) == 0
        assert "cpmix" in capsys.readouterr().out
        assert (tmp_path / "r.csv").exists()

    def test_cli_overrides_file(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        body = {**SMALL, "seeds": "0", "rho": "50"}
        cfg.write_text("".join(f"{k} = {v}\n" for k, v in body.items()))
        assert main(["train", "--config", str(cfg), "--rho", "4", "--method", "erm_ce",
                     "--output-dir", str(tmp_path / "o")]) == 0
        meta = json.loads((tmp_path / "o" / "erm_ce-seed0" / "dataset.json").read_text())
        assert meta["class_counts"] == [100, 100, 25, 25]

    def test_gen_data_and_eval(self, tmp_path, capsys):
        assert main(["gen-data", *small_flags(seeds="5"), "--out", str(tmp_path / "d")]) == 0
        train = load_csv(tmp_path / "d" / "train-seed5.csv")
        assert train.class_counts.tolist() == [100, 100, 10, 10]
        assert main(["train", *small_flags(seeds="5", method="erm_ce",
                                           output_dir=tmp_path / "r")]) == 0
        capsys.readouterr()
        run = tmp_path / "r" / "erm_ce-seed5"
        assert main(["eval", "--model", str(run / "model.bin"),
                     "--test", str(tmp_path / "d" / "test-seed5.csv"),
                     "--train", str(tmp_path / "d" / "train-seed5.csv")]) == 0
        printed = json.loads(capsys.readouterr().out)
        stored = json.loads((run / "metrics.json").read_text())
        assert printed["top1"] == stored["top1"]
        assert printed["confusion"] == stored["confusion"]
        load_model(run / "model.bin")

    def test_sweep_command(self, tmp_path):
        assert main(["sweep", *small_flags(epochs=1, seeds="0", output_dir=tmp_path),
                     "--rhos", "2,5", "--methods", "erm_ce,mixup"]) == 0
        assert len((tmp_path / "sweep.csv").read_text().splitlines()) == 1 + 4

    @pytest.mark.parametrize("argv", [
        ["train", "--rho", "abc"],
        ["train", "--method", "erm_ce", "--gamma-cp", "2"],
        ["train", "--config", "/nonexistent/x.cfg"],
        ["sweep", "--rhos", "2,x"],
        ["train", "--dataset", "csv"],
    ])
    def test_config_errors_exit_2(self, argv, capsys):
        assert main(argv) == 2
        assert "config error" in capsys.readouterr().err

    def test_divergence_exits_3(self, tmp_path, capsys):
        code = main(["train", "--dataset", "toy", "--seeds", "0", "--epochs", "2",
                     "--method", "erm_ce", "--optimizer", "sgd_momentum", "--lr", "1e6",
                     "--output-dir", str(tmp_path)])
        assert code == 3
        assert "numeric abort" in capsys.readouterr().err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "cpmix", "--help"], capture_output=True,
                              text=True)
        assert proc.returncode == 0
        for cmd in ("gen-data", "train", "eval", "sweep", "report"):
            assert cmd in proc.stdout


def test_toy_sweep_trend(tmp_path):
    cfg = ExperimentConfig.from_dict({"dataset": "toy", "method": "erm_ce", "epochs": "10",
                                      "seeds": "0,1,2,3,4", "eval_every_epoch": "false"})
    path = sweep(cfg, [2, 50], None, tmp_path)
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    by = {(r["rho"], r["seed"]): int(r["target_confusion_sum"]) for r in rows}
    wins = sum(by[("50", s)] > by[("2", s)] for s in "01234")
    assert wins >= 3

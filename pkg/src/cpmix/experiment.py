"""Experiment configs, single runs, seed loops and imbalance sweeps.

Config files are flat ``key = value`` text. Every key has a declared type
and default (see ``SCHEMA``); ``#`` starts a comment; lists are comma
separated, optionally wrapped in brackets.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .confusion import ConfusionPairBag
from .data import (BlobsSpec, LabeledDataset, ToySpec, exponential_imbalance, load_csv,
                   make_blobs, make_toy)
from .mixing import MixConfig
from .nn import MlpClassifier, save_model
from .report import MetricsReport, evaluate, minority_recall, target_confusion_sum
from .trainer import (FinetuneConfig, TrainSchedule, finetune_classifier, train_cpmix,
                      train_erm, train_vanilla_mixup)

log = logging.getLogger(__name__)

METHODS = ("erm_ce", "erm_bs", "mixup", "cpmix")
DATASETS = ("toy", "blobs-lt", "csv")


class ConfigError(ValueError):
    """Invalid config; ``problems`` lists every offending field."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_list(item):
    def parse(s: str):
        s = s.strip()
        if s.startswith("[") and s.endswith("]"):
            s = s[1:-1]
        return [item(p) for p in s.split(",") if p.strip()]
    return parse


def _parse_str(s: str) -> str:
    s = s.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        s = s[1:-1]
    return s


def _optional(item):
    def parse(s: str):
        return None if s.strip().lower() in ("", "none", "auto") else item(s)
    return parse


# key -> (parser, default, help)
SCHEMA: dict[str, tuple] = {
    "dataset": (_parse_str, "toy", "toy | blobs-lt | csv"),
    "rho": (float, 20.0, "imbalance factor n_max / n_min"),
    "n_majority": (int, 1000, "toy: training points per majority class"),
    "toy_std": (float, 0.4, "toy: cluster standard deviation"),
    "n_test_per_class": (int, 1000, "toy: balanced test points per class"),
    "blobs_classes": (int, 20, "blobs-lt: number of classes"),
    "blobs_dim": (int, 10, "blobs-lt: feature dimension"),
    "blobs_radius": (float, 4.0, "blobs-lt: ring radius"),
    "blobs_std": (float, 0.75, "blobs-lt: cluster standard deviation"),
    "blobs_per_class": (int, 500, "blobs-lt: samples per class before imbalancing"),
    "blobs_test_per_class": (int, 200, "blobs-lt: balanced test samples per class"),
    "train_csv": (_parse_str, "", "csv: training file"),
    "test_csv": (_parse_str, "", "csv: test file"),
    "method": (_parse_str, "cpmix", "erm_ce | erm_bs | mixup | cpmix"),
    "hidden": (_parse_list(int), [100], "hidden layer widths"),
    "alpha": (float, 1.0, "Beta(alpha, alpha) mixing parameter"),
    "t": (float, 0.5, "label-mixing weight"),
    "gamma_cp": (float, 1.0, "weight of the confusion-pair mixup term"),
    "gamma_mix": (float, 1.0, "weight of the in-batch mixup term"),
    "bag_decay": (_optional(float), None, "per-epoch bag decay factor (off when unset)"),
    "bag_weighting": (_parse_str, "frequency", "frequency | support"),
    "epochs": (int, 10, "training epochs"),
    "cp_start": (_optional(int), None, "epoch after which the regularizers start (default 2E/3)"),
    "batch_size": (int, 100, "ERM batch size"),
    "mix_batch_size": (_optional(int), None, "confusion-pair batch size (default batch_size)"),
    "optimizer": (_parse_str, "adam", "adam | sgd_momentum"),
    "lr": (float, 0.1, "learning rate"),
    "momentum": (float, 0.9, "SGD momentum"),
    "weight_decay": (float, 0.0, "L2 weight decay"),
    "lr_schedule": (_parse_str, "constant", "constant | multistep | cosine"),
    "milestones": (_parse_list(int), [], "multistep decay epochs"),
    "lr_decay": (float, 0.1, "multistep decay factor"),
    "warmup_epochs": (int, 0, "linear warmup epochs"),
    "finetune": (_parse_bool, False, "class-balanced output-layer fine-tuning"),
    "finetune_epochs": (int, 0, "fine-tuning epochs"),
    "finetune_lr": (float, 0.1, "fine-tuning learning rate"),
    "finetune_momentum": (float, 0.9, "fine-tuning momentum"),
    "finetune_weight_decay": (float, 0.0, "fine-tuning weight decay"),
    "seeds": (_parse_list(int), [0], "run seeds (data and training)"),
    "output_dir": (_parse_str, "runs", "artifact directory"),
    "subgroup_many": (int, 100, "classes with more training samples are 'many'"),
    "subgroup_few": (int, 20, "classes with fewer training samples are 'few'"),
    "group_size": (int, 0, "block size for the grouped confusion matrix (0 = off)"),
    "eval_every_epoch": (_parse_bool, True, "log test metrics after every epoch"),
}

# fields that only make sense for some methods
_METHOD_FIELDS = {
    "alpha": {"mixup", "cpmix"},
    "t": {"cpmix"},
    "gamma_cp": {"cpmix"},
    "gamma_mix": {"cpmix"},
    "cp_start": {"cpmix"},
    "mix_batch_size": {"cpmix"},
    "bag_decay": {"cpmix"},
    "bag_weighting": {"cpmix"},
}


@dataclass
class ExperimentConfig:
    values: dict
    explicit: set = field(default_factory=set)

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def replace(self, **kw) -> "ExperimentConfig":
        vals = dict(self.values)
        vals.update(kw)
        cfg = ExperimentConfig(vals, self.explicit | set(kw))
        cfg.validate()
        return cfg

    @classmethod
    def from_dict(cls, raw: dict, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        """Build from string or typed values layered over ``base`` (or defaults)."""
        values = dict(base.values) if base else {k: v[1] for k, v in SCHEMA.items()}
        explicit = set(base.explicit) if base else set()
        problems = []
        for key, val in raw.items():
            if key not in SCHEMA:
                problems.append(f"unknown field {key!r}")
                continue
            if isinstance(val, str):
                try:
                    val = SCHEMA[key][0](val)
                except (TypeError, ValueError) as e:
                    problems.append(f"field {key!r}: {e}")
                    continue
            values[key] = val
            explicit.add(key)
        if problems:
            raise ConfigError(problems)
        cfg = cls(values, explicit)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        v = self.values
        problems = []
        if v["dataset"] not in DATASETS:
            problems.append(f"field 'dataset': must be one of {DATASETS}")
        if v["method"] not in METHODS:
            problems.append(f"field 'method': must be one of {METHODS}")
        if v["dataset"] == "csv":
            for key in ("train_csv", "test_csv"):
                if not v[key]:
                    problems.append(f"field {key!r}: required when dataset = csv")
        if v["rho"] < 1:
            problems.append("field 'rho': must be >= 1")
        if not v["alpha"] > 0:
            problems.append("field 'alpha': must be > 0")
        if not 0 <= v["t"] <= 1:
            problems.append("field 't': must lie in [0, 1]")
        for key in ("gamma_cp", "gamma_mix", "weight_decay", "finetune_weight_decay"):
            if v[key] < 0:
                problems.append(f"field {key!r}: must be >= 0")
        for key in ("epochs", "batch_size", "n_majority", "blobs_classes", "blobs_dim",
                    "blobs_per_class", "n_test_per_class", "blobs_test_per_class"):
            if v[key] < 1:
                problems.append(f"field {key!r}: must be >= 1")
        if v["cp_start"] is not None and not 0 <= v["cp_start"] <= v["epochs"]:
            problems.append("field 'cp_start': must lie in [0, epochs]")
        if v["optimizer"] not in ("adam", "sgd_momentum"):
            problems.append("field 'optimizer': must be adam or sgd_momentum")
        if v["lr_schedule"] not in ("constant", "multistep", "cosine"):
            problems.append("field 'lr_schedule': must be constant, multistep or cosine")
        if v["bag_weighting"] not in ("frequency", "support"):
            problems.append("field 'bag_weighting': must be frequency or support")
        if v["bag_decay"] is not None and not 0 < v["bag_decay"] <= 1:
            problems.append("field 'bag_decay': must lie in (0, 1]")
        if not v["seeds"]:
            problems.append("field 'seeds': need at least one seed")
        if any(h < 1 for h in v["hidden"]):
            problems.append("field 'hidden': widths must be >= 1")
        if v["finetune"] and v["finetune_epochs"] < 1:
            problems.append("field 'finetune_epochs': must be >= 1 when finetune is on")
        if v["method"] in METHODS:
            for key, allowed in _METHOD_FIELDS.items():
                if key in self.explicit and v["method"] not in allowed:
                    problems.append(f"field {key!r}: not used by method {v['method']!r}")
        if problems:
            raise ConfigError(problems)

    def schedule(self, seed: int) -> TrainSchedule:
        v = self.values
        return TrainSchedule(
            epochs=v["epochs"], cp_start=v["cp_start"], batch_size=v["batch_size"],
            mix_batch_size=v["mix_batch_size"], optimizer=v["optimizer"], lr=v["lr"],
            momentum=v["momentum"], weight_decay=v["weight_decay"],
            lr_schedule=v["lr_schedule"], milestones=tuple(v["milestones"]),
            lr_decay=v["lr_decay"], warmup_epochs=v["warmup_epochs"], seed=seed,
            finetune=FinetuneConfig(v["finetune"], v["finetune_epochs"], v["finetune_lr"],
                                    v["finetune_momentum"], v["finetune_weight_decay"]),
        )

    def mix_config(self) -> MixConfig:
        v = self.values
        return MixConfig(v["alpha"], v["t"], v["gamma_cp"], v["gamma_mix"])

    def dumps(self) -> str:
        out = []
        for key in SCHEMA:
            val = self.values[key]
            if isinstance(val, list):
                val = ", ".join(str(x) for x in val)
            elif val is None:
                val = "none"
            out.append(f"{key} = {val}")
        return "\n".join(out) + "\n"


def parse_config_text(text: str, source: str = "<config>") -> dict:
    raw = {}
    problems = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{source}:{lineno}: expected 'key = value'")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if key in raw:
            problems.append(f"{source}:{lineno}: duplicate field {key!r}")
        raw[key] = val
    if problems:
        raise ConfigError(problems)
    return raw


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """File values over defaults, then ``overrides`` over the file."""
    path = Path(path)
    raw = parse_config_text(path.read_text(), str(path))
    raw.update(overrides or {})
    return ExperimentConfig.from_dict(raw)


# -- datasets -----------------------------------------------------------------

def toy_spec(cfg: ExperimentConfig) -> ToySpec:
    return ToySpec.with_rho(cfg.rho, n_majority=cfg.n_majority, std=cfg.toy_std,
                            n_test_per_class=cfg.n_test_per_class)


def build_datasets(cfg: ExperimentConfig, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    if cfg.dataset == "toy":
        return make_toy(toy_spec(cfg), seed)
    if cfg.dataset == "blobs-lt":
        spec = BlobsSpec(cfg.blobs_classes, cfg.blobs_dim, cfg.blobs_radius, cfg.blobs_std,
                         cfg.blobs_per_class, cfg.blobs_test_per_class)
        base, test = make_blobs(spec, seed)
        return exponential_imbalance(base, cfg.rho, seed), test
    train = load_csv(cfg.train_csv)
    test = load_csv(cfg.test_csv, num_classes=train.num_classes)
    return train, test


def minority_info(cfg: ExperimentConfig, train: LabeledDataset):
    """Minority classes and the (true, predicted) pairs whose confusions are tracked.

    Toy: the two small classes and their nearest large neighbours. Otherwise
    the 'few' subgroup and every (few -> many) pair.
    """
    if cfg.dataset == "toy":
        spec = toy_spec(cfg)
        return spec.minority_classes, spec.adjacent_pairs()
    counts = train.class_counts
    few = [int(c) for c in np.flatnonzero(counts < cfg.subgroup_few)]
    many = [int(c) for c in np.flatnonzero(counts > cfg.subgroup_many)]
    return few, [(i, j) for i in few for j in many]


# -- runs ---------------------------------------------------------------------

@dataclass
class RunResult:
    method: str
    seed: int
    model: MlpClassifier
    metrics: MetricsReport
    train_log: object
    bag: ConfusionPairBag | None
    dataset_meta: dict


def run_single(cfg: ExperimentConfig, seed: int, train=None, test=None) -> RunResult:
    if train is None or test is None:
        train, test = build_datasets(cfg, seed)
    sched = cfg.schedule(seed)
    dims = [train.dim, *cfg.hidden, train.num_classes]
    model = MlpClassifier.init(dims, np.random.default_rng(seed))
    eval_test = test if cfg.eval_every_epoch else None
    bag = None
    if cfg.method in ("erm_ce", "erm_bs"):
        loss = "cross_entropy" if cfg.method == "erm_ce" else "balanced_softmax"
        model, _, tlog = train_erm(model, train, eval_test, sched, loss)
    elif cfg.method == "mixup":
        model, tlog = train_vanilla_mixup(model, train, eval_test, sched, cfg.alpha)
    else:
        bag = ConfusionPairBag(train.num_classes, decay=cfg.bag_decay,
                               weighting=cfg.bag_weighting)
        model, bag, tlog = train_cpmix(model, train, eval_test, sched, cfg.mix_config(), bag=bag)
    model = finetune_classifier(model, train, sched)
    report = evaluate(model, test, train.class_counts, (cfg.subgroup_many, cfg.subgroup_few),
                      cfg.group_size or None)
    minority, pairs = minority_info(cfg, train)
    report.extra = {
        "method": cfg.method,
        "seed": seed,
        "rho": cfg.rho,
        "dataset": train.name,
        "minority_classes": minority,
        "minority_recall": minority_recall(report.confusion, minority) if minority else None,
        "target_pairs": [list(p) for p in pairs],
        "target_confusion_sum": target_confusion_sum(report.confusion, pairs) if pairs else None,
    }
    return RunResult(cfg.method, seed, model, report, tlog, bag, train.metadata())


def write_run(result: RunResult, cfg: ExperimentConfig, run_dir: Path) -> Path:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.cfg").write_text(cfg.dumps())
    result.metrics.to_json(run_dir / "metrics.json")
    result.metrics.confusion.to_csv(run_dir / "confusion.csv")
    result.train_log.to_jsonl(run_dir / "train_log.jsonl")
    save_model(result.model, run_dir / "model.bin")
    (run_dir / "dataset.json").write_text(json.dumps(result.dataset_meta, indent=1) + "\n")
    if result.bag is not None:
        (run_dir / "bag.json").write_text(result.bag.to_json() + "\n")
    return run_dir


def _prepare_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise ConfigError(f"field 'output_dir': cannot write to {path} ({e})") from None
    return path


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> Path:
    """Run every seed of ``cfg``; one ``<method>-seed<k>`` directory per run."""
    out = _prepare_dir(out_dir or cfg.output_dir)
    for seed in cfg.seeds:
        log.info("run %s seed=%d rho=%g", cfg.method, seed, cfg.rho)
        res = run_single(cfg, seed)
        write_run(res, cfg, out / f"{cfg.method}-seed{seed}")
    return out


SWEEP_COLUMNS = ("rho", "method", "seed", "top1", "minority_recall", "target_confusion_sum")


def for_method(cfg: ExperimentConfig, method: str) -> ExperimentConfig:
    """Copy of ``cfg`` running ``method``; fields that method ignores are dropped silently."""
    explicit = {k for k in cfg.explicit
                if k not in _METHOD_FIELDS or method in _METHOD_FIELDS[k]}
    out = ExperimentConfig({**cfg.values, "method": method}, explicit | {"method"})
    out.validate()
    return out


def sweep(cfg: ExperimentConfig, rho_list, methods=None, out_dir=None) -> Path:
    """Run ``methods x rho_list x seeds``; writes ``sweep.csv`` and returns its path."""
    out = _prepare_dir(out_dir or cfg.output_dir)
    methods = list(methods or [cfg.method])
    rows = []
    for rho in rho_list:
        for method in methods:
            run_cfg = for_method(cfg, method).replace(rho=float(rho))
            sub = run_experiment(run_cfg, out / f"rho{float(rho):g}")
            for seed in run_cfg.seeds:
                metrics = json.loads((sub / f"{method}-seed{seed}" / "metrics.json").read_text())
                extra = metrics["extra"]
                rows.append([f"{float(rho):g}", method, seed, repr(metrics["top1"]),
                             "" if extra["minority_recall"] is None else repr(extra["minority_recall"]),
                             "" if extra["target_confusion_sum"] is None else extra["target_confusion_sum"]])
    path = out / "sweep.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        w.writerows(rows)
    return path


def collect_metrics(root) -> list[dict]:
    """Every ``metrics.json`` below ``root``, with its run directory attached."""
    found = []
    for p in sorted(Path(root).rglob("metrics.json")):
        m = json.loads(p.read_text())
        m["run_dir"] = str(p.parent)
        found.append(m)
    return found


def summarize(root, out_csv=None) -> list[dict]:
    """Per-run table of headline metrics, optionally written as CSV."""
    rows = []
    for m in collect_metrics(root):
        e = m["extra"]
        rows.append({
            "run_dir": m["run_dir"], "method": e["method"], "seed": e["seed"], "rho": e["rho"],
            "top1": m["top1"], "many": m["subgroup_acc"]["many"],
            "medium": m["subgroup_acc"]["medium"], "few": m["subgroup_acc"]["few"],
            "minority_recall": e["minority_recall"],
            "target_confusion_sum": e["target_confusion_sum"],
        })
    if out_csv is not None:
        with Path(out_csv).open("w", newline="") as fh:
            fields = list(rows[0]) if rows else ["run_dir"]
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            w.writerows(rows)
    return rows

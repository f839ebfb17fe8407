"""Command line front end.

Every config key is also a ``--flag`` (underscores become dashes). Values
come from, in increasing precedence: built-in defaults, ``--config FILE``,
command-line flags. Exit codes: 0 ok, 2 config error, 3 numeric abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import save_csv
from .experiment import (SCHEMA, ConfigError, ExperimentConfig, build_datasets, load_config,
                         run_experiment, summarize, sweep)
from .nn import load_model
from .report import evaluate
from .trainer import NumericAbort

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    group = p.add_argument_group("config keys")
    for key, (_, default, help_) in SCHEMA.items():
        group.add_argument("--" + key.replace("_", "-"), dest="cfg_" + key, default=None,
                           metavar="VALUE", help=f"{help_} (default: {default})")


def _config_from_args(args) -> ExperimentConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    if args.config is not None:
        if not args.config.exists():
            raise ConfigError(f"config file {args.config} not found")
        return load_config(args.config, overrides)
    return ExperimentConfig.from_dict(overrides)


def cmd_gen_data(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out or cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create {out}: {e}") from None
    for seed in cfg.seeds:
        train, test = build_datasets(cfg, seed)
        save_csv(train, out / f"train-seed{seed}.csv")
        save_csv(test, out / f"test-seed{seed}.csv")
        print(f"wrote {out}/train-seed{seed}.csv ({len(train)} rows, "
              f"counts {train.class_counts.tolist()})")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out = run_experiment(cfg)
    for seed in cfg.seeds:
        m = json.loads((out / f"{cfg.method}-seed{seed}" / "metrics.json").read_text())
        sub = m["subgroup_acc"]
        print(f"{cfg.method} seed={seed} top1={m['top1']:.4f} many={sub['many']} "
              f"medium={sub['medium']} few={sub['few']}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    try:
        rhos = [float(r) for r in args.rhos.split(",") if r.strip()]
    except ValueError:
        raise ConfigError(f"--rhos: expected comma-separated numbers, got {args.rhos!r}") from None
    methods = [m.strip() for m in args.methods.split(",")] if args.methods else None
    path = sweep(cfg, rhos, methods)
    print(f"wrote {path}")
    return 0


def cmd_eval(args) -> int:
    from .data import load_csv
    model = load_model(args.model)
    test = load_csv(args.test, num_classes=model.num_classes)
    if args.train is not None:
        counts = load_csv(args.train, num_classes=model.num_classes).class_counts
    else:
        counts = test.class_counts
    report = evaluate(model, test, counts, (args.many, args.few), args.group_size or None)
    text = report.to_json(args.out)
    if args.out is None:
        sys.stdout.write(text)
    else:
        print(f"top1={report.top1:.4f} -> {args.out}")
    return 0


def cmd_report(args) -> int:
    rows = summarize(args.runs, args.out)
    if not rows:
        print(f"no metrics.json found under {args.runs}")
        return 0
    by_method: dict[str, list] = {}
    for r in rows:
        by_method.setdefault((r["method"], r["rho"]), []).append(r)
    print(f"{'method':<8} {'rho':>6} {'runs':>4} {'top1':>7} {'many':>7} {'medium':>7} {'few':>7}")
    for (method, rho), rs in sorted(by_method.items()):
        def avg(key):
            vals = [r[key] for r in rs if r[key] is not None]
            return f"{sum(vals) / len(vals):7.4f}" if vals else f"{'-':>7}"
        print(f"{method:<8} {rho:>6g} {len(rs):>4} {avg('top1')} {avg('many')} "
              f"{avg('medium')} {avg('few')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpmix", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write train/test CSVs for each seed")
    _add_config_flags(p)
    p.add_argument("--out", help="directory (default: output_dir)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train every seed and write run artifacts")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="methods x rho x seeds, summarized in sweep.csv")
    _add_config_flags(p)
    p.add_argument("--rhos", required=True, help="comma-separated imbalance factors")
    p.add_argument("--methods", help="comma-separated methods (default: config method)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="metrics for a saved model on a CSV test set")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--train", type=Path, help="training CSV; its counts define subgroups")
    p.add_argument("--many", type=int, default=100)
    p.add_argument("--few", type=int, default=20)
    p.add_argument("--group-size", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="tabulate every metrics.json under a directory")
    p.add_argument("--runs", type=Path, required=True)
    p.add_argument("--out", type=Path, help="optional per-run CSV")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        for problem in e.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericAbort as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

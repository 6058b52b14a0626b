"""Command-line entry point: ``dgda <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 invalid data or
checkpoint, 3 numeric failure. The ``DGDA_SEED`` environment variable
overrides the seed stored in a config file; an explicit ``--seed`` wins
over both.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .datasets import atomic_write, load_dataset, save_dataset
from .errors import DgdaError
from .experiment import DEFAULT_SEEDS, PRESETS, SWEEP_AXES, gradcheck_command, run_experiment, sweep, target_f1
from .model import DgdaParams
from .synthetic import GeneratorConfig, generate_synthetic_pair
from .trainer import MODES, Trainer, TrainConfig, write_trace_csv

SEED_ENV = "DGDA_SEED"
EXIT_USAGE = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this CLI reserves 2 for bad data."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _env_seed() -> Optional[int]:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _seed_override(args) -> Optional[int]:
    return args.seed if getattr(args, "seed", None) is not None else _env_seed()


def _train_config(path: Optional[str], seed: Optional[int]) -> TrainConfig:
    if path in PRESETS:
        cfg = TrainConfig(**PRESETS[path])
    else:
        cfg = TrainConfig.from_json(path) if path else TrainConfig()
    return cfg.replace(seed=seed) if seed is not None else cfg


def _gen_config(path: Optional[str], seed: Optional[int]) -> GeneratorConfig:
    cfg = GeneratorConfig.from_json(path) if path else GeneratorConfig()
    if seed is not None:
        cfg.seed = seed
    return cfg


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _emit(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


# ----------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _gen_config(args.config, _seed_override(args))
    path = save_dataset(generate_synthetic_pair(cfg), args.out)
    _emit({"dataset": str(path), "seed": cfg.seed})
    return 0


def cmd_train(args) -> int:
    split = load_dataset(args.data)
    cfg = _train_config(args.config, _seed_override(args))
    out = Path(args.out)
    if args.resume:
        trainer = Trainer.resume(args.resume, split)
    else:
        trainer = Trainer(split, cfg, args.mode, allow_target_labels=args.mode == "target_supervised")
    result = trainer.run()
    result.params.save(out / "params.json")
    write_trace_csv(result.trace, out / "trace.csv", timing=True)
    trainer.save_checkpoint(out / "checkpoint.json")
    f1, degenerate = target_f1(result.params, split.target_test) if split.target_test else (None, False)
    _emit({"params": str(out / "params.json"), "epochs": len(result.trace), "best_epoch": result.best_epoch,
           "stopped_early": result.stopped_early, "target_test_f1": f1, "f1_degenerate": degenerate})
    return 0


def cmd_evaluate(args) -> int:
    split = load_dataset(args.data)
    params = DgdaParams.load(args.params)
    doc = {}
    for name in ("source_test", "target_test"):
        graphs = getattr(split, name)
        if graphs:
            f1, degenerate = target_f1(params, graphs)
            doc[name] = {"f1": f1, "degenerate": degenerate, "graphs": len(graphs)}
    _emit(doc)
    return 0


def _data_source(args):
    if args.data:
        return args.data
    return _gen_config(args.gen, None)


def _seeds(args) -> list[int]:
    if args.seeds:
        return args.seeds
    env = _env_seed()
    return [env] if env is not None else list(DEFAULT_SEEDS)


def cmd_run(args) -> int:
    cfg = _train_config(args.config, None)
    report = run_experiment(_data_source(args), cfg, _seeds(args), args.out)
    _emit({"report": str(Path(args.out) / "report.json"), "dgda": report.dgda,
           "baselines": report.baselines})
    return 0


def cmd_sweep(args) -> int:
    cfg = _train_config(args.config, None)
    rows = sweep(args.axis, args.values, _data_source(args), cfg, _seeds(args), args.out)
    _emit({"axis": args.axis, "rows": [{"value": v, "mean_f1": m, "std_f1": s} for v, m, s in rows]})
    return 0


def cmd_gradcheck(args) -> int:
    start = _seed_override(args) or 0
    report = gradcheck_command(range(start, start + args.count))
    for fam, err in report["families"].items():
        print(f"{fam:10s} {err:.3e}")
    status = "PASS" if report["passed"] else "FAIL"
    print(f"max relative error {report['max']:.3e} (tolerance {report['tolerance']:.0e}): {status}")
    if args.out:
        atomic_write(args.out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0 if report["passed"] else 3


# ----------------------------------------------------------------------


def _add_data_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset directory or .jsonl file")
    src.add_argument("--gen", metavar="GEN_CONFIG", nargs="?", const="",
                     help="generate the synthetic benchmark (optionally from a generator config file)")
    p.add_argument("--config", help="training config JSON, or the preset name 'benchmark'")
    p.add_argument("--seeds", type=_int_list, help="comma-separated seeds (default 1,2,3)")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dgda", description="Disentangled graph domain adaptation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic source/target dataset")
    p.add_argument("--config", help="generator config JSON (defaults to the built-in benchmark)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model and save its parameters")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="training config JSON, or the preset name 'benchmark'")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=MODES, default="dgda")
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue from a checkpoint file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="F1 of saved parameters on the test splits")
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="multi-seed DGDA vs baselines experiment")
    _add_data_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sensitivity sweep along one hyperparameter")
    p.add_argument("--axis", required=True, help=f"one of {', '.join(SWEEP_AXES)}")
    p.add_argument("--values", required=True, type=_float_list)
    _add_data_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference audit of every gradient")
    p.add_argument("--seed", type=int, help="first seed (default 0)")
    p.add_argument("--count", type=int, default=20, help="number of random instances")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "sweep" and args.axis == "dim_zy":
            args.values = [int(v) if float(v).is_integer() else v for v in args.values]
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DgdaError as exc:
        print(f"dgda: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

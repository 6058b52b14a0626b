"""Multi-seed experiments, hyperparameter sweeps and the gradient audit.

``run_experiment`` trains DGDA together with the source-only and
target-supervised references for every seed, scores all three on the
target test graphs and aggregates the result into a :class:`RunReport`.
Reports and traces are written atomically and carry no wall-clock
values, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .datasets import atomic_write, dataset_hash, load_dataset
from .errors import ConfigError, DgdaError
from .graph import DatasetSplit, Graph, augment
from .metrics import f1_is_degenerate, f1_score
from .model import FAMILIES, DgdaParams, LossWeights, ModelDims, make_batch, predict_proba, total_loss
from .synthetic import GeneratorConfig, generate_synthetic_pair
from .tensor import grad_check_report
from .trainer import TrainConfig, TrainResult, train, train_baseline, write_trace_csv

REPORT_FORMAT = "dgda-run-report"
REPORT_VERSION = 1
DEFAULT_SEEDS = (1, 2, 3)
BASELINES = ("source_only", "target_supervised")
GRADCHECK_TOLERANCE = 1e-4

# Desk-scale training preset for the synthetic benchmark. The loss weights
# keep their defaults; widths are reduced and Adam replaces plain SGD so a
# five-seed run fits in minutes on one core.
BENCHMARK_TRAIN = dict(
    hidden=32, dim_zd=16, dim_zy=16, dim_zo=16, decoder_hidden=32, decoder_out=16,
    classifier_hidden=32, batch_size=32, max_epochs=20, patience=100,
    optimizer="adam", learning_rate=0.005, kl_reduction="element_mean", p_drop=0.3, p_add=0.5,
)
PRESETS = {"benchmark": BENCHMARK_TRAIN}


def benchmark_config(**overrides) -> TrainConfig:
    """The benchmark training preset with ``overrides`` applied."""
    return TrainConfig(**{**BENCHMARK_TRAIN, **overrides})

# sweep axis -> TrainConfig field; Greek aliases accepted on the command line
SWEEP_AXES = {
    "dim_zy": "dim_zy",
    "delta": "delta",
    "p_drop": "p_drop",
    "p_add": "p_add",
    "gamma": "gamma",
    "alpha": "alpha",
    "omega": "omega",
}
_AXIS_ALIASES = {"δ": "delta", "γ": "gamma", "α": "alpha", "ω": "omega"}
# axes that change the baseline model itself, so baselines are retrained per value
_BASELINE_AXES = {"dim_zy"}

DataSource = Union[DatasetSplit, GeneratorConfig, str, os.PathLike]


def _summary(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"per_seed": [float(v) for v in arr], "mean": float(arr.mean()), "std": float(arr.std())}


@dataclass
class RunReport:
    config: dict
    seeds: list
    dgda: dict
    baselines: dict
    trace_paths: dict = field(default_factory=dict)
    dataset_hash: str = ""
    degenerate_f1: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return self.dgda["mean"]

    @property
    def std(self) -> float:
        return self.dgda["std"]

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT, "version": REPORT_VERSION, **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunReport":
        if doc.get("format") != REPORT_FORMAT:
            raise ConfigError("not a run report")
        return cls(**{k: v for k, v in doc.items() if k not in ("format", "version")})

    def write(self, path) -> None:
        atomic_write(path, self.to_json())


def resolve_data(source: DataSource) -> tuple[DatasetSplit, dict]:
    """Dataset plus a JSON-able description of where it came from."""
    if isinstance(source, DatasetSplit):
        return source, {"kind": "split"}
    if isinstance(source, GeneratorConfig):
        return generate_synthetic_pair(source), {"kind": "generator", "generator": source.to_dict()}
    return load_dataset(source), {"kind": "path", "path": str(source)}


def target_f1(params: DgdaParams, graphs: Sequence[Graph]) -> tuple[float, bool]:
    """F1 on ``graphs`` and whether the zero-denominator convention applied."""
    preds = (predict_proba(params, graphs) >= 0.5).astype(int).tolist()
    labels = [int(g.label) for g in graphs]
    return f1_score(preds, labels), f1_is_degenerate(preds, labels)


def _with_seed(exc: DgdaError, seed: int, what: str) -> DgdaError:
    new = type(exc)(f"seed {seed} ({what}): {exc}")
    new.exit_code = exc.exit_code
    return new


def _train_all(split: DatasetSplit, cfg: TrainConfig, seed: int, modes: Sequence[str]) -> dict[str, TrainResult]:
    out = {}
    seeded = cfg.replace(seed=int(seed))
    for mode in modes:
        try:
            if mode == "dgda":
                out[mode] = train(split, seeded)
            else:
                out[mode] = train_baseline(split, seeded, mode, allow_target_labels=(mode == "target_supervised"))
        except DgdaError as exc:
            raise _with_seed(exc, seed, mode) from exc
    return out


def _scores(split: DatasetSplit, cfg: TrainConfig, seeds: Sequence[int], modes: Sequence[str],
            out_dir: Optional[Path]) -> tuple[dict, dict, list]:
    per_mode: dict[str, list[float]] = {m: [] for m in modes}
    traces: dict[str, dict[str, str]] = {m: {} for m in modes}
    degenerate = []
    for seed in seeds:
        results = _train_all(split, cfg, seed, modes)
        for mode, res in results.items():
            f1, degen = target_f1(res.params, split.target_test)
            per_mode[mode].append(f1)
            if degen:
                degenerate.append({"seed": int(seed), "mode": mode})
            if out_dir is not None:
                rel = f"traces/{mode}_seed{seed}.csv"
                write_trace_csv(res.trace, out_dir / rel, timing=False)
                traces[mode][str(seed)] = rel
    return per_mode, traces, degenerate


def _check_seeds(seeds: Sequence[int]) -> list[int]:
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("at least one seed is required")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"duplicate seeds in {seeds}")
    return seeds


def run_experiment(
    data: DataSource,
    cfg: TrainConfig,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    out_dir=None,
    baselines: Optional[dict] = None,
) -> RunReport:
    """Train and score DGDA and both references for every seed.

    ``baselines`` may carry pre-computed per-seed baseline F1 lists (as
    produced by an earlier report) to skip retraining them. When
    ``out_dir`` is given, ``report.json`` and per-run trace CSVs are
    written there.
    """
    seeds = _check_seeds(seeds)
    split, provenance = resolve_data(data)
    out = Path(out_dir) if out_dir is not None else None
    modes = ["dgda"] if baselines is not None else ["dgda", *BASELINES]
    per_mode, traces, degenerate = _scores(split, cfg, seeds, modes, out)
    if baselines is None:
        baselines = {m: _summary(per_mode[m]) for m in BASELINES}
    report = RunReport(
        config={"train": cfg.to_dict(), "data": provenance},
        seeds=seeds,
        dgda=_summary(per_mode["dgda"]),
        baselines=baselines,
        trace_paths=traces if out is not None else {},
        dataset_hash=dataset_hash(split),
        degenerate_f1=degenerate,
    )
    if out is not None:
        report.write(out / "report.json")
    return report


def _axis_field(axis: str) -> str:
    axis = _AXIS_ALIASES.get(axis, axis)
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {sorted(SWEEP_AXES)}")
    return SWEEP_AXES[axis]


def sweep_csv(axis: str, rows: Sequence[tuple]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([axis, "mean_f1", "std_f1"])
    for value, mean, std in rows:
        writer.writerow([repr(value) if isinstance(value, float) else value, repr(mean), repr(std)])
    return buf.getvalue()


def sweep(
    axis: str,
    values: Sequence[float],
    data: DataSource,
    cfg: TrainConfig,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    out_dir=None,
) -> list[tuple]:
    """One experiment per axis value; returns ``(value, mean F1, std)`` rows.

    Baselines do not depend on the loss weights or augmentation rates,
    so they are trained once and shared across values unless the axis
    changes the baseline architecture.
    """
    name = _axis_field(axis)
    values = list(values)
    if len(values) < 2:
        raise ConfigError("a sweep needs at least two values")
    if len(set(values)) != len(values):
        raise ConfigError(f"duplicate sweep values in {values}")
    split, _ = resolve_data(data)
    out = Path(out_dir) if out_dir is not None else None
    shared = None
    rows = []
    for value in values:
        vcfg = cfg.replace(**{name: value})
        vout = out / f"{name}={value}" if out is not None else None
        report = run_experiment(split, vcfg, seeds, vout, None if name in _BASELINE_AXES else shared)
        if shared is None and name not in _BASELINE_AXES:
            shared = report.baselines
        rows.append((value, report.mean, report.std))
    if out is not None:
        atomic_write(out / f"sweep_{name}.csv", sweep_csv(name, rows))
    return rows


# ----------------------------------------------------------------------
# gradient audit


GRADCHECK_DIMS = dict(hidden=4, depth=2, dim_zd=3, dim_zy=3, dim_zo=3, decoder_hidden=4,
                      decoder_out=3, classifier_hidden=4)


def _random_graph(rng: np.random.Generator, n: int, domain: str, label: Optional[int], width: int) -> Graph:
    upper = np.triu(rng.random((n, n)) < 0.4, 1)
    # a path keeps every node attached so no degree is zero
    for i in range(n - 1):
        upper[i, i + 1] = True
    a = (upper | upper.T).astype(np.float64)
    return Graph(a, rng.standard_normal((n, width)), label=label, domain=domain)


def gradcheck_instance(seed: int, n: int = 6, width: int = 3, p_drop: float = 0.1, p_add: float = 0.1):
    """Random source/target pair of augmented ``n``-node graphs and small parameters."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6C]))
    src = _random_graph(rng, n, "source", int(rng.integers(2)), width)
    tgt = _random_graph(rng, n, "target", None, width)
    batch = make_batch([augment(src, p_drop, p_add, seed=int(seed) * 2 + 1),
                        augment(tgt, p_drop, p_add, seed=int(seed) * 2 + 2)])
    params = DgdaParams.init(ModelDims(in_dim=width, **GRADCHECK_DIMS), seed=int(seed))
    return params, batch


def gradcheck_command(seeds: Sequence[int] = range(20), step: float = 1e-5,
                      weights: LossWeights = LossWeights()) -> dict:
    """Per-family worst relative gradient error of ``total_loss`` over ``seeds``.

    The reparameterization noise is fixed per seed so the objective is a
    deterministic function of the parameters.
    """
    worst = {fam: 0.0 for fam in FAMILIES}
    for seed in seeds:
        params, batch = gradcheck_instance(seed)
        report = grad_check_report(
            lambda p: total_loss(params, batch, weights, seed=int(seed))[0], dict(params), step=step
        )
        for name, err in report.items():
            fam = params.family[name]
            worst[fam] = max(worst[fam], float(err))
    return {"families": worst, "max": max(worst.values()), "tolerance": GRADCHECK_TOLERANCE,
            "passed": bool(max(worst.values()) < GRADCHECK_TOLERANCE)}

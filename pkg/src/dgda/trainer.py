"""Two-phase DGDA training, supervised baselines, and checkpoints.

Every epoch draws ``ceil(len(source pool) / batch_size)`` iterations. An
iteration samples a source batch and a target batch with replacement and
runs two updates:

1. on the clean graphs, minimize the full objective over the extractor,
   the domain/semantic encoders, the graph decoder and both classifiers;
2. on edge-perturbed copies of the same graphs, minimize it over the
   extractor, the noise encoder and the noise decoder.

All randomness is derived from ``(seed, purpose, epoch, iteration, ...)``
so a resumed run replays exactly what an uninterrupted run would do.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .datasets import atomic_write, dataset_hash
from .errors import CheckpointError, ConfigError, DataValidationError, NumericError
from .graph import DatasetSplit, Graph, augment
from .metrics import f1_score
from .model import (
    BASELINE_FAMILIES,
    GROUP_A,
    GROUP_B,
    DgdaParams,
    LossBreakdown,
    LossWeights,
    ModelDims,
    baseline_loss,
    make_batch,
    predict_proba,
    total_loss,
)
from .optim import OPTIMIZERS, Optimizer

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dgda-checkpoint"
CHECKPOINT_VERSION = 1
MODES = ("dgda", "source_only", "target_supervised")
KL_REDUCTIONS = ("node_mean", "element_mean", "sum")
TRACE_COLUMNS = ("epoch", "recon", "kl_d", "kl_y", "kl_o", "l_d", "l_y", "l_o", "l_e",
                 "total_p1", "total_p2", "val_f1", "seconds")

# stream tags for derived seeds
_S_INIT, _S_VAL, _S_BATCH, _S_EPS1, _S_AUG, _S_EPS2 = range(6)


@dataclass
class TrainConfig:
    gamma: float = 1.0
    alpha: float = 1.0
    omega: float = 0.1
    delta: float = 5.0
    learning_rate: float = 0.001
    weight_decay: float = 0.0005
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    p_drop: float = 0.1
    p_add: float = 0.1
    hidden: int = 256
    depth: int = 2
    dim_zd: int = 256
    dim_zy: int = 256
    dim_zo: int = 128
    decoder_hidden: int = 64
    decoder_out: int = 64
    classifier_hidden: int = 64
    optimizer: str = "sgd"
    kl_reduction: str = "node_mean"
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for name in ("p_drop", "p_add"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        for name in ("batch_size", "max_epochs", "patience", "hidden", "depth", "dim_zd", "dim_zy",
                     "dim_zo", "decoder_hidden", "decoder_out", "classifier_hidden"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        for name in ("gamma", "alpha", "omega", "delta", "weight_decay", "learning_rate"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v >= 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be a finite non-negative number, got {v!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.kl_reduction not in KL_REDUCTIONS:
            raise ConfigError(f"kl_reduction must be one of {KL_REDUCTIONS}, got {self.kl_reduction!r}")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.gamma, self.alpha, self.omega, self.delta)

    def dims(self, in_dim: int) -> ModelDims:
        return ModelDims(in_dim=in_dim, hidden=self.hidden, depth=self.depth, dim_zd=self.dim_zd,
                         dim_zy=self.dim_zy, dim_zo=self.dim_zo, decoder_hidden=self.decoder_hidden,
                         decoder_out=self.decoder_out, classifier_hidden=self.classifier_hidden)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig.from_dict({**self.to_dict(), **changes})

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ConfigError(f"unknown train config key(s): {unknown}")
        clean = {}
        for k, v in raw.items():
            if known[k].type in ("int",) and isinstance(v, float) and v.is_integer():
                v = int(v)
            if known[k].type in ("float",) and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            clean[k] = v
        return cls(**clean)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read train config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"train config {path} must be a JSON object")
        return cls.from_dict(raw)


@dataclass
class EpochTrace:
    epoch: int
    phase1: LossBreakdown
    phase2: Optional[LossBreakdown]
    val_f1: float
    seconds: float

    def row(self, timing: bool = True) -> dict:
        """One CSV row. Loss parts come from phase 1 except ``l_o``, which is
        only informative on perturbed graphs and is taken from phase 2."""
        p1 = self.phase1.as_dict()
        row = {"epoch": self.epoch}
        for k in ("recon", "kl_d", "kl_y", "kl_o", "l_d", "l_y", "l_o", "l_e"):
            row[k] = repr(p1[k])
        if self.phase2 is not None:
            row["l_o"] = repr(self.phase2.l_o)
        row["total_p1"] = repr(p1["total"])
        row["total_p2"] = "" if self.phase2 is None else repr(self.phase2.total)
        row["val_f1"] = repr(self.val_f1)
        row["seconds"] = f"{self.seconds:.4f}" if timing else ""
        return row

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "phase1": self.phase1.as_dict(),
            "phase2": None if self.phase2 is None else self.phase2.as_dict(),
            "val_f1": self.val_f1,
            "seconds": self.seconds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpochTrace":
        p2 = d["phase2"]
        return cls(d["epoch"], LossBreakdown(**d["phase1"]), None if p2 is None else LossBreakdown(**p2),
                   d["val_f1"], d["seconds"])

    def same_as(self, other: "EpochTrace") -> bool:
        """Equality ignoring wall-clock time."""
        return self.to_dict() | {"seconds": 0} == other.to_dict() | {"seconds": 0}


def trace_csv(trace: list[EpochTrace], timing: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=TRACE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for t in trace:
        writer.writerow(t.row(timing))
    return buf.getvalue()


def write_trace_csv(trace: list[EpochTrace], path, timing: bool = True) -> None:
    atomic_write(path, trace_csv(trace, timing))


@dataclass
class TrainResult:
    params: DgdaParams
    trace: list[EpochTrace]
    best_epoch: int
    best_val_f1: float
    stopped_early: bool


def _mean_breakdown(parts: list[LossBreakdown]) -> LossBreakdown:
    return LossBreakdown(**{k: float(np.mean([getattr(p, k) for p in parts])) for k in LossBreakdown.PARTS})


def _int_seed(*words: int) -> int:
    return int(np.random.SeedSequence([int(w) & 0xFFFFFFFFFFFFFFFF for w in words]).generate_state(1, np.uint64)[0] >> 1)


def _seq(*words: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(w) & 0xFFFFFFFFFFFFFFFF for w in words])


@dataclass
class _StopState:
    best_val_f1: float = -1.0
    best_epoch: int = 0
    since_best: int = 0
    stopped: bool = False


class Trainer:
    """Stateful training loop that can be checkpointed between epochs."""

    def __init__(self, split: DatasetSplit, cfg: TrainConfig, mode: str = "dgda",
                 allow_target_labels: bool = False):
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        if mode == "target_supervised" and not allow_target_labels:
            raise ConfigError("target_supervised reads target labels; pass allow_target_labels=True "
                              "to acknowledge it is an upper bound, not an adaptation method")
        self.input_split = split
        self.split = split if mode == "target_supervised" else split.for_training()
        self.cfg = cfg
        self.mode = mode
        self.allow_target_labels = allow_target_labels
        labeled_pool = self._labeled_pool()
        if not labeled_pool:
            raise DataValidationError("training split is empty")
        if mode == "dgda" and not split.target_train:
            raise DataValidationError("DGDA needs unlabeled target_train graphs")
        in_dim = labeled_pool[0].features.shape[1]
        self.params = DgdaParams.init(cfg.dims(in_dim), _int_seed(cfg.seed, _S_INIT))
        self.optimizer = Optimizer(cfg.optimizer, cfg.learning_rate, cfg.weight_decay)
        self.epoch = 0
        self.trace: list[EpochTrace] = []
        self.stop = _StopState()

        order = np.random.default_rng(_seq(cfg.seed, _S_VAL)).permutation(len(labeled_pool))
        n_val = min(len(labeled_pool) - 1, math.ceil(cfg.val_fraction * len(labeled_pool))) if cfg.val_fraction else 0
        self.val_graphs = [labeled_pool[i] for i in sorted(order[:n_val])]
        self.train_pool = [labeled_pool[i] for i in sorted(order[n_val:])]
        self.target_pool = [g.with_label(None) for g in split.target_train]

    def _labeled_pool(self) -> list[Graph]:
        graphs = self.split.target_train if self.mode == "target_supervised" else self.split.source_train
        missing = [i for i, g in enumerate(graphs) if g.label is None]
        if missing:
            which = "target_train" if self.mode == "target_supervised" else "source_train"
            raise DataValidationError(f"{which} graph {missing[0]} has no label")
        return list(graphs)

    @property
    def iterations_per_epoch(self) -> int:
        return math.ceil(len(self.train_pool) / self.cfg.batch_size)

    @property
    def update_names(self) -> tuple[list[str], list[str]]:
        if self.mode == "dgda":
            return self.params.names(GROUP_A), self.params.names(GROUP_B)
        names = [n for n in self.params.names(BASELINE_FAMILIES) if not n.startswith("e_y.W_sigma")]
        return names, []

    # ------------------------------------------------------------------

    def _check(self, value: float, where: str, seed_words) -> None:
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss in {where} (epoch {self.epoch}, batch seed {list(seed_words)})")

    def _step(self, root: T.Tensor, tape: T.Tape, names: list[str]) -> None:
        sub = {n: self.params[n] for n in names}
        grads = tape.backward(root, sub)
        self.optimizer.step(sub, grads)

    def sample_batches(self, it: int) -> list[Graph]:
        """Source batch followed by target batch for iteration ``it`` of this epoch."""
        cfg = self.cfg
        rng = np.random.default_rng(_seq(cfg.seed, _S_BATCH, self.epoch, it))
        src = [self.train_pool[i] for i in rng.integers(0, len(self.train_pool), cfg.batch_size)]
        tgt = [self.target_pool[i] for i in rng.integers(0, len(self.target_pool), cfg.batch_size)]
        return src + tgt

    def phase1_step(self, it: int, graphs: list[Graph]) -> LossBreakdown:
        """Clean-graph update of the extractor, domain/semantic encoders, decoder and classifiers."""
        cfg, e = self.cfg, self.epoch
        with T.Tape() as tape:
            root, br = total_loss(self.params, make_batch(graphs), cfg.weights,
                                  seed=_seq(cfg.seed, _S_EPS1, e, it), kl_reduction=cfg.kl_reduction)
        self._check(br.total, "phase 1", (cfg.seed, _S_EPS1, e, it))
        self._step(root, tape, self.update_names[0])
        return br

    def phase2_step(self, it: int, graphs: list[Graph]) -> LossBreakdown:
        """Update of the extractor and the noise path on edge-perturbed copies of ``graphs``."""
        cfg, e = self.cfg, self.epoch
        augmented = [augment(g, cfg.p_drop, cfg.p_add, _int_seed(cfg.seed, _S_AUG, e, it, j))
                     for j, g in enumerate(graphs)]
        with T.Tape() as tape:
            root, br = total_loss(self.params, make_batch(augmented), cfg.weights,
                                  seed=_seq(cfg.seed, _S_EPS2, e, it), kl_reduction=cfg.kl_reduction)
        self._check(br.total, "phase 2", (cfg.seed, _S_EPS2, e, it))
        self._step(root, tape, self.update_names[1])
        return br

    def _dgda_iteration(self, it: int) -> tuple[LossBreakdown, LossBreakdown]:
        graphs = self.sample_batches(it)
        return self.phase1_step(it, graphs), self.phase2_step(it, graphs)

    def _baseline_iteration(self, it: int) -> LossBreakdown:
        cfg, e = self.cfg, self.epoch
        rng = np.random.default_rng(_seq(cfg.seed, _S_BATCH, e, it))
        graphs = [self.train_pool[i] for i in rng.integers(0, len(self.train_pool), cfg.batch_size)]
        with T.Tape() as tape:
            root = baseline_loss(self.params, make_batch(graphs))
        value = root.item()
        self._check(value, "baseline step", (cfg.seed, _S_BATCH, e, it))
        self._step(root, tape, self.update_names[0])
        return LossBreakdown(0.0, 0.0, 0.0, 0.0, 0.0, value, 0.0, 0.0, value)

    def validation_f1(self) -> float:
        if not self.val_graphs:
            return 0.0
        probs = predict_proba(self.params, self.val_graphs)
        return f1_score((probs >= 0.5).astype(int).tolist(), [g.label for g in self.val_graphs])

    def train_epoch(self) -> EpochTrace:
        start = time.perf_counter()
        p1, p2 = [], []
        for it in range(self.iterations_per_epoch):
            if self.mode == "dgda":
                a, b = self._dgda_iteration(it)
                p1.append(a)
                p2.append(b)
            else:
                p1.append(self._baseline_iteration(it))
        val = self.validation_f1()
        row = EpochTrace(self.epoch, _mean_breakdown(p1), _mean_breakdown(p2) if p2 else None,
                         val, time.perf_counter() - start)
        self.trace.append(row)
        self.epoch += 1

        s = self.stop
        if val > s.best_val_f1:
            s.best_val_f1, s.best_epoch, s.since_best = val, row.epoch, 0
        else:
            s.since_best += 1
            if s.since_best >= self.cfg.patience:
                s.stopped = True
        log.debug("epoch %d: p1=%.4f val_f1=%.3f", row.epoch, row.phase1.total, val)
        return row

    def run(self, until_epoch: Optional[int] = None) -> TrainResult:
        """Train until ``until_epoch`` (default ``max_epochs``) or early stop."""
        limit = self.cfg.max_epochs if until_epoch is None else min(until_epoch, self.cfg.max_epochs)
        while self.epoch < limit and not self.stop.stopped:
            self.train_epoch()
        return self.result()

    def result(self) -> TrainResult:
        return TrainResult(self.params, list(self.trace), self.stop.best_epoch,
                           self.stop.best_val_f1, self.stop.stopped)

    # ------------------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "mode": self.mode,
            "allow_target_labels": self.allow_target_labels,
            "config": self.cfg.to_dict(),
            "dataset_hash": dataset_hash(self.input_split),
            "epoch": self.epoch,
            "params": self.params.to_dict(),
            "optimizer": self.optimizer.state_dict(),
            "trace": [t.to_dict() for t in self.trace],
            "stop": asdict(self.stop),
        }

    def save_checkpoint(self, path) -> None:
        atomic_write(path, json.dumps(self.state_dict()) + "\n")

    @classmethod
    def resume(cls, path, split: DatasetSplit) -> "Trainer":
        """Rebuild a trainer from a checkpoint taken on ``split``."""
        p = Path(path)
        if not p.exists():
            raise CheckpointError(f"checkpoint {p} does not exist")
        try:
            state = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt checkpoint {p}: {exc.msg}") from None
        if not isinstance(state, dict) or state.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{p} is not a training checkpoint")
        if state.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {state.get('version')!r}")
        if state["dataset_hash"] != dataset_hash(split):
            raise CheckpointError("checkpoint was taken on a different dataset")
        try:
            cfg = TrainConfig.from_dict(state["config"])
            trainer = cls(split, cfg, state["mode"], state["allow_target_labels"])
            params = DgdaParams.from_dict(state["params"], trainer.params.dims)
            trainer.params.load_arrays(params.arrays())
            trainer.optimizer = Optimizer.from_state(state["optimizer"])
            trainer.epoch = int(state["epoch"])
            trainer.trace = [EpochTrace.from_dict(t) for t in state["trace"]]
            trainer.stop = _StopState(**state["stop"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"corrupt checkpoint {p}: {exc}") from None
        return trainer


def train(split: DatasetSplit, cfg: TrainConfig) -> TrainResult:
    """DGDA training on ``split`` (target-train labels are masked first)."""
    return Trainer(split, cfg, "dgda").run()


def train_baseline(split: DatasetSplit, cfg: TrainConfig, mode: str,
                   allow_target_labels: bool = False) -> TrainResult:
    """Supervised extractor + label head, on source (``source_only``) or
    labeled target graphs (``target_supervised``)."""
    if mode not in ("source_only", "target_supervised"):
        raise ConfigError(f"baseline mode must be source_only or target_supervised, got {mode!r}")
    return Trainer(split, cfg, mode, allow_target_labels).run()

"""Synthetic graph-classification pairs with a controllable domain shift.

Each graph is a two-block planted partition. The class label sets the
intra/inter block edge densities; the domain sets the block-size ratio,
the edge flip rate and a mean shift on the node features. Structure
and nuisance factors are drawn independently, so label, domain and noise
act as separate latent causes of the observed graph.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ConfigError
from .graph import DOMAINS, DatasetSplit, Graph, standardize, structural_features

SPLIT_CODES = {"source_train": 0, "source_test": 1, "target_train": 2, "target_test": 3}


def _per_domain(value, name: str) -> dict[str, float]:
    if isinstance(value, dict):
        missing = [d for d in DOMAINS if d not in value]
        if missing:
            raise ConfigError(f"{name} is missing domain(s) {missing}")
        return {d: float(value[d]) for d in DOMAINS}
    return {d: float(value) for d in DOMAINS}


@dataclass
class GeneratorConfig:
    nodes_per_graph: int = 50
    graphs_per_split: dict = field(default_factory=lambda: {"train": 200, "test": 100})
    motif_density_in: dict = field(default_factory=lambda: {"0": 0.2, "1": 0.34})
    motif_density_out: dict = field(default_factory=lambda: {"0": 0.2, "1": 0.06})
    block_ratio: dict = field(default_factory=lambda: {"source": 0.5, "target": 0.5})
    feature_shift: dict = field(default_factory=lambda: {"source": 0.0, "target": 1.0})
    flip_rate: Union[float, dict] = field(default_factory=lambda: {"source": 0.0, "target": 0.1})
    feature_spec: list = field(default_factory=lambda: ["degree", "clustering", "pagerank", "coreness"])
    feature_noise: float = 1.0
    noise_features: int = 2
    standardize: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if int(self.nodes_per_graph) < 4:
            raise ConfigError("nodes_per_graph must be at least 4")
        gps = self.graphs_per_split
        if isinstance(gps, int):
            self.graphs_per_split = gps = {"train": gps, "test": gps}
        for key in ("train", "test"):
            if int(gps.get(key, 0)) < 2:
                raise ConfigError(f"graphs_per_split[{key!r}] must be at least 2")
        for name in ("motif_density_in", "motif_density_out"):
            table = {str(k): float(v) for k, v in getattr(self, name).items()}
            for lab in ("0", "1"):
                if lab not in table:
                    raise ConfigError(f"{name} needs an entry for label {lab}")
                if not 0.0 <= table[lab] <= 1.0:
                    raise ConfigError(f"infeasible {name}[{lab}] = {table[lab]}: densities lie in [0, 1]")
            setattr(self, name, table)
        ratios = _per_domain(self.block_ratio, "block_ratio")
        for d, r in ratios.items():
            if not 0.0 < r < 1.0:
                raise ConfigError(f"block_ratio[{d}] must lie strictly between 0 and 1")
        for d, r in _per_domain(self.flip_rate, "flip_rate").items():
            if not 0.0 <= r <= 1.0:
                raise ConfigError(f"infeasible flip_rate[{d}] = {r}")
        _per_domain(self.feature_shift, "feature_shift")
        structural_features(np.zeros((1, 1)), self.feature_spec)
        if self.feature_noise < 0 or self.noise_features < 0:
            raise ConfigError("feature_noise and noise_features must be non-negative")
        if not self.feature_spec and not self.noise_features:
            raise ConfigError("graphs need at least one feature column")

    @property
    def feature_dim(self) -> int:
        return len(self.feature_spec) + int(self.noise_features)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown generator config key(s): {unknown}")
        return cls(**raw)

    @classmethod
    def from_json(cls, path) -> "GeneratorConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read generator config {path}: {exc}") from exc
        return cls.from_dict(raw)


def graph_seed(master: int, split: int, index: int) -> np.random.SeedSequence:
    """Independent stream for graph ``index`` of split ``split``."""
    return np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, split, index])


def sample_graph(cfg: GeneratorConfig, domain: str, label: int, seed) -> tuple[Graph, np.ndarray]:
    """Draw one graph; also returns the planted block of every node."""
    rng = np.random.default_rng(seed)
    n = int(cfg.nodes_per_graph)
    ratio = _per_domain(cfg.block_ratio, "block_ratio")[domain]
    rho = _per_domain(cfg.flip_rate, "flip_rate")[domain]
    shift = _per_domain(cfg.feature_shift, "feature_shift")[domain]
    n_first = min(max(int(round(ratio * n)), 1), n - 1)
    blocks = rng.permutation(np.r_[np.zeros(n_first, int), np.ones(n - n_first, int)])

    same = blocks[:, None] == blocks[None, :]
    p = np.where(same, cfg.motif_density_in[str(label)], cfg.motif_density_out[str(label)])
    planted = rng.random((n, n)) < p
    flipped = rng.random((n, n)) < rho
    upper = np.triu(planted ^ flipped, 1).astype(np.float64)
    adjacency = upper + upper.T

    cols = [structural_features(adjacency, cfg.feature_spec)]
    if cfg.noise_features:
        cols.append(shift + cfg.feature_noise * rng.standard_normal((n, int(cfg.noise_features))))
    return Graph(adjacency, np.hstack(cols), label=label, domain=domain), blocks


def generate_synthetic_pair(cfg: GeneratorConfig, seed=None) -> DatasetSplit:
    """Source/target train/test splits drawn from ``cfg``.

    Labels alternate within each split, so classes are balanced to within
    one graph. ``seed`` overrides ``cfg.seed``.
    """
    cfg.validate()
    master = cfg.seed if seed is None else int(seed)
    parts = {}
    for name, code in SPLIT_CODES.items():
        domain, phase = name.split("_")
        count = int(cfg.graphs_per_split[phase])
        parts[name] = [
            sample_graph(cfg, domain, i % 2, graph_seed(master, code, i))[0] for i in range(count)
        ]
    meta = {"generator": {**cfg.to_dict(), "seed": master}}
    split = DatasetSplit(**parts, metadata=meta)
    return standardize(split) if cfg.standardize else split

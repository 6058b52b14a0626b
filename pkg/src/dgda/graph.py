"""Graph containers, GCN normalization, edge perturbation and node features."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, DataValidationError

DOMAINS = ("source", "target")


@dataclass(eq=False)
class Graph:
    """Undirected simple graph with node features.

    ``adjacency`` is a dense symmetric 0/1 matrix with zero diagonal.
    ``label`` is None when the class is unknown (or hidden from training).
    """

    adjacency: np.ndarray
    features: np.ndarray
    label: Optional[int] = None
    domain: str = "source"

    def __post_init__(self) -> None:
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features.reshape(-1, 1)
        self.validate()

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return int(np.triu(self.adjacency, 1).sum())

    def validate(self) -> None:
        a = self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DataValidationError(f"adjacency must be square, got shape {a.shape}")
        if a.shape[0] < 1:
            raise DataValidationError("graph has no nodes")
        if not np.all((a == 0) | (a == 1)):
            raise DataValidationError("adjacency entries must be 0 or 1")
        if np.any(np.diag(a) != 0):
            i = int(np.flatnonzero(np.diag(a))[0])
            raise DataValidationError(f"self-loop at node {i}")
        asym = np.argwhere(a != a.T)
        if len(asym):
            i, j = (int(v) for v in asym[0])
            raise DataValidationError(f"adjacency not symmetric at pair ({i}, {j})")
        if self.features.ndim != 2 or self.features.shape[0] != a.shape[0]:
            raise DataValidationError(
                f"features have {self.features.shape[0]} rows for {a.shape[0]} nodes"
            )
        if not np.all(np.isfinite(self.features)):
            raise DataValidationError("features contain non-finite values")
        if self.label not in (None, 0, 1):
            raise DataValidationError(f"label must be 0, 1 or null, got {self.label!r}")
        if self.domain not in DOMAINS:
            raise DataValidationError(f"domain must be one of {DOMAINS}, got {self.domain!r}")

    def with_label(self, label: Optional[int]) -> "Graph":
        return replace(self, label=label)

    def edges(self) -> list[tuple[int, int]]:
        iu, ju = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(i), int(j)) for i, j in zip(iu, ju)]

    def permuted(self, perm: Sequence[int]) -> "Graph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        p = np.asarray(perm)
        return replace(self, adjacency=self.adjacency[np.ix_(p, p)], features=self.features[p])

    def same_as(self, other: "Graph") -> bool:
        return (
            self.label == other.label
            and self.domain == other.domain
            and np.array_equal(self.adjacency, other.adjacency)
            and np.array_equal(self.features, other.features)
        )


@dataclass(eq=False)
class AugmentedGraph:
    """A perturbed view of ``base`` plus the signed perturbation record."""

    base: Graph
    a_prime: np.ndarray
    a_noise: np.ndarray
    p_drop: float
    p_add: float
    seed: int

    @property
    def n(self) -> int:
        return self.base.n


@dataclass(eq=False)
class DatasetSplit:
    source_train: list[Graph]
    source_test: list[Graph]
    target_train: list[Graph]
    target_test: list[Graph]
    metadata: dict = field(default_factory=dict)

    SPLITS = ("source_train", "source_test", "target_train", "target_test")

    def parts(self) -> dict[str, list[Graph]]:
        return {name: getattr(self, name) for name in self.SPLITS}

    def for_training(self) -> "DatasetSplit":
        """Copy with target-train labels masked out."""
        return replace(self, target_train=[g.with_label(None) for g in self.target_train])

    def same_as(self, other: "DatasetSplit") -> bool:
        for name in self.SPLITS:
            a, b = getattr(self, name), getattr(other, name)
            if len(a) != len(b) or not all(x.same_as(y) for x, y in zip(a, b)):
                return False
        return True


def normalize_adjacency(adjacency) -> np.ndarray:
    """Symmetric GCN propagation matrix ``D^-1/2 (A + I) D^-1/2``.

    Accepts a :class:`Graph` or a raw adjacency matrix.
    """
    a = adjacency.adjacency if isinstance(adjacency, Graph) else np.asarray(adjacency, dtype=np.float64)
    a_tilde = a + np.eye(a.shape[0])
    d = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return d[:, None] * a_tilde * d[None, :]


def edge_density(adjacency: np.ndarray) -> float:
    """Fraction of unordered node pairs joined by an edge."""
    n = adjacency.shape[0]
    pairs = n * (n - 1) / 2
    if pairs == 0:
        return 0.0
    return float(np.triu(adjacency, 1).sum() / pairs)


def augment(g: Graph, p_drop: float, p_add: float, seed: int) -> AugmentedGraph:
    """Randomly drop existing edges and add absent ones.

    Every existing edge is dropped with probability ``p_drop``. Every
    absent pair gains an edge with probability ``edge_density * p_add``.
    Draws happen on the upper triangle and are mirrored; the diagonal is
    never touched.
    """
    for name, p in (("p_drop", p_drop), ("p_add", p_add)):
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"{name} must lie in [0, 1], got {p}")
    a = g.adjacency
    n = a.shape[0]
    iu = np.triu_indices(n, 1)
    present = a[iu] == 1
    rng = np.random.default_rng(seed)
    u_drop = rng.random(present.size)
    u_add = rng.random(present.size)
    p_add_pair = edge_density(a) * p_add
    kept = present & ~(u_drop < p_drop)
    added = ~present & (u_add < p_add_pair)
    upper = np.zeros((n, n))
    upper[iu] = (kept | added).astype(np.float64)
    a_prime = upper + upper.T
    return AugmentedGraph(g, a_prime, a_prime - a, float(p_drop), float(p_add), int(seed))


# ---------------------------------------------------------------------------
# structural node features

FEATURES = ("degree", "coreness", "pagerank", "clustering", "eigenvector")


def degree(a: np.ndarray) -> np.ndarray:
    return a.sum(axis=1)


def coreness(a: np.ndarray) -> np.ndarray:
    """k-core number of every node by repeated minimum-degree peeling."""
    n = a.shape[0]
    deg = a.sum(axis=1).astype(int)
    alive = np.ones(n, dtype=bool)
    core = np.zeros(n)
    k = 0
    for _ in range(n):
        cand = np.flatnonzero(alive)
        v = cand[np.argmin(deg[cand])]
        k = max(k, deg[v])
        core[v] = k
        alive[v] = False
        nbrs = np.flatnonzero((a[v] > 0) & alive)
        deg[nbrs] -= 1
    return core


def pagerank(a: np.ndarray, damping: float = 0.85, tol: float = 1e-9, max_iter: int = 200) -> np.ndarray:
    """Power-iteration PageRank; dangling nodes spread their mass uniformly."""
    n = a.shape[0]
    out_deg = a.sum(axis=1)
    dangling = out_deg == 0
    safe = np.where(dangling, 1.0, out_deg)
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        prev = x
        x = damping * (a.T @ (prev / safe) + prev[dangling].sum() / n) + (1.0 - damping) / n
        if np.abs(x - prev).sum() < n * tol:
            break
    return x


def clustering(a: np.ndarray) -> np.ndarray:
    deg = a.sum(axis=1)
    tri = np.einsum("ij,jk,ki->i", a, a, a) / 2.0
    possible = deg * (deg - 1) / 2.0
    return np.divide(tri, possible, out=np.zeros_like(tri), where=possible > 0)


def eigenvector_centrality(a: np.ndarray, tol: float = 1e-9, max_iter: int = 200) -> np.ndarray:
    """Leading eigenvector of ``A`` via power iteration on ``A + I``, L2-normalized."""
    n = a.shape[0]
    x = np.full(n, 1.0 / np.sqrt(n))
    shifted = a + np.eye(n)
    for _ in range(max_iter):
        prev = x
        x = shifted @ prev
        x /= np.linalg.norm(x)
        if np.abs(x - prev).sum() < n * tol:
            break
    return x


_FEATURE_FNS = {
    "degree": degree,
    "coreness": coreness,
    "pagerank": pagerank,
    "clustering": clustering,
    "eigenvector": eigenvector_centrality,
}


def structural_features(g, spec: Sequence[str]) -> np.ndarray:
    """Stack the named per-node statistics as columns, in ``spec`` order."""
    a = g.adjacency if isinstance(g, Graph) else np.asarray(g, dtype=np.float64)
    unknown = [s for s in spec if s not in _FEATURE_FNS]
    if unknown:
        raise ConfigError(f"unknown structural feature(s) {unknown}; known: {FEATURES}")
    if not spec:
        return np.zeros((a.shape[0], 0))
    return np.column_stack([_FEATURE_FNS[s](a) for s in spec]).astype(np.float64)


def fit_standardizer(graphs: Sequence[Graph]) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and standard deviation over all nodes of ``graphs``."""
    stacked = np.vstack([g.features for g in graphs])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    return mean, np.where(std > 1e-12, std, 1.0)


def standardize(split: DatasetSplit) -> DatasetSplit:
    """Z-normalize features with statistics from ``source_train`` only."""
    mean, std = fit_standardizer(split.source_train)

    def fix(graphs):
        return [replace(g, features=(g.features - mean) / std) for g in graphs]

    meta = dict(split.metadata)
    meta["standardizer"] = {"mean": mean.tolist(), "std": std.tolist()}
    return DatasetSplit(*(fix(getattr(split, s)) for s in DatasetSplit.SPLITS), metadata=meta)

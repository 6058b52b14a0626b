"""JSON Lines dataset files.

A dataset directory holds ``graphs.jsonl`` (one graph per line) and an
optional ``meta.json`` with provenance. Each line carries::

    {"n": 5, "edges": [[0, 1], ...], "features": [[...], ...],
     "label": 0 | 1 | null, "domain": "source" | "target",
     "split": "train" | "test"}

Edges are 0-based with ``i < j``. A dense ``adjacency`` matrix may be given
instead of ``edges``. When ``features`` is absent every node gets a
single constant feature.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Union

import numpy as np

from .errors import DataValidationError
from .graph import DatasetSplit, Graph

GRAPHS_FILE = "graphs.jsonl"
META_FILE = "meta.json"
PathLike = Union[str, os.PathLike]


def _graphs_path(path: PathLike) -> Path:
    p = Path(path)
    return p / GRAPHS_FILE if p.is_dir() or p.suffix != ".jsonl" else p


def graph_to_record(g: Graph, split: str) -> dict:
    return {
        "n": g.n,
        "edges": [[i, j] for i, j in g.edges()],
        "features": g.features.tolist(),
        "label": g.label,
        "domain": g.domain,
        "split": split,
    }


def dumps_split(split: DatasetSplit) -> str:
    lines = []
    for name, graphs in split.parts().items():
        phase = name.split("_")[1]
        lines.extend(json.dumps(graph_to_record(g, phase), separators=(",", ":")) for g in graphs)
    return "\n".join(lines) + "\n"


def atomic_write(path: PathLike, text: str) -> None:
    """Write via a temporary sibling file and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(split: DatasetSplit, path: PathLike) -> Path:
    """Write ``split`` under directory ``path`` (or to a ``.jsonl`` file)."""
    path = Path(path)
    if path.suffix == ".jsonl":
        atomic_write(path, dumps_split(split))
        return path
    path.mkdir(parents=True, exist_ok=True)
    atomic_write(path / GRAPHS_FILE, dumps_split(split))
    if split.metadata:
        atomic_write(path / META_FILE, json.dumps(split.metadata, indent=2, sort_keys=True) + "\n")
    return path / GRAPHS_FILE


def _record_to_graph(rec: dict, where: str) -> tuple[Graph, str]:
    if not isinstance(rec, dict):
        raise DataValidationError(f"{where}: expected a JSON object")
    for key in ("n", "domain", "split"):
        if key not in rec:
            raise DataValidationError(f"{where}: missing key {key!r}")
    n = rec["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise DataValidationError(f"{where}: n must be a positive integer")
    if rec["split"] not in ("train", "test"):
        raise DataValidationError(f"{where}: split must be 'train' or 'test', got {rec['split']!r}")
    if "adjacency" in rec:
        adjacency = np.asarray(rec["adjacency"], dtype=np.float64)
        if adjacency.shape != (n, n):
            raise DataValidationError(f"{where}: adjacency shape {adjacency.shape} != ({n}, {n})")
    else:
        adjacency = np.zeros((n, n))
        for pair in rec.get("edges", []):
            if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(v, int) for v in pair)):
                raise DataValidationError(f"{where}: malformed edge {pair!r}")
            i, j = pair
            if not (0 <= i < n and 0 <= j < n):
                raise DataValidationError(f"{where}: edge ({i}, {j}) out of range for n={n}")
            if i >= j:
                raise DataValidationError(f"{where}: edge ({i}, {j}) must satisfy i < j")
            if adjacency[i, j]:
                raise DataValidationError(f"{where}: duplicate edge ({i}, {j})")
            adjacency[i, j] = adjacency[j, i] = 1.0
    features = rec.get("features")
    features = np.ones((n, 1)) if features is None else np.asarray(features, dtype=np.float64)
    try:
        g = Graph(adjacency, features, label=rec.get("label"), domain=rec["domain"])
    except DataValidationError as exc:
        raise DataValidationError(f"{where}: {exc}") from None
    return g, rec["split"]


def loads_split(text: str, metadata: dict | None = None) -> DatasetSplit:
    parts: dict[str, list[Graph]] = {name: [] for name in DatasetSplit.SPLITS}
    index = 0
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"line {lineno}: JSON parse error: {exc.msg}") from None
        where = f"graph {index} (line {lineno})"
        g, phase = _record_to_graph(rec, where)
        if width is None:
            width = g.features.shape[1]
        elif g.features.shape[1] != width:
            raise DataValidationError(f"{where}: {g.features.shape[1]} feature columns, expected {width}")
        name = f"{g.domain}_{phase}"
        if g.label is None and name != "target_train":
            raise DataValidationError(f"{where}: {name} graphs must carry a label")
        parts[name].append(g)
        index += 1
    if not parts["source_train"]:
        raise DataValidationError("dataset has no source/train graphs")
    return DatasetSplit(**parts, metadata=metadata or {})


def load_dataset(path: PathLike) -> DatasetSplit:
    """Read and validate a dataset directory or ``.jsonl`` file."""
    gpath = _graphs_path(path)
    if not gpath.exists():
        raise DataValidationError(f"dataset file {gpath} does not exist")
    meta = {}
    mpath = gpath.parent / META_FILE
    if gpath.name == GRAPHS_FILE and mpath.exists():
        try:
            meta = json.loads(mpath.read_text())
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"{mpath}: JSON parse error: {exc.msg}") from None
    return loads_split(gpath.read_text(encoding="utf-8"), meta)


def dataset_hash(split_or_path) -> str:
    """SHA-256 of the canonical JSON Lines serialization."""
    if isinstance(split_or_path, DatasetSplit):
        text = dumps_split(split_or_path)
    else:
        text = dumps_split(load_dataset(split_or_path))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()

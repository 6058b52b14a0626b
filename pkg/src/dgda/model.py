"""The DGDA network and its loss terms.

A shared GCN extractor produces node representations ``H``; three
variational GCN encoders map ``H`` to domain (``d``), semantic (``y``)
and noise (``o``) latents. An inner-product decoder reconstructs the
(possibly perturbed) adjacency from all three; a linear domain
classifier reads ``Z_d``, an MLP label classifier reads ``Z_y`` and a
second inner-product decoder reconstructs the perturbation mask from
``Z_o``.

Graphs are processed in batches by stacking node rows. Per-graph
quantities (readouts, adjacency reconstructions) are sliced back out, and
every loss is averaged over graphs.
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import tensor as T
from .errors import CheckpointError, DataValidationError, ShapeError
from .graph import AugmentedGraph, Graph, normalize_adjacency
from .tensor import Tensor

GROUPS = ("d", "y", "o")
LOG_SIGMA_CLAMP = 10.0
POS_WEIGHT_CAP = 1e4
PARAMS_FORMAT = "dgda-params"
PARAMS_VERSION = 1

FAMILIES = ("phi_f", "phi_d", "phi_y", "phi_o", "theta_g", "theta_d", "theta_y", "theta_o")
GROUP_A = ("phi_f", "phi_d", "phi_y", "theta_g", "theta_d", "theta_y")
GROUP_B = ("phi_f", "phi_o", "theta_o")
BASELINE_FAMILIES = ("phi_f", "phi_y", "theta_y")
DOMAIN_CODE = {"source": 0.0, "target": 1.0}


@dataclass(frozen=True)
class ModelDims:
    in_dim: int
    hidden: int = 256
    depth: int = 2
    dim_zd: int = 256
    dim_zy: int = 256
    dim_zo: int = 128
    decoder_hidden: int = 64
    decoder_out: int = 64
    classifier_hidden: int = 64

    def latent(self, k: str) -> int:
        return {"d": self.dim_zd, "y": self.dim_zy, "o": self.dim_zo}[k]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ModelDims":
        known = {f.name for f in fields(cls)}
        return cls(**{k: int(v) for k, v in raw.items() if k in known})


def _shapes(dims: ModelDims) -> dict[str, tuple[str, tuple[int, int]]]:
    """name -> (family, shape), in a fixed order."""
    out: dict[str, tuple[str, tuple[int, int]]] = {}
    width = dims.in_dim
    for i in range(dims.depth):
        out[f"f.layer{i}.W"] = ("phi_f", (width, dims.hidden))
        width = dims.hidden
    for k in GROUPS:
        out[f"e_{k}.W_mu"] = (f"phi_{k}", (dims.hidden, dims.latent(k)))
        out[f"e_{k}.W_sigma"] = (f"phi_{k}", (dims.hidden, dims.latent(k)))
    z_all = dims.dim_zd + dims.dim_zy + dims.dim_zo
    out["d_g.W_g0"] = ("theta_g", (z_all, dims.decoder_hidden))
    out["d_g.W_g1"] = ("theta_g", (dims.decoder_hidden, dims.decoder_out))
    out["c_d.W"] = ("theta_d", (dims.dim_zd, 1))
    out["c_d.b"] = ("theta_d", (1, 1))
    out["c_y.W0"] = ("theta_y", (dims.dim_zy, dims.classifier_hidden))
    out["c_y.b0"] = ("theta_y", (1, dims.classifier_hidden))
    out["c_y.W1"] = ("theta_y", (dims.classifier_hidden, 1))
    out["c_y.b1"] = ("theta_y", (1, 1))
    out["d_o.W_n0"] = ("theta_o", (dims.dim_zo, dims.decoder_hidden))
    out["d_o.W_n1"] = ("theta_o", (dims.decoder_hidden, dims.decoder_out))
    return out


class DgdaParams(Mapping):
    """All trainable weights, addressable by stable dotted names."""

    def __init__(self, dims: ModelDims, tensors: Mapping[str, Tensor]):
        layout = _shapes(dims)
        if list(tensors) != list(layout):
            missing = sorted(set(layout) - set(tensors))
            extra = sorted(set(tensors) - set(layout))
            raise ShapeError(f"parameter names do not match dims (missing {missing}, unexpected {extra})")
        for name, (_, shape) in layout.items():
            if tensors[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {tensors[name].shape}")
        self.dims = dims
        self.tensors = dict(tensors)
        self.family = {name: fam for name, (fam, _) in layout.items()}

    @classmethod
    def init(cls, dims: ModelDims, seed: int) -> "DgdaParams":
        """Fan-based uniform init ``U(-sqrt(6/(in+out)), +sqrt(6/(in+out)))``; biases start at 0."""
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
        tensors = {}
        for name, (_, (fin, fout)) in _shapes(dims).items():
            if name.split(".")[-1].startswith("b"):
                data = np.zeros((fin, fout))
            else:
                bound = np.sqrt(6.0 / (fin + fout))
                data = rng.uniform(-bound, bound, size=(fin, fout))
            tensors[name] = Tensor(data, requires_grad=True, name=name)
        return cls(dims, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self, families: Sequence[str]) -> list[str]:
        return [n for n in self.tensors if self.family[n] in families]

    def subset(self, families: Sequence[str]) -> dict[str, Tensor]:
        return {n: self.tensors[n] for n in self.names(families)}

    def copy(self) -> "DgdaParams":
        return DgdaParams(
            self.dims,
            {n: Tensor(t.data, requires_grad=True, name=n) for n, t in self.tensors.items()},
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.tensors.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for n, arr in arrays.items():
            self.tensors[n].data[...] = arr

    def to_dict(self) -> dict:
        return {
            "format": PARAMS_FORMAT,
            "version": PARAMS_VERSION,
            "dims": self.dims.to_dict(),
            "params": {
                n: {"shape": list(t.shape), "values": t.data.reshape(-1).tolist()}
                for n, t in self.tensors.items()
            },
        }

    @classmethod
    def from_dict(cls, doc: Mapping, dims: Optional[ModelDims] = None) -> "DgdaParams":
        if doc.get("format") != PARAMS_FORMAT:
            raise CheckpointError(f"not a parameter file (format {doc.get('format')!r})")
        if doc.get("version") != PARAMS_VERSION:
            raise CheckpointError(f"unsupported parameter file version {doc.get('version')!r}")
        stored = ModelDims.from_dict(doc["dims"])
        if dims is not None and dims != stored:
            raise CheckpointError(f"parameter file dims {stored} do not match config {dims}")
        tensors = {}
        try:
            for name, (_, shape) in _shapes(stored).items():
                entry = doc["params"][name]
                if tuple(entry["shape"]) != shape:
                    raise CheckpointError(f"{name}: stored shape {entry['shape']} != expected {list(shape)}")
                data = np.array(entry["values"], dtype=np.float64).reshape(shape)
                tensors[name] = Tensor(data, requires_grad=True, name=name)
        except (KeyError, ValueError, TypeError) as exc:
            raise CheckpointError(f"corrupt parameter file: {exc}") from None
        return cls(stored, tensors)

    def save(self, path) -> None:
        from .datasets import atomic_write

        atomic_write(path, json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path, dims: Optional[ModelDims] = None) -> "DgdaParams":
        p = Path(path)
        if not p.exists():
            raise CheckpointError(f"parameter file {p} does not exist")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt parameter file {p}: {exc.msg}") from None
        return cls.from_dict(doc, dims)


# ---------------------------------------------------------------------------
# batches

@dataclass
class GraphBatch:
    """Stacked node rows of several graphs plus their per-graph targets."""

    a_hats: list[np.ndarray]
    x: np.ndarray
    sizes: list[int]
    recon_targets: list[np.ndarray]
    noise_targets: list[np.ndarray]
    domains: np.ndarray
    labels: list[Optional[int]]
    recon_weights: list[np.ndarray] = field(default_factory=list)
    noise_weights: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(set(self.sizes)) == 1 and len(self.sizes) > 1:
            self.propagator = np.stack(self.a_hats)
        else:
            self.propagator = self.a_hats
        if not self.recon_weights:
            self.recon_weights = [pair_weights(t) for t in self.recon_targets]
        if not self.noise_weights:
            self.noise_weights = [pair_weights(t) for t in self.noise_targets]

    @property
    def num_graphs(self) -> int:
        return len(self.sizes)

    def bounds(self) -> list[tuple[int, int]]:
        edges = np.cumsum([0] + self.sizes)
        return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def make_batch(items: Sequence[Union[Graph, AugmentedGraph]]) -> GraphBatch:
    """Batch clean graphs (A' = A, no perturbation) and/or augmented graphs."""
    if not items:
        raise ShapeError("empty batch")
    a_hats, xs, sizes, recon, noise, domains, labels = [], [], [], [], [], [], []
    for it in items:
        if isinstance(it, AugmentedGraph):
            g, a_prime, a_noise = it.base, it.a_prime, it.a_noise
        else:
            g, a_prime, a_noise = it, it.adjacency, np.zeros_like(it.adjacency)
        a_hats.append(normalize_adjacency(a_prime))
        xs.append(g.features)
        sizes.append(g.n)
        recon.append(a_prime)
        noise.append(np.abs(a_noise))
        domains.append(DOMAIN_CODE[g.domain])
        labels.append(g.label)
    widths = {x.shape[1] for x in xs}
    if len(widths) != 1:
        raise ShapeError(f"graphs in a batch have different feature widths {sorted(widths)}")
    return GraphBatch(a_hats, np.vstack(xs), sizes, recon, noise, np.array(domains), labels)


# ---------------------------------------------------------------------------
# layers

def gcn_layer(a_hat, x: Tensor, w: Tensor, activation: bool = True) -> Tensor:
    """``A_hat X W`` with optional ReLU; ``a_hat`` may be a list of blocks."""
    if x.cols != w.rows:
        raise ShapeError(f"gcn_layer: features {x.shape} do not chain with weights {w.shape}")
    out = T.propagate(a_hat, T.matmul(x, w))
    return T.relu(out) if activation else out


def extract_features(params: DgdaParams, a_hat, x) -> Tensor:
    """Shared extractor: ``depth`` stacked ReLU GCN layers."""
    h = x if isinstance(x, Tensor) else Tensor(x)
    if h.cols != params.dims.in_dim:
        raise ShapeError(f"extract_features: expected {params.dims.in_dim} feature columns, got {h.cols}")
    for i in range(params.dims.depth):
        h = gcn_layer(a_hat, h, params[f"f.layer{i}.W"], activation=True)
    return h


@dataclass
class LatentGroup:
    mu: Tensor
    log_sigma: Tensor
    z: Tensor
    eps: Optional[np.ndarray]


def encode_group(
    params: DgdaParams,
    k: str,
    a_hat,
    h: Tensor,
    noise_seed=None,
    eps: Optional[np.ndarray] = None,
    deterministic: bool = False,
) -> LatentGroup:
    """Variational encoder for latent group ``k``.

    ``mu`` and ``log_sigma`` are single linear GCN layers; ``log_sigma`` is
    clamped to [-10, 10]. The sample is ``mu + exp(log_sigma) * eps`` with
    ``eps`` either given or drawn from ``noise_seed``; in deterministic mode
    ``z`` is ``mu``.
    """
    if k not in GROUPS:
        raise ValueError(f"latent group must be one of {GROUPS}, got {k!r}")
    mu = gcn_layer(a_hat, h, params[f"e_{k}.W_mu"], activation=False)
    log_sigma = T.clip(
        gcn_layer(a_hat, h, params[f"e_{k}.W_sigma"], activation=False),
        -LOG_SIGMA_CLAMP,
        LOG_SIGMA_CLAMP,
    )
    if deterministic:
        return LatentGroup(mu, log_sigma, mu, None)
    if eps is None:
        eps = np.random.default_rng(noise_seed).standard_normal(mu.shape)
    elif eps.shape != mu.shape:
        raise ShapeError(f"encode_group: eps {eps.shape} vs mu {mu.shape}")
    z = T.add(mu, T.mul(T.exp(log_sigma), Tensor(eps)))
    return LatentGroup(mu, log_sigma, z, eps)


def kl_to_standard_normal(mu: Tensor, log_sigma: Tensor, sizes: Optional[Sequence[int]] = None,
                          reduction: str = "node_mean") -> Tensor:
    """``KL(N(mu, sigma^2) || N(0, I))`` summed over latent dimensions.

    ``node_mean`` divides each graph's total by its node count,
    ``element_mean`` also divides by the latent width, and ``sum`` keeps
    the per-graph total. In every case the result is averaged over the
    graphs delimited by ``sizes`` (one graph when omitted).
    """
    sizes = [mu.rows] if sizes is None else list(sizes)
    two_ls = T.scale(log_sigma, 2.0)
    inner = T.sub(T.sub(T.add(two_ls, Tensor(np.ones(mu.shape))), T.mul(mu, mu)), T.exp(two_ls))
    per_entry = T.scale(inner, -0.5)
    if reduction == "node_mean":
        per_graph = T.segment_mean(per_entry, sizes)
        return T.scale(T.sum_all(per_graph), 1.0 / len(sizes))
    if reduction == "element_mean":
        per_graph = T.segment_mean(per_entry, sizes)
        return T.scale(T.sum_all(per_graph), 1.0 / (len(sizes) * mu.cols))
    if reduction == "sum":
        return T.scale(T.sum_all(per_entry), 1.0 / len(sizes))
    raise ValueError(f"unknown KL reduction {reduction!r}")


def _mlp_embed(z: Tensor, w0: Tensor, w1: Tensor) -> Tensor:
    return T.matmul(T.relu(T.matmul(z, w0)), w1)


def graph_embedding(params: DgdaParams, z_d: Tensor, z_y: Tensor, z_o: Tensor) -> Tensor:
    """Decoder node embedding ``ReLU([Z_d | Z_y | Z_o] W_g0) W_g1``."""
    if not z_d.rows == z_y.rows == z_o.rows:
        raise ShapeError(f"decode_graph: row counts differ ({z_d.rows}, {z_y.rows}, {z_o.rows})")
    return _mlp_embed(T.concat_cols([z_d, z_y, z_o]), params["d_g.W_g0"], params["d_g.W_g1"])


def decode_graph_logits(params: DgdaParams, z_d: Tensor, z_y: Tensor, z_o: Tensor) -> Tensor:
    zg = graph_embedding(params, z_d, z_y, z_o)
    return T.matmul(zg, T.transpose(zg))


def decode_graph(params: DgdaParams, z_d: Tensor, z_y: Tensor, z_o: Tensor) -> Tensor:
    """Edge probabilities ``sigmoid(Z_g Z_g^T)`` for one graph."""
    return T.sigmoid(decode_graph_logits(params, z_d, z_y, z_o))


def pair_weights(target: np.ndarray, weighted: bool = True) -> np.ndarray:
    """Weights over off-diagonal unordered pairs (upper triangle).

    Present pairs are up-weighted by the absent/present ratio, capped at
    1e4; the diagonal and lower triangle get weight zero.
    """
    n = target.shape[0]
    upper = np.triu(np.ones((n, n)), 1)
    if not weighted:
        return upper
    pos = float((target * upper).sum())
    neg = float(upper.sum()) - pos
    w_pos = min(neg / pos, POS_WEIGHT_CAP) if pos > 0 else 1.0
    return upper * (1.0 + (w_pos - 1.0) * target)


def pairwise_bce(logits: Tensor, target: np.ndarray, weighted: bool = True) -> Tensor:
    """Weighted mean BCE over off-diagonal unordered pairs of one graph."""
    if logits.shape != target.shape:
        raise ShapeError(f"pairwise_bce: logits {logits.shape} vs target {target.shape}")
    w = pair_weights(target, weighted)
    total = w.sum()
    if total == 0:
        return Tensor(np.zeros((1, 1)))
    return T.scale(T.bce_with_logits(logits, target, w), 1.0 / total)


def reconstruction_loss(logits: Tensor, a_prime: np.ndarray, weighted: bool = True) -> Tensor:
    """Negative log-likelihood of ``a_prime`` under the decoder logits."""
    return pairwise_bce(logits, np.asarray(a_prime, dtype=np.float64), weighted)


def noise_logits(params: DgdaParams, z_o: Tensor) -> Tensor:
    r = _mlp_embed(z_o, params["d_o.W_n0"], params["d_o.W_n1"])
    return T.matmul(r, T.transpose(r))


def noise_loss(params: DgdaParams, z_o: Tensor, a_noise: np.ndarray, weighted: bool = True) -> Tensor:
    """BCE between ``sigmoid(R R^T)`` and the perturbation mask ``|a_noise|``."""
    return pairwise_bce(noise_logits(params, z_o), np.abs(np.asarray(a_noise, dtype=np.float64)), weighted)


def _batched_pair_loss(embed: Tensor, targets: Sequence[np.ndarray], sizes: Sequence[int],
                       weights: Sequence[np.ndarray]) -> Tensor:
    """Mean over graphs of :func:`pairwise_bce`, computed in one fused op."""
    scaled = []
    for w in weights:
        total = w.sum()
        scaled.append(w / (total * len(weights)) if total > 0 else w)
    return T.segment_gram_bce(embed, sizes, targets, scaled)


def _binary_head_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    return T.scale(T.bce_with_logits(logits, targets.reshape(-1, 1)), 1.0 / logits.rows)


def domain_logits(params: DgdaParams, z_d: Tensor, sizes: Sequence[int]) -> Tensor:
    readout = T.segment_mean(z_d, sizes)
    return T.add_row(T.matmul(readout, params["c_d.W"]), params["c_d.b"])


def domain_loss(params: DgdaParams, z_d: Tensor, sizes: Sequence[int], domains) -> Tensor:
    """Mean BCE of the linear domain classifier over all graphs (target = 1)."""
    if len(sizes) == 0:
        raise ShapeError("domain_loss: empty batch")
    codes = np.array([DOMAIN_CODE.get(d, d) if isinstance(d, str) else d for d in domains], dtype=np.float64)
    return _binary_head_loss(domain_logits(params, z_d, sizes), codes)


def label_logits(params: DgdaParams, z_y: Tensor, sizes: Sequence[int]) -> Tensor:
    readout = T.segment_mean(z_y, sizes)
    hidden = T.relu(T.add_row(T.matmul(readout, params["c_y.W0"]), params["c_y.b0"]))
    return T.add_row(T.matmul(hidden, params["c_y.W1"]), params["c_y.b1"])


def label_loss(params: DgdaParams, z_y: Tensor, sizes: Sequence[int], labels,
               domains: Optional[Sequence] = None) -> Tensor:
    """Mean BCE of the label classifier; every graph must be a labeled source graph."""
    if len(sizes) == 0:
        raise ShapeError("label_loss: empty batch")
    if any(lab is None for lab in labels):
        raise DataValidationError("label_loss: unlabeled graph in batch")
    if domains is not None and any(d in ("target", 1.0, 1) for d in domains):
        raise DataValidationError("label_loss: target-domain graphs carry no usable labels")
    return _binary_head_loss(label_logits(params, z_y, sizes), np.asarray(labels, dtype=np.float64))


def entropy_regularizer(z_d: Tensor, z_y: Tensor, z_o: Tensor,
                        sizes: Optional[Sequence[int]] = None) -> Tensor:
    """Sum over groups of the per-graph mean of ``sigmoid(z) * log(sigmoid(z))``, averaged over graphs."""
    sizes = [z_d.rows] if sizes is None else list(sizes)
    total = None
    for z in (z_d, z_y, z_o):
        plogp = T.mul(T.sigmoid(z), T.log_sigmoid(z))
        per_graph = T.segment_mean(plogp, sizes)
        term = T.scale(T.sum_all(per_graph), 1.0 / (len(sizes) * z.cols))
        total = term if total is None else T.add(total, term)
    return total


# ---------------------------------------------------------------------------
# full objective

@dataclass
class LossWeights:
    gamma: float = 1.0
    alpha: float = 1.0
    omega: float = 0.1
    delta: float = 5.0


@dataclass
class LossBreakdown:
    recon: float
    kl_d: float
    kl_y: float
    kl_o: float
    l_d: float
    l_y: float
    l_o: float
    l_e: float
    total: float

    PARTS = ("recon", "kl_d", "kl_y", "kl_o", "l_d", "l_y", "l_o", "l_e", "total")

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.PARTS}

    def weighted_sum(self, w: LossWeights) -> float:
        return (self.recon + self.kl_d + self.kl_y + self.kl_o + w.gamma * self.l_d
                + w.alpha * self.l_y + w.omega * self.l_o + w.delta * self.l_e)


@dataclass
class ForwardPass:
    h: Tensor
    latents: dict[str, LatentGroup]


def forward(params: DgdaParams, batch: GraphBatch, seed=None,
            eps: Optional[Mapping[str, np.ndarray]] = None, deterministic: bool = False) -> ForwardPass:
    h = extract_features(params, batch.propagator, batch.x)
    rng = np.random.default_rng(seed)
    latents = {}
    for k in GROUPS:
        e = None
        if not deterministic:
            e = eps[k] if eps is not None else rng.standard_normal((h.rows, params.dims.latent(k)))
        latents[k] = encode_group(params, k, batch.propagator, h, eps=e, deterministic=deterministic)
    return ForwardPass(h, latents)


def total_loss(params: DgdaParams, batch: Union[GraphBatch, Sequence], weights: LossWeights = LossWeights(),
               seed=None, eps: Optional[Mapping[str, np.ndarray]] = None,
               kl_reduction: str = "node_mean") -> tuple[Tensor, LossBreakdown]:
    """Minimized objective ``recon + sum KL + gamma l_d + alpha l_y + omega l_o + delta l_e``.

    Returns the scalar root (for backward) and the per-term breakdown.
    The label term covers only the labeled source graphs of the batch.
    """
    if not isinstance(batch, GraphBatch):
        batch = make_batch(batch)
    fp = forward(params, batch, seed=seed, eps=eps)
    z = {k: fp.latents[k].z for k in GROUPS}
    recon = _batched_pair_loss(graph_embedding(params, z["d"], z["y"], z["o"]), batch.recon_targets,
                               batch.sizes, batch.recon_weights)
    kls = {k: kl_to_standard_normal(fp.latents[k].mu, fp.latents[k].log_sigma, batch.sizes, kl_reduction)
           for k in GROUPS}
    l_d = domain_loss(params, z["d"], batch.sizes, batch.domains)

    labeled = np.array([lab is not None and dom == 0.0 for lab, dom in zip(batch.labels, batch.domains)])
    if labeled.any():
        targets = np.array([[float(lab) if m else 0.0] for lab, m in zip(batch.labels, labeled)])
        logits = label_logits(params, z["y"], batch.sizes)
        l_y = T.scale(T.bce_with_logits(logits, targets, labeled.astype(float)[:, None]), 1.0 / labeled.sum())
    else:
        l_y = Tensor(np.zeros((1, 1)))

    r = _mlp_embed(z["o"], params["d_o.W_n0"], params["d_o.W_n1"])
    l_o = _batched_pair_loss(r, batch.noise_targets, batch.sizes, batch.noise_weights)
    l_e = entropy_regularizer(z["d"], z["y"], z["o"], batch.sizes)

    root = T.add(T.add(T.add(recon, kls["d"]), kls["y"]), kls["o"])
    for term, w in ((l_d, weights.gamma), (l_y, weights.alpha), (l_o, weights.omega), (l_e, weights.delta)):
        root = T.add(root, T.scale(term, w))
    breakdown = LossBreakdown(
        recon=recon.item(), kl_d=kls["d"].item(), kl_y=kls["y"].item(), kl_o=kls["o"].item(),
        l_d=l_d.item(), l_y=l_y.item(), l_o=l_o.item(), l_e=l_e.item(), total=root.item(),
    )
    return root, breakdown


def baseline_loss(params: DgdaParams, batch: GraphBatch) -> Tensor:
    """Plain supervised objective: extractor, semantic mean path and label head only."""
    h = extract_features(params, batch.propagator, batch.x)
    mu_y = gcn_layer(batch.propagator, h, params["e_y.W_mu"], activation=False)
    if any(lab is None for lab in batch.labels):
        raise DataValidationError("baseline training needs labeled graphs")
    return _binary_head_loss(label_logits(params, mu_y, batch.sizes), np.asarray(batch.labels, dtype=np.float64))


# ---------------------------------------------------------------------------
# inference

def predict_proba(params: DgdaParams, graphs: Sequence[Graph]) -> np.ndarray:
    """Label probabilities on clean graphs using ``z_y = mu_y`` (no sampling)."""
    if not graphs:
        return np.zeros(0)
    batch = make_batch(list(graphs))
    with T.no_grad():
        h = extract_features(params, batch.propagator, batch.x)
        mu_y = gcn_layer(batch.propagator, h, params["e_y.W_mu"], activation=False)
        logits = label_logits(params, mu_y, batch.sizes).data[:, 0]
    return T.stable_sigmoid(logits)


def predict(params: DgdaParams, graph: Graph) -> tuple[float, int]:
    """``(probability of class 1, predicted class)`` for one clean graph."""
    prob = float(predict_proba(params, [graph])[0])
    return prob, int(prob >= 0.5)

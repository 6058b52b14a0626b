"""SGD and Adam with coupled (L2-style) weight decay."""

from __future__ import annotations

from collections.abc import Mapping
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor

OPTIMIZERS = ("sgd", "adam")


class Optimizer:
    """Updates named parameters in place.

    State is keyed by parameter name, so a single optimizer can serve
    several update groups that overlap (each ``step`` touches only the
    names it is given).
    """

    def __init__(
        self,
        kind: str = "sgd",
        learning_rate: float = 1e-3,
        weight_decay: float = 0.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        if kind not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {kind!r}; expected one of {OPTIMIZERS}")
        if not learning_rate >= 0:
            raise ConfigError(f"learning_rate must be non-negative, got {learning_rate}")
        if not weight_decay >= 0:
            raise ConfigError(f"weight_decay must be non-negative, got {weight_decay}")
        self.kind = kind
        self.learning_rate = float(learning_rate)
        self.weight_decay = float(weight_decay)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def step(self, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
             names: Optional[list[str]] = None) -> None:
        """Apply one update to ``names`` (default: every key of ``grads``)."""
        names = list(grads) if names is None else names
        for name in names:
            p, g = params[name], grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
            g = g + self.weight_decay * p.data if self.weight_decay else g
            if self.kind == "sgd":
                update = g
            else:
                b1, b2 = self.betas
                m = self.m.get(name, np.zeros_like(g))
                v = self.v.get(name, np.zeros_like(g))
                t = self.t.get(name, 0) + 1
                m = b1 * m + (1.0 - b1) * g
                v = b2 * v + (1.0 - b2) * g * g
                self.m[name], self.v[name], self.t[name] = m, v, t
                update = (m / (1.0 - b1**t)) / (np.sqrt(v / (1.0 - b2**t)) + self.eps)
            if self.learning_rate != 0.0:
                p.data -= self.learning_rate * update

    def state_dict(self) -> dict:
        return {
            "kind": self.kind,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "betas": list(self.betas),
            "eps": self.eps,
            "m": {k: v.tolist() for k, v in self.m.items()},
            "v": {k: v.tolist() for k, v in self.v.items()},
            "t": dict(self.t),
        }

    @classmethod
    def from_state(cls, state: dict) -> "Optimizer":
        opt = cls(state["kind"], state["learning_rate"], state["weight_decay"],
                  tuple(state["betas"]), state["eps"])
        opt.m = {k: np.array(v, dtype=np.float64) for k, v in state["m"].items()}
        opt.v = {k: np.array(v, dtype=np.float64) for k, v in state["v"].items()}
        opt.t = {k: int(v) for k, v in state["t"].items()}
        return opt


def optimizer_step(opt: Optimizer, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
                   names: Optional[list[str]] = None) -> Mapping[str, Tensor]:
    """Functional form of :meth:`Optimizer.step`; returns ``params`` updated in place."""
    opt.step(params, grads, names)
    return params

"""Parameter stores and small MLPs on top of :mod:`spacetime_set.tensor`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import tensor as T
from .tensor import Tensor

Params = Dict[str, Tensor]

_ACTIVATIONS = {"silu": T.silu, "relu": T.relu, "tanh": T.tanh}


def linear_count(fan_in: int, fan_out: int, bias: bool = True) -> int:
    return fan_in * fan_out + (fan_out if bias else 0)


def init_linear(
    params: Params,
    name: str,
    fan_in: int,
    fan_out: int,
    rng: np.random.Generator,
    bias: bool = True,
    scale: float = 1.0,
) -> None:
    """Uniform fan-in init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero bias."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    params[f"{name}.W"] = Tensor(scale * rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True)
    if bias:
        params[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)


def linear(params: Params, name: str, x: Tensor) -> Tensor:
    out = x @ params[f"{name}.W"]
    bias = params.get(f"{name}.b")
    return out if bias is None else out + bias


class Dropout:
    """Inverted dropout driven by an explicit generator; ``None`` means eval mode."""

    def __init__(self, rate: float, rng: np.random.Generator):
        self.rate = rate
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        if self.rate <= 0:
            return x
        keep = self.rng.random(x.shape) >= self.rate
        return x * (keep / (1.0 - self.rate))


@dataclass(frozen=True)
class MLP:
    """Stack of linear layers with an activation between them.

    ``final_activation`` also applies the activation after the last layer.
    ``final_bias=False`` and ``final_scale`` shape the output layer init.
    """

    name: str
    sizes: tuple[int, ...]
    activation: str = "silu"
    final_activation: bool = False
    final_bias: bool = True
    final_scale: float = 1.0

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def n_params(self) -> int:
        total = 0
        for k in range(self.n_layers):
            last = k == self.n_layers - 1
            total += linear_count(self.sizes[k], self.sizes[k + 1], bias=self.final_bias or not last)
        return total

    def init(self, params: Params, rng: np.random.Generator) -> None:
        for k in range(self.n_layers):
            last = k == self.n_layers - 1
            init_linear(
                params,
                f"{self.name}.{k}",
                self.sizes[k],
                self.sizes[k + 1],
                rng,
                bias=self.final_bias or not last,
                scale=self.final_scale if last else 1.0,
            )

    def __call__(self, params: Params, x: Tensor, dropout: Dropout | None = None) -> Tensor:
        act = _ACTIVATIONS[self.activation]
        for k in range(self.n_layers):
            x = linear(params, f"{self.name}.{k}", x)
            if k < self.n_layers - 1:
                x = act(x)
                if dropout is not None:
                    x = dropout(x)
            elif self.final_activation:
                x = act(x)
        return x


def param_count(params: Params) -> int:
    return sum(p.size for p in params.values())


def to_arrays(params: Params) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


def from_arrays(arrays: dict[str, np.ndarray]) -> Params:
    return {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}

"""Parameters, modules and the few layer types the detector is built from."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from . import ops
from .engine import DiffArray


@dataclass
class Parameter:
    name: str
    array: DiffArray
    trainable: bool = True

    @property
    def shape(self) -> tuple:
        return self.array.shape


def _param(values: np.ndarray) -> DiffArray:
    return DiffArray(values, requires_grad=True)


class Module:
    """Attribute-registered tree of parameters.

    Parameter names are dotted attribute paths; lists of modules contribute
    their index as a path segment. Registration order is attribute order,
    so names are stable across processes.
    """

    def named_parameters(self, prefix: str = "") -> List[Parameter]:
        found = []
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, DiffArray) and value.requires_grad:
                found.append(Parameter(path, value))
            elif isinstance(value, Module):
                found.extend(value.named_parameters(path + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        found.extend(item.named_parameters(f"{path}.{i}."))
        return found

    def parameters(self) -> List[DiffArray]:
        return [p.array for p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {p.name: p.array.values for p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = {p.name: p for p in self.named_parameters()}
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            values = np.asarray(state[name], dtype=np.float64)
            if values.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {values.shape} != model shape {p.shape}")
            p.array.values = values.copy()


class Linear(Module):
    """Affine map with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, zero: bool = False):
        bound = 1.0 / np.sqrt(in_dim)
        if zero:
            self.weight = _param(np.zeros((in_dim, out_dim)))
            self.bias = _param(np.zeros(out_dim))
        else:
            self.weight = _param(rng.uniform(-bound, bound, size=(in_dim, out_dim)))
            self.bias = _param(rng.uniform(-bound, bound, size=out_dim))

    def __call__(self, x) -> DiffArray:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.scale = _param(np.ones(dim))
        self.shift = _param(np.zeros(dim))

    def __call__(self, x) -> DiffArray:
        return ops.layer_norm(x, self.scale, self.shift)


class MLP(Module):
    """Stack of Linear layers with relu between them (none after the last)."""

    def __init__(self, dims: List[int], rng: np.random.Generator, zero_last: bool = False):
        self.layers = [
            Linear(dims[i], dims[i + 1], rng, zero=zero_last and i == len(dims) - 2)
            for i in range(len(dims) - 1)
        ]

    def __call__(self, x) -> DiffArray:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ops.relu(x)
        return x


class FeedForward(Module):
    """Position-wise FFN block with residual and post layer-norm."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.inner = Linear(dim, hidden, rng)
        self.outer = Linear(hidden, dim, rng)
        self.norm = LayerNorm(dim)

    def __call__(self, x) -> DiffArray:
        return self.norm(x + self.outer(ops.relu(self.inner(x))))

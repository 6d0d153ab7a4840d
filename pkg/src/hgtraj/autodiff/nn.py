"""Parameter containers built on the tape tensor."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal parameter tree. Attributes that are Tensors with
    ``requires_grad`` are parameters; Modules, lists and dicts are walked.
    """

    training: bool = True
    #: attribute names of non-trainable numpy arrays saved with the state
    buffer_names: tuple[str, ...] = ()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            yield from _walk(val, f"{prefix}{key}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key in self.buffer_names:
            yield f"{prefix}{key}", getattr(self, key)
        for key, val in vars(self).items():
            yield from _walk_buffers(val, f"{prefix}{key}")

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: p.data for k, p in self.named_parameters()}
        out.update(self.named_buffers())
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = {k: p.data for k, p in self.named_parameters()}
        own.update(self.named_buffers())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(extra)[:5]}")
        for k, arr in own.items():
            if arr.shape != state[k].shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {state[k].shape}")
            arr[...] = state[k]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            yield from _walk_modules(val)


def _walk(val, name: str):
    if isinstance(val, Tensor):
        if val.requires_grad:
            yield name, val
    elif isinstance(val, Module):
        yield from val.named_parameters(name + ".")
    elif isinstance(val, (list, tuple)):
        for i, v in enumerate(val):
            yield from _walk(v, f"{name}.{i}")
    elif isinstance(val, dict):
        for k in sorted(val):
            yield from _walk(val[k], f"{name}.{k}")


def _walk_buffers(val, name: str):
    if isinstance(val, Module):
        yield from val.named_buffers(name + ".")
    elif isinstance(val, (list, tuple)):
        for i, v in enumerate(val):
            yield from _walk_buffers(v, f"{name}.{i}")
    elif isinstance(val, dict):
        for k in sorted(val):
            yield from _walk_buffers(val[k], f"{name}.{k}")


def _walk_modules(val):
    if isinstance(val, Module):
        yield from val.modules()
    elif isinstance(val, (list, tuple)):
        for v in val:
            yield from _walk_modules(v)
    elif isinstance(val, dict):
        for k in sorted(val):
            yield from _walk_modules(val[k])


def param(shape, rng: np.random.Generator, fan_in: int | None = None) -> Tensor:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation."""
    fan_in = fan_in if fan_in is not None else shape[0]
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.w = param((d_in, d_out), rng)
        self.b = param((d_out,), rng, fan_in=d_in) if bias else None

    def __call__(self, x) -> Tensor:
        y = T.matmul(x, self.w)
        return y + self.b if self.b is not None else y


class MLP(Module):
    """Linear layers with ReLU between them (none after the last)."""

    def __init__(self, dims: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x

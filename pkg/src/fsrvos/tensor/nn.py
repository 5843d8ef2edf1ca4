"""Parameter containers and the layers built from them."""

from __future__ import annotations

import contextlib
import math
from typing import Iterator

import numpy as np

from . import ops
from .core import Tensor

MASKED = -1e30


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Holds parameters and submodules as attributes; names follow attribute paths."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            path = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if strict and missing:
            raise KeyError(f"missing parameters: {missing[:5]}{'...' if len(missing) > 5 else ''}")
        for name, p in own.items():
            if name not in state:
                continue
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: checkpoint {value.shape}, model {p.shape}")
            p.data = value.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, gain: float = 1.0):
        bound = gain * math.sqrt(6.0 / (d_in + d_out))
        self.weight = parameter(rng.uniform(-bound, bound, size=(d_in, d_out)))
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, stride: int = 1):
        if kernel not in (1, 3):
            raise ValueError(f"kernel must be 1 or 3, got {kernel}")
        fan_in = c_in * kernel * kernel
        self.weight = parameter(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(c_out, c_in, kernel, kernel)))
        self.bias = parameter(np.zeros(c_out))
        self._stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self._stride)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.weight = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ops.relu(self.fc1(x)))


_attention_log: list[np.ndarray] | None = None


@contextlib.contextmanager
def record_attention() -> Iterator[list[np.ndarray]]:
    """Collect every attention distribution computed inside the block."""
    global _attention_log
    saved = _attention_log
    _attention_log = []
    try:
        yield _attention_log
    finally:
        _attention_log = saved


def key_padding_bias(valid: np.ndarray) -> np.ndarray:
    """Additive logit bias that removes padded keys (``valid`` is boolean [..., S_k])."""
    return np.where(np.asarray(valid, dtype=bool), 0.0, MASKED)[..., None, :]


def attention(q: Tensor, k: Tensor, v: Tensor, bias: np.ndarray | None = None,
              scale_dim: int | None = None) -> Tensor:
    """``softmax(q kᵀ / sqrt(d)) v`` over the last two axes, with optional logit bias.

    ``d`` is the query width unless ``scale_dim`` overrides it.
    """
    d = q.shape[-1] if scale_dim is None else scale_dim
    logits = ops.scale(ops.matmul(q, ops.swap_last(k)), 1.0 / math.sqrt(d))
    if bias is not None:
        logits = logits + Tensor(bias)
    weights = ops.softmax(logits, axis=-1)
    if _attention_log is not None:
        _attention_log.append(weights.data)
    return ops.matmul(weights, v)


class MultiheadAttention(Module):
    """Scaled dot-product attention with ``heads`` heads and an output projection."""

    def __init__(self, d_query: int, d_kv: int, d_model: int, heads: int, rng: np.random.Generator, d_out: int | None = None):
        if d_model % heads:
            raise ValueError(f"d_model={d_model} not divisible by heads={heads}")
        self.q_proj = Linear(d_query, d_model, rng)
        self.k_proj = Linear(d_kv, d_model, rng)
        self.v_proj = Linear(d_kv, d_model, rng)
        self.out_proj = Linear(d_model, d_out or d_query, rng)
        self._heads = heads

    def _split(self, x: Tensor) -> Tensor:
        *lead, s, d = x.shape
        h = self._heads
        x = x.reshape(*lead, s, h, d // h)
        axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
        return x.transpose(axes)

    def __call__(self, query: Tensor, key: Tensor, value: Tensor, bias: np.ndarray | None = None) -> Tensor:
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))
        if bias is not None:
            bias = np.expand_dims(bias, -3)  # broadcast over heads
        out = attention(q, k, v, bias)
        *lead, h, s, dh = out.shape
        axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
        out = out.transpose(axes).reshape(*lead, s, h * dh)
        return self.out_proj(out)

"""Parameterized building blocks on top of the autograd engine.

Every module exposes ``params()`` returning ``{name: Tensor}`` so optimizers
and checkpoints can address parameters by stable dotted names. Weights use
fan-in-scaled uniform initialization, biases and norm offsets start at zero.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, dropout, embedding_lookup

__all__ = ["Linear", "Embedding", "LayerNorm", "FeedForward", "uniform_fan_in"]


def uniform_fan_in(
    rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype=np.float32
) -> np.ndarray:
    """U(-1/sqrt(fan_in), +1/sqrt(fan_in)) init, the classic linear default."""
    bound = 1.0 / np.sqrt(float(fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear:
    """Affine map ``x @ weight + bias`` with weight shape (d_in, d_out)."""

    def __init__(
        self,
        d_in: int,
        d_out: int,
        rng: np.random.Generator,
        bias: bool = True,
        dtype=np.float32,
    ):
        self.weight = Tensor(uniform_fan_in(rng, (d_in, d_out), d_in, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out

    def params(self) -> dict[str, Tensor]:
        named = {"weight": self.weight}
        if self.bias is not None:
            named["bias"] = self.bias
        return named


class Embedding:
    """Token id to vector lookup; table shape (vocab, dim)."""

    def __init__(self, vocab: int, dim: int, rng: np.random.Generator, dtype=np.float32):
        if vocab < 1:
            raise ValueError(f"embedding vocabulary must be >= 1, got {vocab}")
        self.table = Tensor(uniform_fan_in(rng, (vocab, dim), dim, dtype), requires_grad=True)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return embedding_lookup(self.table, ids)

    @property
    def vocab(self) -> int:
        return int(self.table.data.shape[0])

    def params(self) -> dict[str, Tensor]:
        return {"table": self.table}


class LayerNorm:
    """Last-axis normalization with learned gain and bias."""

    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        self.gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return x.layer_norm(self.gain, self.bias, eps=self.eps)

    def params(self) -> dict[str, Tensor]:
        return {"gain": self.gain, "bias": self.bias}


class FeedForward:
    """Position-wise two-layer ReLU block with dropout on the inner activation."""

    def __init__(
        self,
        dim: int,
        hidden: int,
        dropout_p: float,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        self.inner = Linear(dim, hidden, rng, dtype=dtype)
        self.outer = Linear(hidden, dim, rng, dtype=dtype)
        self.dropout_p = dropout_p

    def __call__(self, x: Tensor, rng: np.random.Generator, train: bool) -> Tensor:
        hidden = self.inner(x).relu()
        hidden = dropout(hidden, self.dropout_p, rng, train)
        return self.outer(hidden)

    def params(self) -> dict[str, Tensor]:
        named = {}
        for prefix, module in (("inner", self.inner), ("outer", self.outer)):
            for key, value in module.params().items():
                named[f"{prefix}.{key}"] = value
        return named


def prefix_params(prefix: str, params: dict[str, Tensor]) -> dict[str, Tensor]:
    """Re-key a parameter dict under ``prefix.``"""
    return {f"{prefix}.{key}": value for key, value in params.items()}

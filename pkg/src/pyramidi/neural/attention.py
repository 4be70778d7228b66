"""Transformer encoder with relative positions and segment-level memory.

The encoder processes one segment (here: one bar) at a time. Each layer
caches its input hidden states, detached, as *memory*; the next segment's
attention keys and values span ``[memory | current]``, so context flows
across segments without gradients flowing backward through time. Attention
scores use the relative-position decomposition: a content term
``(q + content_bias) . k`` plus a position term ``(q + pos_bias) . r`` where
``r`` projects a sinusoidal encoding of the query-key distance through a
shared weight. The position term is computed per distance and then sheared
into alignment with a gather, the usual trick.

Layers are pre-norm (norm, sublayer, residual) with a final norm after the
stack; pre-norm keeps activations bounded at this depth without warmup
tricks. The causal mask lets position ``i`` of the current segment attend to
all memory rows and to current positions ``<= i``; masked scores get an
additive ``-inf``, which the max-subtracted softmax turns into exact zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError
from .autograd import Tensor, concat, dropout
from .layers import FeedForward, LayerNorm, Linear, prefix_params

__all__ = ["EncoderConfig", "XLEncoder", "RelativeAttention", "EncoderLayer"]


@dataclass(frozen=True)
class EncoderConfig:
    """Size and regularization knobs for the encoder stack."""

    layers: int
    heads: int
    head_dim: int
    model_dim: int
    ffn_dim: int
    dropout: float
    mem_len: int

    def __post_init__(self) -> None:
        if self.heads * self.head_dim != self.model_dim:
            raise ValueError(
                f"heads * head_dim must equal model_dim: "
                f"{self.heads} * {self.head_dim} != {self.model_dim}"
            )
        if self.model_dim % 2:
            raise ValueError(f"model_dim must be even, got {self.model_dim}")
        if min(self.layers, self.heads, self.head_dim, self.ffn_dim) < 1:
            raise ValueError("layers, heads, head_dim, ffn_dim must be positive")
        if self.mem_len < 0:
            raise ValueError(f"mem_len must be >= 0, got {self.mem_len}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


_SINUSOID_CACHE: dict[tuple[int, int, str], np.ndarray] = {}
_MASK_CACHE: dict[tuple[int, int, str], np.ndarray] = {}
_SHIFT_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _sinusoid_table(total_len: int, dim: int, dtype) -> np.ndarray:
    """Encodings for distances ``total_len - 1 .. 0``, one row per distance."""
    key = (total_len, dim, np.dtype(dtype).str)
    cached = _SINUSOID_CACHE.get(key)
    if cached is None:
        positions = np.arange(total_len - 1, -1, -1, dtype=np.float64)
        inv_freq = 1.0 / (10000.0 ** (np.arange(0, dim, 2, dtype=np.float64) / dim))
        angles = np.outer(positions, inv_freq)
        cached = np.concatenate([np.sin(angles), np.cos(angles)], axis=1).astype(dtype)
        _SINUSOID_CACHE[key] = cached
    return cached


def _causal_mask(q_len: int, mem_rows: int, dtype) -> np.ndarray:
    """(q_len, mem_rows + q_len) additive mask: 0 allowed, -inf blocked."""
    key = (q_len, mem_rows, np.dtype(dtype).str)
    cached = _MASK_CACHE.get(key)
    if cached is None:
        total = mem_rows + q_len
        i = np.arange(q_len)[:, None]
        j = np.arange(total)[None, :]
        cached = np.where(j <= mem_rows + i, 0.0, -np.inf).astype(dtype)
        _MASK_CACHE[key] = cached
    return cached


def _shift_indices(q_len: int, mem_rows: int) -> np.ndarray:
    """Gather indices aligning per-distance position scores to key positions.

    Row ``a`` of the sinusoid table encodes distance ``total - 1 - a``; query
    ``i`` (global position ``mem_rows + i``) and key ``j`` are at distance
    ``mem_rows + i - j``, i.e. table row ``j + q_len - 1 - i``. Indices that
    fall outside the table belong to anti-causal pairs; they are clamped and
    the mask zeroes their influence.
    """
    key = (q_len, mem_rows)
    cached = _SHIFT_CACHE.get(key)
    if cached is None:
        total = mem_rows + q_len
        i = np.arange(q_len)[:, None]
        j = np.arange(total)[None, :]
        cached = np.minimum(j + q_len - 1 - i, total - 1)
        _SHIFT_CACHE[key] = cached
    return cached


class RelativeAttention:
    """Multi-head attention with shared relative-position keys."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        d = config.model_dim
        self.config = config
        self.dtype = dtype
        self.qkv = Linear(d, 3 * d, rng, bias=False, dtype=dtype)
        self.pos = Linear(d, d, rng, bias=False, dtype=dtype)
        self.out = Linear(d, d, rng, bias=False, dtype=dtype)
        self.content_bias = Tensor(
            np.zeros((config.heads, 1, config.head_dim), dtype=dtype), requires_grad=True
        )
        self.pos_bias = Tensor(
            np.zeros((config.heads, 1, config.head_dim), dtype=dtype), requires_grad=True
        )

    def __call__(
        self,
        normed_full: Tensor,
        q_len: int,
        rng: np.random.Generator | None,
        train: bool,
    ) -> Tensor:
        """Attend from the last ``q_len`` rows of ``normed_full`` to all rows.

        Args:
            normed_full: ``(mem_rows + q_len, model_dim)`` normalized hidden
                states, memory rows first.
            q_len: Number of query (current-segment) rows at the tail.

        Returns:
            ``(q_len, model_dim)`` attention output (pre-residual).
        """
        cfg = self.config
        total = normed_full.shape[0]
        mem_rows = total - q_len
        heads, head_dim = cfg.heads, cfg.head_dim

        qkv = self.qkv(normed_full)
        d = cfg.model_dim
        q = qkv[mem_rows:, :d].reshape(q_len, heads, head_dim).transpose(1, 0, 2)
        k = qkv[:, d : 2 * d].reshape(total, heads, head_dim).transpose(1, 0, 2)
        v = qkv[:, 2 * d :].reshape(total, heads, head_dim).transpose(1, 0, 2)

        rel = self.pos(Tensor(_sinusoid_table(total, d, self.dtype)))
        r = rel.reshape(total, heads, head_dim).transpose(1, 0, 2)

        content = (q + self.content_bias) @ k.transpose(0, 2, 1)
        position = (q + self.pos_bias) @ r.transpose(0, 2, 1)
        shift = np.broadcast_to(
            _shift_indices(q_len, mem_rows), (heads, q_len, total)
        )
        position = position.take_last_axis(shift)

        scores = (content + position) * (1.0 / np.sqrt(head_dim))
        scores = scores + Tensor(_causal_mask(q_len, mem_rows, self.dtype))
        weights = scores.softmax(axis=-1)
        weights = dropout(weights, cfg.dropout, rng, train)

        context = weights @ v
        merged = context.transpose(1, 0, 2).reshape(q_len, d)
        return self.out(merged)

    def params(self) -> dict[str, Tensor]:
        named = {}
        named.update(prefix_params("qkv", self.qkv.params()))
        named.update(prefix_params("pos", self.pos.params()))
        named.update(prefix_params("out", self.out.params()))
        named["content_bias"] = self.content_bias
        named["pos_bias"] = self.pos_bias
        return named


class EncoderLayer:
    """Pre-norm attention + feed-forward block."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        d = config.model_dim
        self.config = config
        self.norm_attn = LayerNorm(d, dtype=dtype)
        self.attn = RelativeAttention(config, rng, dtype=dtype)
        self.norm_ffn = LayerNorm(d, dtype=dtype)
        self.ffn = FeedForward(d, config.ffn_dim, config.dropout, rng, dtype=dtype)

    def __call__(
        self,
        h: Tensor,
        mem: np.ndarray,
        rng: np.random.Generator | None,
        train: bool,
    ) -> Tensor:
        p = self.config.dropout
        if mem.shape[0]:
            full = concat([Tensor(mem), h], axis=0)
        else:
            full = h
        attended = self.attn(self.norm_attn(full), h.shape[0], rng, train)
        h = h + dropout(attended, p, rng, train)
        h = h + dropout(self.ffn(self.norm_ffn(h), rng, train), p, rng, train)
        return h

    def params(self) -> dict[str, Tensor]:
        named = {}
        named.update(prefix_params("norm_attn", self.norm_attn.params()))
        named.update(prefix_params("attn", self.attn.params()))
        named.update(prefix_params("norm_ffn", self.norm_ffn.params()))
        named.update(prefix_params("ffn", self.ffn.params()))
        return named


class XLEncoder:
    """Stack of :class:`EncoderLayer` with per-layer recurrent memory.

    Memory is a list of ``(rows, model_dim)`` float arrays, one per layer,
    holding that layer's most recent input hidden states (up to ``mem_len``
    rows), detached from any graph.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.layers = [EncoderLayer(config, rng, dtype=dtype) for _ in range(config.layers)]
        self.norm_final = LayerNorm(config.model_dim, dtype=dtype)

    def empty_memory(self) -> list[np.ndarray]:
        d = self.config.model_dim
        return [np.zeros((0, d), dtype=self.dtype) for _ in range(self.config.layers)]

    def forward(
        self,
        x: Tensor,
        memory: list[np.ndarray] | None,
        rng: np.random.Generator | None = None,
        train: bool = False,
    ) -> tuple[Tensor, list[np.ndarray]]:
        """Process one segment.

        Args:
            x: ``(seg_len, model_dim)`` fused input features.
            memory: Per-layer cached states from the previous call, or None
                to start cold.
            rng: Source for dropout masks; required when ``train`` and
                ``dropout > 0``.
            train: Enables dropout.

        Returns:
            ``(hidden, new_memory)``: the ``(seg_len, model_dim)`` output and
            the updated per-layer memory (old rows + this segment's inputs,
            truncated to the newest ``mem_len`` rows).

        Raises:
            ValueError: Malformed memory (wrong layer count, width, or more
                rows than ``mem_len``).
            NumericError: Non-finite activations, reported with the layer
                index where they first appear.
        """
        cfg = self.config
        if train and cfg.dropout > 0.0 and rng is None:
            raise ValueError("training with dropout needs an rng")
        if memory is None:
            memory = self.empty_memory()
        if len(memory) != cfg.layers:
            raise ValueError(
                f"memory has {len(memory)} entries for {cfg.layers} layers"
            )
        for i, mem in enumerate(memory):
            if mem.ndim != 2 or mem.shape[1] != cfg.model_dim:
                raise ValueError(f"memory[{i}] has shape {mem.shape}")
            if mem.shape[0] > cfg.mem_len:
                raise ValueError(
                    f"memory[{i}] holds {mem.shape[0]} rows, more than mem_len "
                    f"{cfg.mem_len}"
                )

        h = x
        new_memory: list[np.ndarray] = []
        for i, layer in enumerate(self.layers):
            current = h.data
            if cfg.mem_len > 0:
                combined = (
                    np.concatenate([memory[i], current], axis=0)
                    if memory[i].shape[0]
                    else current
                )
                new_memory.append(combined[-cfg.mem_len :].copy())
            else:
                new_memory.append(current[:0].copy())
            h = layer(h, memory[i], rng, train)
            if not np.isfinite(h.data).all():
                raise NumericError(f"non-finite activations after encoder layer {i}")
        return self.norm_final(h), new_memory

    def params(self) -> dict[str, Tensor]:
        named = {}
        for i, layer in enumerate(self.layers):
            named.update(prefix_params(f"layer{i}", layer.params()))
        named.update(prefix_params("norm_final", self.norm_final.params()))
        return named

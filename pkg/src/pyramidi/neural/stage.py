"""One pyramid stage: multi-track token model around the memory encoder.

Data flow for a ``(tracks, seg_len)`` block of token ids:

1. each track embeds its tokens with its own table (vocabularies differ),
2. the per-track embeddings fuse into one sequence via a learned weight per
   track plus a scalar bias (a 1x1 convolution across the track axis),
3. the fused sequence runs through the recurrent-memory encoder,
4. the shared hidden states fan back out through one learned projection per
   track, and
5. a per-track affine decoder produces logits over that track's vocabulary.

The model owns its encoder memory (``reset_memory`` / ``step``) so training
and generation can carry context across bars; the functional ``apply`` takes
and returns memory explicitly for callers that manage state themselves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from .autograd import Tensor, dropout, stack
from .attention import EncoderConfig, XLEncoder
from .layers import Embedding, Linear, prefix_params, uniform_fan_in

__all__ = ["StageConfig", "StageModel", "nll_loss"]


@dataclass(frozen=True)
class StageConfig:
    """Hyperparameters of one stage.

    ``proc_len`` is the number of tokens the stage processes per call (one
    bar at its scale); ``mem_len`` is how many past positions the encoder
    memory keeps, defaulting to ``proc_len`` (one bar of context per layer).
    """

    proc_len: int
    mem_len: int | None = None
    layers: int = 6
    heads: int = 8
    head_dim: int = 32
    model_dim: int = 256
    ffn_dim: int = 1024
    dropout: float = 0.09

    def __post_init__(self) -> None:
        if self.proc_len < 1:
            raise ValueError(f"proc_len must be >= 1, got {self.proc_len}")
        if self.mem_len is None:
            object.__setattr__(self, "mem_len", self.proc_len)
        encoder_config(self)  # surfaces invariant violations early

    def as_dict(self) -> dict:
        return {
            "proc_len": self.proc_len,
            "mem_len": self.mem_len,
            "layers": self.layers,
            "heads": self.heads,
            "head_dim": self.head_dim,
            "model_dim": self.model_dim,
            "ffn_dim": self.ffn_dim,
            "dropout": self.dropout,
        }


def encoder_config(cfg: StageConfig) -> EncoderConfig:
    return EncoderConfig(
        layers=cfg.layers,
        heads=cfg.heads,
        head_dim=cfg.head_dim,
        model_dim=cfg.model_dim,
        ffn_dim=cfg.ffn_dim,
        dropout=cfg.dropout,
        mem_len=cfg.mem_len,
    )


class StageModel:
    """Multi-track next-block token model with recurrent memory."""

    def __init__(
        self,
        config: StageConfig,
        vocab_sizes: list[int],
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        if not vocab_sizes:
            raise ValueError("need at least one track vocabulary")
        d = config.model_dim
        self.config = config
        self.vocab_sizes = list(vocab_sizes)
        self.dtype = dtype
        self.embeddings = [Embedding(v, d, rng, dtype=dtype) for v in vocab_sizes]
        tracks = len(vocab_sizes)
        self.fusion_weight = Tensor(
            uniform_fan_in(rng, (tracks,), tracks, dtype), requires_grad=True
        )
        self.fusion_bias = Tensor(np.zeros((), dtype=dtype), requires_grad=True)
        self.encoder = XLEncoder(encoder_config(config), rng, dtype=dtype)
        self.track_proj = [Linear(d, d, rng, dtype=dtype) for _ in vocab_sizes]
        self.decoders = [Linear(d, v, rng, dtype=dtype) for v in vocab_sizes]
        self.memory: list[np.ndarray] | None = None

    @property
    def tracks(self) -> int:
        return len(self.vocab_sizes)

    def reset_memory(self) -> None:
        self.memory = None

    def _check_tokens(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.asarray(tokens)
        if tokens.ndim != 2 or tokens.shape[0] != self.tracks:
            raise DataError(
                f"tokens must be ({self.tracks}, seg_len), got {tokens.shape}"
            )
        if tokens.shape[1] != self.config.proc_len:
            raise DataError(
                f"segment length {tokens.shape[1]} does not match proc_len "
                f"{self.config.proc_len}"
            )
        for k in range(self.tracks):
            row = tokens[k]
            if row.size == 0:
                continue
            low, high = int(row.min()), int(row.max())
            if low < 0 or high >= self.vocab_sizes[k]:
                bad = low if low < 0 else high
                raise DataError(
                    f"track {k} holds token {bad} outside its vocabulary of "
                    f"{self.vocab_sizes[k]}"
                )
        return tokens.astype(np.int64)

    def fuse_tracks(self, tokens: np.ndarray) -> Tensor:
        """Per-track embeddings combined into one ``(seg_len, dim)`` sequence."""
        tokens = self._check_tokens(tokens)
        embedded = [emb(tokens[k]) for k, emb in enumerate(self.embeddings)]
        grouped = stack(embedded, axis=0)  # (tracks, seg_len, dim)
        weight = self.fusion_weight.reshape(self.tracks, 1, 1)
        return (grouped * weight).sum(axis=0) + self.fusion_bias

    def apply(
        self,
        tokens: np.ndarray,
        memory: list[np.ndarray] | None,
        rng: np.random.Generator | None = None,
        train: bool = False,
    ) -> tuple[list[Tensor], list[np.ndarray]]:
        """Pure forward pass: explicit memory in, updated memory out.

        Args:
            tokens: ``(tracks, proc_len)`` integer token block.
            memory: Encoder memory from the previous block (None = cold).

        Returns:
            Per-track logits, each ``(proc_len, vocab_k)``, and new memory.
        """
        fused = self.fuse_tracks(tokens)
        fused = dropout(fused, self.config.dropout, rng, train)
        hidden, new_memory = self.encoder.forward(fused, memory, rng=rng, train=train)
        logits = [
            self.decoders[k](self.track_proj[k](hidden)) for k in range(self.tracks)
        ]
        return logits, new_memory

    def step(
        self,
        tokens: np.ndarray,
        rng: np.random.Generator | None = None,
        train: bool = False,
    ) -> list[Tensor]:
        """Stateful forward pass using and updating the model's own memory."""
        logits, self.memory = self.apply(tokens, self.memory, rng=rng, train=train)
        return logits

    def params(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for k, emb in enumerate(self.embeddings):
            named.update(prefix_params(f"emb{k}", emb.params()))
        named["fusion.weight"] = self.fusion_weight
        named["fusion.bias"] = self.fusion_bias
        named.update(prefix_params("enc", self.encoder.params()))
        for k, proj in enumerate(self.track_proj):
            named.update(prefix_params(f"proj{k}", proj.params()))
        for k, dec in enumerate(self.decoders):
            named.update(prefix_params(f"dec{k}", dec.params()))
        return named


def nll_loss(logits: list[Tensor], targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over all tracks and positions.

    Args:
        logits: Per-track ``(seg_len, vocab_k)`` scores.
        targets: ``(tracks, seg_len)`` integer token ids.

    Returns:
        Scalar tensor, natural-log units.
    """
    targets = np.asarray(targets)
    if targets.ndim != 2 or targets.shape[0] != len(logits):
        raise DataError(
            f"targets must be ({len(logits)}, seg_len), got {targets.shape}"
        )
    total = None
    positions = 0
    for k, track_logits in enumerate(logits):
        seg_len, vocab = track_logits.shape
        row = targets[k]
        if row.shape[0] != seg_len:
            raise DataError(
                f"track {k}: {row.shape[0]} targets for {seg_len} positions"
            )
        if row.size and (row.min() < 0 or row.max() >= vocab):
            raise DataError(
                f"track {k} target outside its vocabulary of {vocab}"
            )
        log_probs = track_logits.log_softmax(axis=-1)
        picked = log_probs.take_last_axis(row.reshape(seg_len, 1).astype(np.int64))
        track_sum = picked.sum()
        total = track_sum if total is None else total + track_sum
        positions += seg_len
    return -(total * (1.0 / float(positions)))

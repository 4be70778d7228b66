"""Minimal neural-network stack on numpy.

``autograd`` provides the reverse-mode tensor engine; ``layers`` the usual
building blocks (linear, embedding, layer norm); ``attention`` the
relative-position multi-head attention encoder with segment-level recurrent
memory; ``stage`` the per-track embedding / fusion / decoding wrapper around
that encoder; ``optim`` Adam and the warmup-cosine learning-rate schedule;
``checkpoint`` a deterministic binary container for trained stages.
"""

from .autograd import Tensor, no_grad, concat, stack
from .attention import EncoderConfig, XLEncoder
from .stage import StageConfig, StageModel, nll_loss
from .optim import Adam, lr_schedule
from .checkpoint import save_stage_checkpoint, load_stage_checkpoint

__all__ = [
    "Tensor",
    "no_grad",
    "concat",
    "stack",
    "EncoderConfig",
    "XLEncoder",
    "StageConfig",
    "StageModel",
    "nll_loss",
    "Adam",
    "lr_schedule",
    "save_stage_checkpoint",
    "load_stage_checkpoint",
]

"""Adam optimizer and the warmup-plus-cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from ..errors import NumericError
from .autograd import Tensor

__all__ = ["Adam", "lr_schedule"]


def lr_schedule(
    step: int,
    total_steps: int,
    base_lr: float,
    warmup_steps: int,
    min_lr: float | None = None,
) -> float:
    """Linear warmup to ``base_lr``, then cosine decay to ``min_lr``.

    ``step`` counts from 0 (learning rate 0 when warmup is used); at
    ``warmup_steps`` the rate is exactly ``base_lr`` and at ``total_steps``
    (and beyond) exactly ``min_lr``, which defaults to ``base_lr / 100``.
    """
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= warmup_steps < total_steps:
        raise ValueError(
            f"warmup_steps must be in [0, total_steps), got {warmup_steps}"
        )
    if base_lr <= 0:
        raise ValueError(f"base_lr must be positive, got {base_lr}")
    if min_lr is None:
        min_lr = base_lr / 100.0
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    if step >= total_steps:
        return min_lr
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * progress))


class Adam:
    """Adam with bias correction over a named parameter dict.

    Gradients are read from ``param.grad``; parameters whose gradient is
    ``None`` are skipped for that step. ``step()`` takes the learning rate
    explicitly so a schedule can drive it.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        beta1: float = 0.5,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValueError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        if eps <= 0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.params = dict(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        # Per-parameter scratch reused every step; Adam is memory-bound at
        # this model size, so avoiding temporaries matters.
        self._scratch = {name: np.empty_like(p.data) for name, p in self.params.items()}

    def step(self, lr: float) -> None:
        """Apply one update from the accumulated gradients.

        Raises:
            NumericError: Some gradient contains NaN or infinity; the error
                names the parameter.
        """
        self.step_count += 1
        t = self.step_count
        correction1 = 1.0 - self.beta1 ** t
        correction2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for parameter {name}")
            m = self.m[name]
            v = self.v[name]
            s = self._scratch[name]
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=s)
            m += s
            v *= self.beta2
            np.multiply(g, g, out=s)
            s *= 1.0 - self.beta2
            v += s
            # (m/c1) / (sqrt(v/c2) + eps), computed in the scratch buffer
            np.divide(v, correction2, out=s)
            np.sqrt(s, out=s)
            s += self.eps
            np.divide(m, s, out=s)
            s *= lr / correction1
            p.data -= s

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment estimates keyed for checkpointing."""
        named = {}
        for name in self.params:
            named[f"adam.m.{name}"] = self.m[name]
            named[f"adam.v.{name}"] = self.v[name]
        return named

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.params:
            m = arrays.get(f"adam.m.{name}")
            v = arrays.get(f"adam.v.{name}")
            if m is None or v is None:
                raise KeyError(f"optimizer state missing moments for {name}")
            if m.shape != self.m[name].shape or v.shape != self.v[name].shape:
                raise ValueError(f"optimizer state shape mismatch for {name}")
            self.m[name] = m.astype(self.m[name].dtype)
            self.v[name] = v.astype(self.v[name].dtype)
        self.step_count = int(step_count)

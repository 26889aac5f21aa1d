"""Adam optimizer with bias correction and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, TrainingDiverged
from .tensor import Tensor


@dataclass
class AdamState:
    """First/second moment buffers plus the step counter."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied in place to ``params``.

    ``params`` are Tensors, ``grads`` same-shaped ndarrays. Deterministic
    given inputs; the returned state is the mutated input state.
    """
    if lr <= 0:
        raise DomainError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError(
            f"adam_step: {len(params)} params, {len(grads)} grads, "
            f"{len(state.m)} state buffers"
        )
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise DimensionError(
                f"adam_step: grad shape {g.shape} != param shape {p.data.shape}"
            )
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def clip_global_norm(grads, max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is <= max_norm.

    Returns the pre-clip norm. ``max_norm <= 0`` disables clipping.
    """
    total = 0.0
    for g in grads:
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class Adam:
    """Stateful wrapper around :func:`adam_step` for a fixed parameter list."""

    def __init__(self, params: list[Tensor], lr: float = 1e-4,
                 betas=(0.9, 0.999), eps: float = 1e-8, clip_norm: float = 0.0):
        if lr <= 0:
            raise DomainError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.state = AdamState.for_params(self.params)

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in self.params]
        clip_global_norm(grads, self.clip_norm)
        adam_step(self.params, grads, self.state, self.lr,
                  self.beta1, self.beta2, self.eps)
        for p in self.params:
            if not np.all(np.isfinite(p.data)):
                raise TrainingDiverged("parameter became non-finite after Adam step")

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

"""Adam with decoupled weight decay.

Update rule, applied per parameter with bias-corrected moments:

    m <- b1*m + (1-b1)*g          v <- b2*v + (1-b2)*g^2
    m_hat = m / (1 - b1^t)        v_hat = v / (1 - b2^t)
    p <- p*(1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps)

The decay multiplies the parameter directly instead of being folded into
the gradient, and eps is added after the square root. Moment buffers share
the parameter dtype; with a fixed parameter order the whole step is
deterministic, so identical inputs give bitwise-identical updates.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .errors import NumericsError
from .tensor import Tensor


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale every gradient in place so their global L2 norm is at most
    max_norm. Returns the norm measured before scaling.

    The norm is accumulated in float64 regardless of parameter dtype so the
    clip decision does not wobble with gradient magnitude.
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            g = p.grad.reshape(-1).astype(np.float64)
            total += float(np.dot(g, g))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


class AdamW:
    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 2e-5,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        if lr < 0:
            raise ValueError(f"invalid learning rate {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ValueError(f"betas must sit in [0, 1), got {betas}")
        if eps <= 0:
            raise ValueError(f"eps must be positive, got {eps}")
        if weight_decay < 0:
            raise ValueError(f"weight decay must be non-negative, got {weight_decay}")
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        """Apply one update to every parameter that holds a gradient.

        Raises NumericsError before touching any state if a gradient
        contains NaN or infinity.
        """
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericsError(f"non-finite gradient in parameter {name!r}")
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            kernels.adamw_update(
                p.data.reshape(-1),
                np.ascontiguousarray(p.grad).reshape(-1),
                self._m[name].reshape(-1),
                self._v[name].reshape(-1),
                self.t,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                self.weight_decay,
            )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

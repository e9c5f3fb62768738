"""Adam with bias correction, and a reduce-on-plateau learning-rate rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class Adam:
    """Standard Adam.  step() mutates the parameter arrays in place so the
    model sees the update; iteration order over parameters is fixed."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._names = list(params)
        self.m = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        self.v = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}

    def step(
        self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float
    ) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name in self._names:
            g = np.asarray(grads[name], dtype=np.float64)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            params[name][...] = params[name] - update


@dataclass
class PlateauScheduler:
    """Halve the learning rate after `patience` consecutive epochs without a
    relative validation-loss improvement of more than `threshold`."""

    lr: float
    factor: float = 0.5
    patience: int = 2
    threshold: float = 1e-4
    min_lr: float = 1e-6
    best: float | None = None
    num_bad: int = field(default=0, init=False)

    def step(self, val_loss: float) -> float:
        """Feed one epoch's validation loss; returns the lr to use next."""
        if self.best is None or val_loss < self.best * (1.0 - self.threshold):
            self.best = val_loss
            self.num_bad = 0
        else:
            self.num_bad += 1
            if self.num_bad >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.num_bad = 0
        return self.lr

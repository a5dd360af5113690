"""
Adam optimizer with a constant-then-linear-decay learning-rate schedule.
"""

import logging
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from octave_codec.exceptions import ConfigError, ContractError
from octave_codec.tensor import Parameter

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinearDecaySchedule:
    """
    Constant learning rate for the first half of `total` steps (or epochs),
    then a linear decay reaching zero at `total`.
    """

    base_lr: float
    total: int

    def __post_init__(self) -> None:
        if self.base_lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.base_lr}")
        if self.total < 1:
            raise ConfigError(f"schedule length must be >= 1, got {self.total}")

    def __call__(self, t: float) -> float:
        half = self.total / 2.0
        if t < half:
            return self.base_lr
        return self.base_lr * max(self.total - t, 0.0) / half


@dataclass
class OptimizerState:
    """First/second moment buffers, one pair per parameter, and the step count."""

    first_moments: list[np.ndarray] = field(default_factory=list)
    second_moments: list[np.ndarray] = field(default_factory=list)
    step: int = 0


class Adam:
    """Adam with bias correction; the schedule is evaluated at the step count."""

    def __init__(
        self,
        params: Iterable[Parameter],
        schedule: LinearDecaySchedule,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = [p for p in params if p.trainable]
        self.schedule = schedule
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state = OptimizerState(
            first_moments=[np.zeros_like(p.data) for p in self.params],
            second_moments=[np.zeros_like(p.data) for p in self.params],
        )

    @property
    def lr(self) -> float:
        return self.schedule(self.state.step)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise ContractError(f"{len(missing)} parameter(s) have no gradient; call backward() first")

        lr = self.lr
        self.state.step += 1
        t = self.state.step
        correction1 = 1.0 - self.beta1**t
        correction2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.state.first_moments, self.state.second_moments):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)
        logger.debug(f"Adam step {t} with lr={lr:.3g}")

"""Adam with bias correction and a warmup-then-exponential-decay schedule.

The schedule warms up linearly from 0 to peak_lr over warmup_steps, then
decays exponentially so it lands exactly on floor_lr at max_steps; the
decay rate is derived from the endpoints rather than configured.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .errors import ConfigError, NumericError


@dataclass(frozen=True)
class OptimizerConfig:
    peak_lr: float = 1e-3
    warmup_steps: int = 2000
    max_steps: int = 20000
    floor_lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    batch_size: int = 16
    grad_accum: int = 1
    seed: int = 0
    decay: str = "exponential"
    # evaluation cadence and stopping knobs for the training loops
    eval_interval: int = 200
    patience: int = 6
    target_metric: float | None = None

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if self.warmup_steps >= self.max_steps:
            raise ConfigError("warmup_steps must be smaller than max_steps")
        if self.decay != "exponential":
            raise ConfigError(f"unsupported decay kind {self.decay!r}")
        if self.floor_lr > self.peak_lr:
            raise ConfigError("floor_lr cannot exceed peak_lr")


def lr_schedule(cfg: OptimizerConfig, step: int) -> float:
    """Learning rate at an integer step (0 at step 0, peak at warmup end)."""
    if step < 0:
        raise ConfigError("schedule step must be >= 0")
    if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    if step >= cfg.max_steps:
        return cfg.floor_lr
    span = cfg.max_steps - cfg.warmup_steps
    rate = (cfg.floor_lr / cfg.peak_lr) ** (1.0 / span)
    return cfg.peak_lr * rate ** (step - cfg.warmup_steps)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, nm.Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(t.data) for k, t in params.items()},
            v={k: np.zeros_like(t.data) for k, t in params.items()},
        )


def adam_step(
    params: dict[str, nm.Tensor],
    state: AdamState,
    cfg: OptimizerConfig,
    step: int,
    grads: dict[str, np.ndarray] | None = None,
) -> None:
    """One bias-corrected Adam update at the scheduled learning rate.

    Gradients default to each tensor's accumulated ``grad``; parameters are
    updated in place and the moment state advances even when the scheduled
    learning rate is zero.
    """
    lr = lr_schedule(cfg, step)
    t = step + 1
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, tensor in params.items():
        g = grads[name] if grads is not None else tensor.grad
        if g is None:
            raise ConfigError(f"no gradient available for parameter {name!r}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        if lr != 0.0:
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            tensor.data -= lr * update


def closed_form_adam_update(g, m, v, step, cfg: OptimizerConfig) -> float:
    """Reference single-scalar update used by tests: returns the delta applied."""
    lr = lr_schedule(cfg, step)
    t = step + 1
    m2 = cfg.beta1 * m + (1 - cfg.beta1) * g
    v2 = cfg.beta2 * v + (1 - cfg.beta2) * g * g
    mhat = m2 / (1 - cfg.beta1**t)
    vhat = v2 / (1 - cfg.beta2**t)
    return -lr * mhat / (math.sqrt(vhat) + cfg.eps)

"""Adam for the probe, plain gradient steps plus clip-and-normalize for the
ensemble weights, and a cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import get_kernels
from .data import EPS_W, LinearProbe, SimplexWeights


@dataclass
class AdamState:
    m_weight: np.ndarray
    m_bias: np.ndarray
    v_weight: np.ndarray
    v_bias: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_probe(cls, probe: LinearProbe, **hyper) -> AdamState:
        return cls(
            np.zeros_like(probe.weight), np.zeros_like(probe.bias),
            np.zeros_like(probe.weight), np.zeros_like(probe.bias), **hyper,
        )


def adam_step(probe: LinearProbe, grad_weight: np.ndarray, grad_bias: np.ndarray,
              state: AdamState, lr: float, backend: str | None = None) -> None:
    """Bias-corrected Adam update of ``probe`` in place; bumps ``state.step``."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    gw = np.ascontiguousarray(grad_weight, dtype=np.float64)
    gb = np.ascontiguousarray(grad_bias, dtype=np.float64)
    if gw.shape != probe.weight.shape or gb.shape != probe.bias.shape:
        raise ValueError("gradient shape does not match probe")
    if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
        raise FloatingPointError("non-finite gradient")
    kern = get_kernels(backend)
    state.step += 1
    kern.adam_update(probe.weight.reshape(-1), gw.reshape(-1), state.m_weight.reshape(-1),
                     state.v_weight.reshape(-1), lr, state.beta1, state.beta2, state.eps, state.step)
    kern.adam_update(probe.bias, gb, state.m_bias, state.v_bias,
                     lr, state.beta1, state.beta2, state.eps, state.step)


def sgd_step_theta(theta: SimplexWeights, grad_w, lr_w: float) -> np.ndarray:
    """theta - lr_w * grad_w, not yet projected back onto the simplex."""
    if not lr_w > 0:
        raise ValueError(f"learning rate must be positive, got {lr_w}")
    g = np.asarray(grad_w, dtype=np.float64)
    if g.shape != theta.theta.shape:
        raise ValueError("gradient shape does not match weights")
    if not np.isfinite(g).all():
        raise FloatingPointError("non-finite gradient")
    return theta.theta - lr_w * g


def project_simplex(raw, eps_w: float = EPS_W) -> SimplexWeights:
    """Clip each entry at ``eps_w`` from below, then renormalise to sum 1.

    Non-finite entries are treated as the floor; at least one finite entry
    is required.
    """
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    if raw.size < 1:
        raise ValueError("need at least one weight")
    finite = np.isfinite(raw)
    if not finite.any():
        raise ValueError("all weights are non-finite")
    clipped = np.maximum(np.where(finite, raw, eps_w), eps_w)
    if np.isinf(clipped.sum()):
        raise ValueError("weights overflow")
    return SimplexWeights(clipped / clipped.sum())


@dataclass(frozen=True)
class CosineSchedule:
    lr_max: float
    total_steps: int
    lr_min: float = 0.0

    def __post_init__(self):
        if not 0 <= self.lr_min <= self.lr_max:
            raise ValueError("need 0 <= lr_min <= lr_max")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")


def cosine_lr(schedule: CosineSchedule, step: int) -> float:
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    cos = math.cos(math.pi * step / schedule.total_steps)
    return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + cos)

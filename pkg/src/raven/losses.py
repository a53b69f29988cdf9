"""Soft-label objectives for training a linear probe on weak-ensemble pseudo-labels.

The adaptation loss mixes M weak models' outputs with simplex weights
``theta`` and scores the probe's softmax against the mix with
cross-entropy. In probability-average mode the loss is linear in theta,
``L = sum_i theta_i * C_i``, so its theta-gradient is exactly the vector of
per-model alignment costs ``C``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ._backend import get_kernels
from .data import DataBundle, LinearProbe, SimplexWeights

EPS_LOG = 1e-12
_SIMPLEX_TOL = 1e-6


class CombineMode(enum.Enum):
    PROBABILITY_AVERAGE = "probability_average"
    LOGIT_SOFTMAX = "logit_softmax"

    @property
    def code(self) -> int:
        return 0 if self is CombineMode.PROBABILITY_AVERAGE else 1

    @classmethod
    def parse(cls, value) -> CombineMode:
        if isinstance(value, cls):
            return value
        aliases = {"pa": "probability_average", "prob": "probability_average",
                   "ls": "logit_softmax", "logit": "logit_softmax"}
        return cls(aliases.get(str(value).lower(), str(value).lower()))


@dataclass
class LossGrad:
    loss: float
    grad_weight: np.ndarray
    grad_bias: np.ndarray
    grad_theta: np.ndarray


def softmax(logits) -> np.ndarray:
    """Softmax along the last axis, computed with max-subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(z).all():
        raise ValueError("softmax input must be finite")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_simplex(v: np.ndarray, what: str) -> None:
    if (v < -_SIMPLEX_TOL).any() or abs(v.sum() - 1.0) > _SIMPLEX_TOL:
        raise ValueError(f"{what} is not a probability vector: {v}")


def soft_cross_entropy(pred_probs, target_probs) -> float:
    """-sum_k target[k] * log(max(pred[k], 1e-12))."""
    pred = np.asarray(pred_probs, dtype=np.float64)
    target = np.asarray(target_probs, dtype=np.float64)
    _check_simplex(pred, "prediction")
    _check_simplex(target, "target")
    return float(-(target * np.log(np.maximum(pred, EPS_LOG))).sum())


def combine_weak(weak_logits_row, theta, mode=CombineMode.PROBABILITY_AVERAGE) -> np.ndarray:
    """Mix one sample's m x k weak logits into a single probability vector."""
    z = np.asarray(weak_logits_row, dtype=np.float64)
    th = theta.theta if isinstance(theta, SimplexWeights) else np.asarray(theta, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] != th.size:
        raise ValueError(f"weak logits {z.shape} do not match {th.size} weights")
    _check_simplex(th, "theta")
    if CombineMode.parse(mode) is CombineMode.PROBABILITY_AVERAGE:
        return th @ softmax(z)
    return softmax(th @ z)


def weak_targets(bundle: DataBundle, mode) -> np.ndarray:
    """(m, n, k) float64 array the kernels mix: probabilities or raw logits."""
    stack = bundle.weak_stack()
    if CombineMode.parse(mode) is CombineMode.PROBABILITY_AVERAGE:
        return softmax(stack)
    return stack


def adaptation_loss_grad(batch: DataBundle, probe: LinearProbe, theta: SimplexWeights,
                         mode=CombineMode.PROBABILITY_AVERAGE, backend: str | None = None) -> LossGrad:
    """Mean adaptation loss over ``batch`` with exact gradients for probe and weights."""
    if batch.n == 0:
        raise ValueError("empty batch")
    mode = CombineMode.parse(mode)
    if theta.m != batch.m:
        raise ValueError(f"{theta.m} weights for {batch.m} weak models")
    if (probe.k, probe.d) != (batch.k, batch.d):
        raise ValueError("probe shape does not match batch")
    kern = get_kernels(backend)
    X = np.ascontiguousarray(batch.embeddings, dtype=np.float64)
    loss, gW, gb, gt = kern.loss_grad(
        X, probe.weight, probe.bias, np.ascontiguousarray(weak_targets(batch, mode)),
        np.ascontiguousarray(theta.theta), np.arange(batch.n, dtype=np.int64), mode.code,
    )
    return LossGrad(loss, gW, gb, gt)


def ensemble_loss_grad(batch: DataBundle, probe: LinearProbe, m: int | None = None,
                       mode=CombineMode.PROBABILITY_AVERAGE, backend: str | None = None) -> LossGrad:
    """Adaptation loss at fixed uniform weights 1/m."""
    m = batch.m if m is None else m
    if m != batch.m:
        raise ValueError(f"m={m} but batch carries {batch.m} weak models")
    return adaptation_loss_grad(batch, probe, SimplexWeights.uniform(m), mode, backend)


def c_alignment_cost(batch: DataBundle, probe: LinearProbe) -> np.ndarray:
    """C_i: mean cross-entropy of the probe against weak model i's soft labels."""
    if batch.n == 0:
        raise ValueError("empty batch")
    z = probe.logits(batch.embeddings)
    z -= z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = np.maximum(logp, math.log(EPS_LOG))
    return np.array([-(softmax(w.astype(np.float64)) * logp).sum(axis=1).mean()
                     for w in batch.weak_logits])

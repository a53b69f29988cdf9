"""Accuracy, performance-gap-recovered (PGR), the generalization-gap shift
measure, and the hit/miss check on the learned ensemble weights."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .data import DataBundle, LinearProbe
from .losses import EPS_LOG

log = logging.getLogger(__name__)

PGR_TOL = 1e-9


def accuracy(predictions, gt_labels) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    pred = np.asarray(predictions)
    labels = np.asarray(gt_labels).reshape(-1)
    if pred.shape[0] == 0:
        raise ValueError("accuracy of an empty set is undefined")
    if pred.shape[0] != labels.size:
        raise ValueError("predictions and labels differ in length")
    return float((pred.argmax(axis=1) == labels).mean())


@dataclass
class PGRReport:
    weak_acc: float | list[float]
    pseudo_acc: float
    gt_acc: float | list[float]
    pgr: float | None
    variant: str
    undefined: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def pgr_single(weak_acc: float, pseudo_acc: float, gt_acc: float) -> PGRReport:
    denom = gt_acc - weak_acc
    if abs(denom) <= PGR_TOL:
        return PGRReport(weak_acc, pseudo_acc, gt_acc, None, "single", undefined=True)
    return PGRReport(weak_acc, pseudo_acc, gt_acc, (pseudo_acc - weak_acc) / denom, "single")


def pgr_ensemble(weak_accs, pseudo_acc: float, gt_accs) -> PGRReport:
    """(pseudo - mean weak) / mean(gt_i - weak_i), gt_i paired with weak model i's seed."""
    weak = np.asarray(weak_accs, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt_accs, dtype=np.float64).reshape(-1)
    if weak.size != gt.size or weak.size == 0:
        raise ValueError("weak_accs and gt_accs must be non-empty and of equal length")
    if weak.size == 1:
        rep = pgr_single(float(weak[0]), pseudo_acc, float(gt[0]))
        rep.variant = "ensemble"
        return rep
    denom = float((gt - weak).mean())
    wl, gl = weak.tolist(), gt.tolist()
    if abs(denom) <= PGR_TOL:
        return PGRReport(wl, pseudo_acc, gl, None, "ensemble", undefined=True)
    return PGRReport(wl, pseudo_acc, gl, (pseudo_acc - float(weak.mean())) / denom, "ensemble")


def _risk(probe: LinearProbe, bundle: DataBundle) -> float:
    if not bundle.has_labels:
        raise ValueError(f"{bundle.split_tag} bundle has no labels")
    if bundle.n == 0:
        raise ValueError(f"{bundle.split_tag} bundle is empty")
    z = probe.logits(bundle.embeddings)
    z -= z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    picked = np.maximum(logp[np.arange(bundle.n), bundle.gt_labels], math.log(EPS_LOG))
    return float(-picked.mean())


def generalization_gap(probe: LinearProbe, src: DataBundle, tuning: DataBundle) -> float:
    """Cross-entropy risk on the tuning split minus risk on the source split."""
    return _risk(probe, tuning) - _risk(probe, src)


@dataclass
class HitMiss:
    hit: bool
    tie: bool
    theta_best: int
    acc_best: int

    def __str__(self):
        return "hit" if self.hit else "miss"


def _unique_argmax(v: np.ndarray) -> tuple[int, bool]:
    best = int(np.argmax(v))
    return best, bool((v == v[best]).sum() > 1)


def hit_or_miss(result, weak_target_accs) -> HitMiss:
    """Hit iff the largest learned weight sits on the most accurate weak model.

    ``result`` is a TrainResult, SimplexWeights, or plain weight vector.
    Ties in either argmax count as a miss.
    """
    theta = getattr(result, "theta", result)
    theta = np.asarray(getattr(theta, "theta", theta), dtype=np.float64).reshape(-1)
    accs = np.asarray(weak_target_accs, dtype=np.float64).reshape(-1)
    if theta.size != accs.size:
        raise ValueError(f"{theta.size} weights but {accs.size} accuracies")
    if theta.size < 2:
        raise ValueError("hit/miss needs at least two weak models")
    tb, t_tie = _unique_argmax(theta)
    ab, a_tie = _unique_argmax(accs)
    tie = t_tie or a_tie
    if tie:
        log.info("hit_or_miss: tie in %s argmax, counted as miss", "theta" if t_tie else "accuracy")
    return HitMiss(hit=(not tie and tb == ab), tie=tie, theta_best=tb, acc_best=ab)


def weak_accuracies(bundle: DataBundle) -> list[float]:
    if not bundle.has_labels:
        raise ValueError(f"{bundle.split_tag} bundle has no labels")
    return [accuracy(w, bundle.gt_labels) for w in bundle.weak_logits]


def probe_accuracy(probe: LinearProbe, bundle: DataBundle) -> float:
    if not bundle.has_labels:
        raise ValueError(f"{bundle.split_tag} bundle has no labels")
    return accuracy(probe.logits(bundle.embeddings), bundle.gt_labels)

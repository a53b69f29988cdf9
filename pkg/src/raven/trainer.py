"""Training loops: RAVEN (easy-sample warm-up, then joint updates of probe and
ensemble weights) and the naive / uniform-ensemble / ground-truth baselines.

All methods share one loop so that degenerate configurations coincide
exactly: RAVEN with a single weak model replays naive training step for
step, as does a one-model uniform ensemble.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ._backend import get_kernels
from .data import EPS_W, DataBundle, LinearProbe, SimplexWeights, TrainRecord
from .losses import CombineMode, softmax
from .optim import AdamState, CosineSchedule, adam_step, cosine_lr, project_simplex, sgd_step_theta

METHODS = ("naive", "ensemble", "raven", "gt")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    method: str = "raven"
    epochs: int = 20
    batch_size: int = 64
    lr_s: float = 1e-2
    lr_s_min: float = 0.0
    lr_w: float = 1e-2
    warmup_fraction: float = 0.2
    mode: str = "probability_average"
    seed: int = 0
    weak_index: int = 0
    label_style: str = "soft"
    update_order: str = "simultaneous"
    probe_init: str = "zeros"
    eps_w: float = EPS_W
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.mode = CombineMode.parse(self.mode).value
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must lie in (0, 1)")
        if not (self.lr_s > 0 and self.lr_w > 0):
            raise ConfigError("learning rates must be positive")
        if not 0 <= self.lr_s_min <= self.lr_s:
            raise ConfigError("need 0 <= lr_s_min <= lr_s")
        if self.label_style not in ("soft", "hard"):
            raise ConfigError("label_style must be 'soft' or 'hard'")
        if self.update_order not in ("simultaneous", "w_then_s"):
            raise ConfigError("update_order must be 'simultaneous' or 'w_then_s'")
        if self.probe_init not in ("zeros", "gaussian"):
            raise ConfigError("probe_init must be 'zeros' or 'gaussian'")
        if self.weak_index < 0:
            raise ConfigError("weak_index must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    probe: LinearProbe
    theta: SimplexWeights
    records: list[TrainRecord]
    easy_size: int
    config: TrainConfig
    total_steps: int
    warmup_steps: int = 0
    easy_fallback: bool = False
    names: tuple[str, ...] = field(default=())

    def probe_digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.probe.weight.tobytes())
        h.update(self.probe.bias.tobytes())
        return h.hexdigest()

    def summary(self) -> dict:
        return {
            "method": self.config.method,
            "config": self.config.to_dict(),
            "k": self.probe.k,
            "d": self.probe.d,
            "m": len(self.names),
            "weak_names": list(self.names),
            "final_theta": [float(t) for t in self.theta.theta],
            "final_loss": self.records[-1].loss if self.records else None,
            "total_steps": self.total_steps,
            "warmup_steps": self.warmup_steps,
            "easy_size": self.easy_size,
            "easy_fallback": self.easy_fallback,
            "probe_sha256": self.probe_digest(),
        }


def find_easy_samples(bundle: DataBundle) -> np.ndarray:
    """Rows where every weak model's argmax (lowest index on ties) agrees."""
    votes = np.stack([w.argmax(axis=1) for w in bundle.weak_logits])
    return np.flatnonzero((votes == votes[0]).all(axis=0))


class _BatchStream:
    """Endless minibatches over an index pool, reshuffled each pass."""

    def __init__(self, rng: np.random.Generator, pool: np.ndarray, batch_size: int):
        self.rng = rng
        self.batch_size = batch_size
        self.pool = pool
        self.order = pool[:0]
        self.pos = 0

    def use(self, pool: np.ndarray) -> None:
        # switching to the same pool keeps the current pass going
        if np.array_equal(pool, self.pool):
            return
        self.pool = pool
        self.order = pool[:0]
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos >= self.order.size:
            self.order = self.pool[self.rng.permutation(self.pool.size)]
            self.pos = 0
        batch = self.order[self.pos:self.pos + self.batch_size]
        self.pos += self.batch_size
        return batch


def _one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _targets(bundle: DataBundle, config: TrainConfig) -> tuple[np.ndarray, int]:
    """(m', n, k) array handed to the kernel, and the kernel's mode code."""
    mode = CombineMode.parse(config.mode)
    if config.method == "gt":
        if not bundle.has_labels:
            raise ConfigError("gt training needs ground-truth labels")
        return _one_hot(bundle.gt_labels, bundle.k)[None], 0
    if config.method == "naive":
        if config.weak_index >= bundle.m:
            raise ConfigError(f"weak_index {config.weak_index} out of range for m={bundle.m}")
        logits = [bundle.weak_logits[config.weak_index]]
    else:
        logits = bundle.weak_logits
    stack = np.stack([w.astype(np.float64) for w in logits])
    if config.label_style == "hard":
        return np.stack([_one_hot(z.argmax(axis=1), bundle.k) for z in stack]), 0
    if mode is CombineMode.PROBABILITY_AVERAGE:
        return softmax(stack), 0
    return stack, 1


def _initial_probe(bundle: DataBundle, config: TrainConfig, probe_init: LinearProbe | None) -> LinearProbe:
    if probe_init is not None:
        if (probe_init.k, probe_init.d) != (bundle.k, bundle.d):
            raise ConfigError("initial probe shape does not match bundle")
        return probe_init.copy()
    if config.probe_init == "gaussian":
        return LinearProbe.gaussian(bundle.k, bundle.d, seed=config.seed)
    return LinearProbe.zeros(bundle.k, bundle.d)


def _fit(bundle: DataBundle, config: TrainConfig, probe_init, adaptive: bool, backend) -> TrainResult:
    if bundle.n == 0:
        raise ConfigError("cannot train on an empty bundle")
    kern = get_kernels(backend)
    X = np.ascontiguousarray(bundle.embeddings, dtype=np.float64)
    T, mode_code = _targets(bundle, config)
    T = np.ascontiguousarray(T)
    m = T.shape[0]
    probe = _initial_probe(bundle, config, probe_init)
    adam = AdamState.for_probe(probe, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)

    total = config.epochs * math.ceil(bundle.n / config.batch_size)
    schedule = CosineSchedule(config.lr_s, total, config.lr_s_min)
    rng = np.random.default_rng(config.seed)
    full = np.arange(bundle.n, dtype=np.int64)

    warmup = 0
    fallback = False
    easy_size = bundle.n
    pool = full
    if adaptive:
        warmup = min(math.ceil(config.warmup_fraction * total), total)
        easy = find_easy_samples(bundle).astype(np.int64)
        easy_size = int(easy.size)
        if easy.size:
            pool = easy
        else:
            fallback = True
    stream = _BatchStream(rng, pool, config.batch_size)

    theta = SimplexWeights.uniform(m)
    lr_w = config.lr_w if adaptive else 0.0
    records = []
    for step in range(total):
        lr_s = cosine_lr(schedule, step)
        if adaptive and step == warmup:
            stream.use(full)
        idx = stream.next()
        loss, gW, gb, gt = kern.loss_grad(X, probe.weight, probe.bias, T, theta.theta, idx, mode_code)
        phase = "fixed"
        if adaptive:
            phase = "warmup" if step < warmup else "adaptive"
        if phase == "adaptive":
            theta = project_simplex(sgd_step_theta(theta, gt, config.lr_w), config.eps_w)
            if config.update_order == "w_then_s":
                _, gW, gb, _ = kern.loss_grad(X, probe.weight, probe.bias, T, theta.theta, idx, mode_code)
        adam_step(probe, gW, gb, adam, lr_s, backend=backend)
        records.append(TrainRecord(step, phase, float(loss), tuple(theta.theta.tolist()), lr_s, lr_w))

    return TrainResult(
        probe=probe, theta=theta, records=records, easy_size=easy_size, config=config,
        total_steps=total, warmup_steps=warmup, easy_fallback=fallback, names=bundle.names,
    )


def train_raven(tuning: DataBundle, probe_init: LinearProbe | None = None,
                config: TrainConfig | None = None, backend: str | None = None) -> TrainResult:
    config = config or TrainConfig(method="raven")
    if config.method != "raven":
        raise ConfigError(f"train_raven called with method={config.method!r}")
    return _fit(tuning, config, probe_init, adaptive=True, backend=backend)


def train_baseline(tuning: DataBundle, probe_init: LinearProbe | None = None,
                   config: TrainConfig | None = None, backend: str | None = None) -> TrainResult:
    config = config or TrainConfig(method="naive")
    if config.method == "raven":
        raise ConfigError("use train_raven for method='raven'")
    return _fit(tuning, config, probe_init, adaptive=False, backend=backend)


def train(tuning: DataBundle, config: TrainConfig, probe_init: LinearProbe | None = None,
          backend: str | None = None) -> TrainResult:
    if config.method == "raven":
        return train_raven(tuning, probe_init, config, backend)
    return train_baseline(tuning, probe_init, config, backend)


def save_run(result: TrainResult, run_dir, metrics: dict | None = None) -> Path:
    """Write result.json, theta_trajectory.csv, probe.bin (and metrics.json if given)."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "result.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    (run_dir / "probe.bin").write_bytes(result.probe.to_bytes())
    m = result.theta.m
    with open(run_dir / "theta_trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "phase", *[f"theta_{i}" for i in range(m)], "loss", "lr_S", "lr_W"])
        for r in result.records:
            w.writerow([r.step, r.phase, *[repr(t) for t in r.theta], repr(r.loss), repr(r.lr_s), repr(r.lr_w)])
    if metrics is not None:
        (run_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return run_dir


def load_run(run_dir) -> tuple[dict, LinearProbe]:
    run_dir = Path(run_dir)
    rpath, ppath = run_dir / "result.json", run_dir / "probe.bin"
    if not rpath.is_file() or not ppath.is_file():
        raise FileNotFoundError(f"{run_dir} is missing result.json or probe.bin")
    summary = json.loads(rpath.read_text())
    probe = LinearProbe.from_bytes(ppath.read_bytes(), summary["k"], summary["d"])
    return summary, probe

"""Synthetic weak-to-strong problems with a controllable distribution shift.

Geometry
--------
Raw inputs have ``informative_dims`` coordinates carrying class structure
(class-conditional Gaussians with class-specific anisotropic covariance)
and the remaining coordinates as pure nuisance noise. The source split is
drawn from this distribution. Tuning, validation and target splits are
drawn from a shifted copy: every class centroid is translated by
``shift_magnitude`` along its own random unit direction (spanning both
informative and nuisance coordinates) and every class covariance is
inflated by ``1 + cov_inflation * shift_magnitude``.

Weak annotators are multinomial logistic regressions on raw inputs, each
trained on its own bootstrap of a labelled source pool whose labels are
corrupted at that model's noise rate, from a seeded random start and for a
fixed budget of full-batch gradient steps. Their nuisance weights are
therefore seed dependent, which is what makes them disagree off-source.

The strong backbone is a fixed random lift
``tanh(A @ x + c)`` into ``d_emb`` dimensions whose nuisance columns are
scaled by ``nuisance_gain``: a pretrained representation that mostly
ignores irrelevant directions.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import DataBundle, LinearProbe, load_bundle, save_bundle
from .losses import CombineMode, combine_weak, soft_cross_entropy, softmax
from .metrics import accuracy

SPLIT_ORDER = ("source", "tuning", "validation", "target")


class SynthConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    k: int = 4
    d_raw: int = 10
    d_emb: int = 64
    n: int = 2000
    shift_magnitude: float = 1.0
    m: int = 3
    weak_quality: tuple[float, ...] = (0.0, 0.35, 0.35)
    seed: int = 0
    informative_dims: int | None = None
    class_sep: float = 1.0
    cov_inflation: float = 0.5
    nuisance_gain: float = 0.05
    lift_gain: float = 1.5
    n_weak_train: int = 1000
    weak_steps: int = 100
    weak_lr: float = 0.5
    weak_init_std: float = 0.5
    noise_kind: str = "pairflip"

    def __post_init__(self):
        self.weak_quality = tuple(float(q) for q in self.weak_quality)
        if self.k < 2:
            raise SynthConfigError("k must be >= 2")
        if self.m < 1 or len(self.weak_quality) != self.m:
            raise SynthConfigError(f"need m >= 1 and one quality per weak model (m={self.m})")
        if any(not 0.0 <= q < 1.0 for q in self.weak_quality):
            raise SynthConfigError("weak_quality entries must lie in [0, 1)")
        if self.shift_magnitude < 0:
            raise SynthConfigError("shift_magnitude must be >= 0")
        if self.d_raw < 1 or self.d_emb < 1 or self.n < 1 or self.n_weak_train < self.k:
            raise SynthConfigError("dimensions and sample counts must be positive")
        if self.informative_dims is None:
            self.informative_dims = max(1, self.d_raw // 2)
        if not 1 <= self.informative_dims <= self.d_raw:
            raise SynthConfigError("informative_dims must lie in [1, d_raw]")
        if self.noise_kind not in ("pairflip", "symmetric"):
            raise SynthConfigError("noise_kind must be 'pairflip' or 'symmetric'")
        if self.class_sep <= 0 or self.cov_inflation < 0:
            raise SynthConfigError("degenerate covariance or separation request")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weak_quality"] = list(self.weak_quality)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        try:
            return cls(**d)
        except TypeError as exc:
            raise SynthConfigError(str(exc)) from None


@dataclass
class SynthProblem:
    config: SynthConfig
    splits: dict[str, DataBundle]
    weak_accs: dict[str, list[float]] = field(default_factory=dict)

    def __getitem__(self, split: str) -> DataBundle:
        return self.splits[split]


class _Geometry:
    def __init__(self, cfg: SynthConfig, rng: np.random.Generator):
        k, d, di = cfg.k, cfg.d_raw, cfg.informative_dims
        self.means = np.zeros((k, d))
        self.means[:, :di] = rng.normal(scale=cfg.class_sep, size=(k, di))
        self.scales = []
        for _ in range(k):
            q, _ = np.linalg.qr(rng.normal(size=(di, di)))
            root = np.eye(d)
            root[:di, :di] = q * rng.uniform(0.5, 1.5, size=di)
            self.scales.append(root)
        dirs = rng.normal(size=(k, d))
        self.shift_dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        # class each annotator mistakes class c for under pair-flip noise
        self.confusion = (np.arange(k) + rng.integers(1, k, size=k)) % k
        self.cfg = cfg

    def sample(self, n: int, shifted: bool, rng: np.random.Generator):
        cfg = self.cfg
        y = rng.integers(0, cfg.k, size=n)
        eps = rng.normal(size=(n, cfg.d_raw))
        x = np.empty((n, cfg.d_raw))
        inflate = 1.0 + cfg.cov_inflation * cfg.shift_magnitude if shifted else 1.0
        for c in range(cfg.k):
            rows = y == c
            mean = self.means[c] + (cfg.shift_magnitude * self.shift_dirs[c] if shifted else 0.0)
            x[rows] = mean + inflate * eps[rows] @ self.scales[c].T
        return x, y


class _Lift:
    def __init__(self, cfg: SynthConfig, rng: np.random.Generator):
        a = rng.normal(scale=cfg.lift_gain / np.sqrt(cfg.informative_dims), size=(cfg.d_emb, cfg.d_raw))
        a[:, cfg.informative_dims:] *= cfg.nuisance_gain
        self.a = a
        self.c = rng.uniform(-1.0, 1.0, size=cfg.d_emb)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(x @ self.a.T + self.c)


def _fit_weak(x, y, k, quality, confusion, cfg: SynthConfig, rng: np.random.Generator):
    """Multinomial logistic regression on noisy labels; returns (W, b)."""
    n, d = x.shape
    boot = rng.integers(0, n, size=n)
    xb, yb = x[boot], y[boot].copy()
    flip = rng.random(n) < quality
    if cfg.noise_kind == "pairflip":
        yb[flip] = confusion[yb[flip]]
    else:
        yb[flip] = (yb[flip] + rng.integers(1, k, size=int(flip.sum()))) % k
    onehot = np.eye(k)[yb]
    W = rng.normal(scale=cfg.weak_init_std, size=(k, d))
    b = np.zeros(k)
    for _ in range(cfg.weak_steps):
        p = softmax(xb @ W.T + b)
        g = (p - onehot) / n
        W -= cfg.weak_lr * (g.T @ xb)
        b -= cfg.weak_lr * g.sum(axis=0)
    return W, b


def generate_problem(config: SynthConfig) -> SynthProblem:
    cfg = config
    root = np.random.SeedSequence(cfg.seed)
    s_geom, s_lift, s_pool, s_weak, s_split = root.spawn(5)
    geom = _Geometry(cfg, np.random.default_rng(s_geom))
    lift = _Lift(cfg, np.random.default_rng(s_lift))

    x_pool, y_pool = geom.sample(cfg.n_weak_train, shifted=False, rng=np.random.default_rng(s_pool))
    weak = [
        _fit_weak(x_pool, y_pool, cfg.k, q, geom.confusion, cfg, np.random.default_rng(s))
        for q, s in zip(cfg.weak_quality, s_weak.spawn(cfg.m))
    ]
    names = tuple(f"weak_{i}_q{q:g}" for i, q in enumerate(cfg.weak_quality))

    splits, accs = {}, {}
    for tag, s in zip(SPLIT_ORDER, s_split.spawn(len(SPLIT_ORDER))):
        x, y = geom.sample(cfg.n, shifted=(tag != "source"), rng=np.random.default_rng(s))
        logits = tuple((x @ W.T + b).astype(np.float32) for W, b in weak)
        bundle = DataBundle(
            embeddings=lift(x).astype(np.float32), weak_logits=logits, k=cfg.k,
            gt_labels=y, split_tag=tag, names=names,
        )
        splits[tag] = bundle
        accs[tag] = [accuracy(z, y) for z in bundle.weak_logits]
    return SynthProblem(cfg, splits, accs)


def save_problem(problem: SynthProblem, out_dir, force: bool = False) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = out / "problem.json"
    if meta.exists() and not force:
        raise FileExistsError(f"{meta} exists; pass force=True to overwrite")
    for tag, bundle in problem.splits.items():
        save_bundle(bundle, out / tag, force=force)
    meta.write_text(json.dumps({
        "config": problem.config.to_dict(),
        "splits": list(problem.splits),
        "weak_accuracy": problem.weak_accs,
    }, indent=2) + "\n")
    return out


def load_problem(path) -> SynthProblem:
    path = Path(path)
    meta = json.loads((path / "problem.json").read_text())
    splits = {tag: load_bundle(path / tag) for tag in meta["splits"]}
    return SynthProblem(SynthConfig.from_dict(meta["config"]), splits, meta.get("weak_accuracy", {}))


def oracle_best_weak(problem, split_tag: str = "target") -> tuple[int, bool]:
    """Index of the most accurate weak model on a split, and whether it is tied."""
    bundle = problem[split_tag] if not isinstance(problem, DataBundle) else problem
    if not bundle.has_labels:
        raise ValueError(f"split {split_tag!r} has no labels")
    accs = np.array([accuracy(z, bundle.gt_labels) for z in bundle.weak_logits])
    best = int(np.argmax(accs))
    return best, bool((accs == accs[best]).sum() > 1)


def oracle_loss_grid(problem, probe: LinearProbe, theta_grid, split_tag: str = "tuning",
                     mode=CombineMode.PROBABILITY_AVERAGE) -> np.ndarray:
    """Adaptation loss at each weight vector of ``theta_grid``, by direct per-sample evaluation.

    Deliberately slow and independent of the training kernels.
    """
    bundle = problem[split_tag] if not isinstance(problem, DataBundle) else problem
    grid = np.atleast_2d(np.asarray(theta_grid, dtype=np.float64))
    if grid.shape[1] != bundle.m:
        raise ValueError(f"grid points need {bundle.m} coordinates")
    for t in grid:
        if (t < 0).any() or abs(t.sum() - 1.0) > 1e-9:
            raise ValueError(f"grid point {t} is off the simplex")
    preds = probe.predict_proba(bundle.embeddings)
    rows = np.stack(bundle.weak_logits, axis=1).astype(np.float64)
    out = np.empty(len(grid))
    for g, t in enumerate(grid):
        total = 0.0
        for i in range(bundle.n):
            total += soft_cross_entropy(preds[i], combine_weak(rows[i], t, mode))
        out[g] = total / bundle.n
    return out

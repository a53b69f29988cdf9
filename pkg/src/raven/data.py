"""Containers for data splits, ensemble weights, probes and training logs,
plus the on-disk bundle format.

A bundle directory looks like::

    manifest.json    {"n","d","k","m","split","names","has_labels",
                      "dtype":"f32le","label_dtype":"u32le","format_version":1}
    embeddings.bin   n*d float32, little-endian, row-major
    labels.bin       n uint32, little-endian (only if has_labels)
    weak_0.bin ...   n*k float32 per weak model
"""
from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1
SPLITS = ("source", "tuning", "validation", "target")
EPS_W = 1e-6

_F32 = np.dtype("<f4")
_U32 = np.dtype("<u4")


class BundleError(Exception):
    """Base class for bundle loading/saving problems."""


class MissingFileError(BundleError):
    pass


class DimensionMismatchError(BundleError):
    pass


class NonFiniteError(BundleError):
    pass


class LabelRangeError(BundleError):
    pass


class BundleExistsError(BundleError):
    pass


@dataclass(frozen=True, eq=False)
class DataBundle:
    """One split: strong-backbone embeddings, optional labels, weak-model logits.

    Matrices are kept as float32 (the storage precision) so that a
    save/load round trip is bit-exact.
    """

    embeddings: np.ndarray
    weak_logits: tuple[np.ndarray, ...]
    k: int
    gt_labels: np.ndarray | None = None
    split_tag: str = "tuning"
    names: tuple[str, ...] = ()

    def __post_init__(self):
        emb = np.ascontiguousarray(self.embeddings, dtype=np.float32)
        if emb.ndim != 2:
            raise DimensionMismatchError(f"embeddings must be 2-d, got shape {emb.shape}")
        n = emb.shape[0]
        weak = tuple(np.ascontiguousarray(w, dtype=np.float32) for w in self.weak_logits)
        if len(weak) < 1:
            raise DimensionMismatchError("a bundle needs at least one weak model")
        for i, w in enumerate(weak):
            if w.shape != (n, self.k):
                raise DimensionMismatchError(
                    f"weak model {i}: expected shape {(n, self.k)}, got {w.shape}"
                )
        labels = self.gt_labels
        if labels is not None:
            labels = np.ascontiguousarray(labels, dtype=np.int64)
            if labels.shape != (n,):
                raise DimensionMismatchError(f"labels: expected shape {(n,)}, got {labels.shape}")
            if n and (labels.min() < 0 or labels.max() >= self.k):
                raise LabelRangeError(f"labels must lie in [0, {self.k})")
        if self.split_tag not in SPLITS:
            raise ValueError(f"unknown split tag {self.split_tag!r}")
        names = tuple(self.names) if self.names else tuple(f"weak_{i}" for i in range(len(weak)))
        if len(names) != len(weak):
            raise DimensionMismatchError("one name per weak model is required")
        if not np.isfinite(emb).all() or not all(np.isfinite(w).all() for w in weak):
            raise NonFiniteError("bundle contains non-finite values")
        for arr in (emb, *weak) + ((labels,) if labels is not None else ()):
            arr.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "weak_logits", weak)
        object.__setattr__(self, "gt_labels", labels)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    @property
    def m(self) -> int:
        return len(self.weak_logits)

    @property
    def has_labels(self) -> bool:
        return self.gt_labels is not None

    def weak_stack(self) -> np.ndarray:
        """Weak logits as one (m, n, k) float64 array."""
        return np.stack([w.astype(np.float64) for w in self.weak_logits])

    def __eq__(self, other):
        if not isinstance(other, DataBundle):
            return NotImplemented
        if (self.k, self.split_tag, self.names, self.has_labels) != (
            other.k, other.split_tag, other.names, other.has_labels
        ):
            return False
        if self.embeddings.shape != other.embeddings.shape or self.m != other.m:
            return False
        same = self.embeddings.tobytes() == other.embeddings.tobytes()
        same &= all(a.tobytes() == b.tobytes() for a, b in zip(self.weak_logits, other.weak_logits))
        if self.has_labels:
            same &= bool(np.array_equal(self.gt_labels, other.gt_labels))
        return bool(same)

    __hash__ = None


def subset(bundle: DataBundle, indices: Sequence[int]) -> DataBundle:
    """Select rows (in the given order) consistently across every matrix."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= bundle.n):
        raise IndexError(f"subset index out of range for n={bundle.n}")
    if np.unique(idx).size != idx.size:
        raise IndexError("subset indices must be unique")
    return DataBundle(
        embeddings=bundle.embeddings[idx],
        weak_logits=tuple(w[idx] for w in bundle.weak_logits),
        k=bundle.k,
        gt_labels=None if bundle.gt_labels is None else bundle.gt_labels[idx],
        split_tag=bundle.split_tag,
        names=bundle.names,
    )


def save_bundle(bundle: DataBundle, path, force: bool = False) -> None:
    path = Path(path)
    if path.exists():
        if not force:
            raise BundleExistsError(f"{path} exists; pass force=True to overwrite")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    path.mkdir(parents=True)
    manifest = {
        "n": bundle.n,
        "d": bundle.d,
        "k": bundle.k,
        "m": bundle.m,
        "split": bundle.split_tag,
        "names": list(bundle.names),
        "has_labels": bundle.has_labels,
        "dtype": "f32le",
        "label_dtype": "u32le",
        "format_version": FORMAT_VERSION,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    (path / "embeddings.bin").write_bytes(bundle.embeddings.astype(_F32).tobytes())
    if bundle.has_labels:
        (path / "labels.bin").write_bytes(bundle.gt_labels.astype(_U32).tobytes())
    for i, w in enumerate(bundle.weak_logits):
        (path / f"weak_{i}.bin").write_bytes(w.astype(_F32).tobytes())


def _read(path: Path, dtype, count: int, what: str) -> np.ndarray:
    if not path.is_file():
        raise MissingFileError(f"missing {what}: {path}")
    raw = path.read_bytes()
    if len(raw) != count * dtype.itemsize:
        raise DimensionMismatchError(
            f"{path.name}: expected {count} values from manifest, found {len(raw) / dtype.itemsize:g}"
        )
    return np.frombuffer(raw, dtype=dtype).copy()


def load_bundle(path) -> DataBundle:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise MissingFileError(f"missing manifest: {mpath}")
    man = json.loads(mpath.read_text(encoding="utf-8"))
    if man.get("format_version") != FORMAT_VERSION:
        raise BundleError(f"unsupported format_version {man.get('format_version')!r}")
    if man.get("dtype") != "f32le" or man.get("label_dtype") != "u32le":
        raise BundleError("unsupported dtype in manifest")
    n, d, k, m = (int(man[key]) for key in ("n", "d", "k", "m"))
    if m < 1:
        raise DimensionMismatchError("manifest declares no weak models")
    names = man.get("names") or [f"weak_{i}" for i in range(m)]
    if len(names) != m:
        raise DimensionMismatchError("manifest names do not match m")

    emb = _read(path / "embeddings.bin", _F32, n * d, "embeddings").reshape(n, d)
    weak = [_read(path / f"weak_{i}.bin", _F32, n * k, f"weak logits {i}").reshape(n, k) for i in range(m)]
    labels = None
    if man.get("has_labels"):
        labels = _read(path / "labels.bin", _U32, n, "labels")
        if n and labels.max() >= k:
            raise LabelRangeError(f"label {int(labels.max())} out of range for k={k}")
    return DataBundle(
        embeddings=emb,
        weak_logits=tuple(weak),
        k=k,
        gt_labels=labels,
        split_tag=man["split"],
        names=tuple(names),
    )


@dataclass
class SimplexWeights:
    """Ensembling weights: strictly positive, summing to one."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if theta.size < 1:
            raise ValueError("need at least one weight")
        if not np.isfinite(theta).all() or (theta <= 0).any():
            raise ValueError(f"weights must be finite and positive, got {theta}")
        if abs(theta.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {theta.sum()!r}")
        self.theta = theta

    @classmethod
    def uniform(cls, m: int) -> SimplexWeights:
        return cls(np.full(m, 1.0 / m))

    @property
    def m(self) -> int:
        return self.theta.size


@dataclass
class LinearProbe:
    """Linear classifier over frozen embeddings: logits = x @ weight.T + bias."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64, order="C")
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("probe weight must be k x d with a length-k bias")
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise ValueError("probe parameters must be finite")

    @classmethod
    def zeros(cls, k: int, d: int) -> LinearProbe:
        return cls(np.zeros((k, d)), np.zeros(k))

    @classmethod
    def gaussian(cls, k: int, d: int, seed: int, std: float = 0.01) -> LinearProbe:
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, std, size=(k, d)), np.zeros(k))

    @property
    def k(self) -> int:
        return self.weight.shape[0]

    @property
    def d(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> LinearProbe:
        return LinearProbe(self.weight.copy(), self.bias.copy())

    def logits(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weight.T + self.bias

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        z = self.logits(x)
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def to_bytes(self) -> bytes:
        """k*d weights then k biases, float32 little-endian."""
        return self.weight.astype(_F32).tobytes() + self.bias.astype(_F32).tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes, k: int, d: int) -> LinearProbe:
        if len(raw) != (k * d + k) * 4:
            raise DimensionMismatchError(f"probe.bin holds {len(raw) // 4} values, expected {k * d + k}")
        flat = np.frombuffer(raw, dtype=_F32).astype(np.float64)
        return cls(flat[: k * d].reshape(k, d), flat[k * d:])


@dataclass(frozen=True)
class TrainRecord:
    step: int
    phase: str  # "warmup" | "adaptive"; baselines log "fixed"
    loss: float
    theta: tuple[float, ...]
    lr_s: float
    lr_w: float

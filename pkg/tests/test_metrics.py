import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from raven.data import DataBundle, LinearProbe, SimplexWeights
from raven.metrics import (
    accuracy,
    generalization_gap,
    hit_or_miss,
    pgr_ensemble,
    pgr_single,
    probe_accuracy,
    weak_accuracies,
)

from conftest import make_bundle


def test_accuracy_examples():
    labels = np.array([0, 2, 1, 1])
    assert accuracy(np.eye(3)[labels], labels) == 1.0
    assert accuracy(np.eye(3)[(labels + 1) % 3], labels) == 0.0
    pred = np.eye(3)[[0, 2, 1, 0]]
    assert accuracy(pred, labels) == 0.75
    # ties break to the lowest index
    assert accuracy(np.array([[1.0, 1.0], [0.0, 0.0]]), np.array([0, 0])) == 1.0
    with pytest.raises(ValueError):
        accuracy(np.zeros((0, 2)), np.zeros(0, dtype=int))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_accuracy_row_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    pred, labels = rng.normal(size=(20, 3)), rng.integers(0, 3, 20)
    perm = rng.permutation(20)
    assert accuracy(pred[perm], labels[perm]) == accuracy(pred, labels)


def test_pgr_single_examples():
    assert pgr_single(0.4, 0.4, 0.9).pgr == 0.0
    assert pgr_single(0.4, 0.9, 0.9).pgr == 1.0
    assert pgr_single(0.4, 0.65, 0.9).pgr == pytest.approx(0.5, abs=1e-15)
    rep = pgr_single(0.5, 0.7, 0.5)
    assert rep.undefined and rep.pgr is None and rep.variant == "single"


def test_pgr_ensemble_examples():
    rep = pgr_ensemble([0.4, 0.6], 0.7, [0.8, 1.0])
    assert rep.pgr == pytest.approx(0.5, abs=1e-15) and rep.variant == "ensemble"
    assert pgr_ensemble([0.4, 0.6], 0.7, [0.4, 0.6]).undefined
    one = pgr_ensemble([0.3], 0.55, [0.8])
    assert one.pgr == pgr_single(0.3, 0.55, 0.8).pgr
    with pytest.raises(ValueError):
        pgr_ensemble([0.4, 0.6], 0.7, [0.8])


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 200), st.integers(0, 200), st.integers(0, 200),
       st.floats(-2, 2), st.floats(0.5, 2), st.booleans())
def test_pgr_affine_invariance(w, p, g, a, b, flip):
    # accuracies are counts over n = 200 rows
    if w == g:
        return
    w, p, g = w / 200, p / 200, g / 200
    b = -b if flip else b
    base = pgr_single(w, p, g).pgr
    moved = pgr_single(a + b * w, a + b * p, a + b * g).pgr
    assert abs(base - moved) < 1e-12


def test_pgr_ensemble_identical_models_equal_single():
    rep = pgr_ensemble([0.45] * 3, 0.6, [0.85] * 3)
    assert rep.pgr == pytest.approx(pgr_single(0.45, 0.6, 0.85).pgr, abs=1e-15)


def _ce(probe, X, y):
    total = 0.0
    for row, label in zip(X, y):
        z = probe.weight @ row + probe.bias
        lse = max(z) + math.log(sum(math.exp(v - max(z)) for v in z))
        total += lse - z[label]
    return total / len(y)


def test_generalization_gap_examples():
    b = make_bundle(n=10, d=3, k=3)
    rng = np.random.default_rng(1)
    probe = LinearProbe(rng.normal(size=(3, 3)), rng.normal(size=3))
    assert generalization_gap(probe, b, b) == 0.0
    assert generalization_gap(LinearProbe.zeros(3, 3), b, make_bundle(n=7, d=3, k=3, seed=9)) == pytest.approx(0, abs=1e-15)


def test_generalization_gap_hand_built():
    # 2-class probe p(y=1|x) = sigmoid(x); risks chosen as 0.9 and 1.2 via the inverse of -log
    probe = LinearProbe([[0.0], [1.0]], [0.0, 0.0])

    def x_for(risk):
        # -log sigmoid(x) = risk  ->  x = -log(exp(risk) - 1)
        return -math.log(math.exp(risk) - 1)

    def bundle(risk):
        X = np.array([[x_for(risk)], [x_for(risk)]])
        return DataBundle(X, (np.zeros((2, 2)),), k=2, gt_labels=[1, 1])

    src, tun = bundle(0.9), bundle(1.2)
    assert _ce(probe, src.embeddings.astype(float), src.gt_labels) == pytest.approx(0.9, abs=1e-6)
    assert generalization_gap(probe, src, tun) == pytest.approx(0.3, abs=1e-6)
    with pytest.raises(ValueError):
        generalization_gap(probe, make_bundle(labels=False), tun)


def test_hit_or_miss_examples():
    accs = (0.9, 0.5, 0.4)
    assert hit_or_miss(SimplexWeights([0.7, 0.2, 0.1]), accs).hit
    miss = hit_or_miss(np.array([0.2, 0.7, 0.1]), accs)
    assert not miss.hit and not miss.tie and str(miss) == "miss"
    tied = hit_or_miss([0.7, 0.2, 0.1], (0.9, 0.9, 0.4))
    assert not tied.hit and tied.tie
    with pytest.raises(ValueError):
        hit_or_miss([0.5, 0.5], accs)
    with pytest.raises(ValueError):
        hit_or_miss([1.0], [0.3])


def test_weak_and_probe_accuracy():
    b = make_bundle(n=20, k=3, m=2)
    expected = [float(np.mean(w.argmax(axis=1) == b.gt_labels)) for w in b.weak_logits]
    assert weak_accuracies(b) == expected
    assert probe_accuracy(LinearProbe.zeros(3, b.d), b) == float(np.mean(b.gt_labels == 0))
    with pytest.raises(ValueError):
        weak_accuracies(make_bundle(labels=False))

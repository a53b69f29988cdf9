import sys

import numpy as np
import pytest

from raven.data import DataBundle


def make_bundle(n=6, d=3, k=3, m=2, seed=0, labels=True, split="tuning"):
    rng = np.random.default_rng(seed)
    return DataBundle(
        embeddings=rng.normal(size=(n, d)),
        weak_logits=tuple(rng.normal(size=(n, k)) * 2 for _ in range(m)),
        k=k,
        gt_labels=rng.integers(0, k, size=n) if labels else None,
        split_tag=split,
    )


@pytest.fixture
def bundle():
    return make_bundle()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in mod.RESULTS:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")

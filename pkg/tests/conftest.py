import sys

import numpy as np
import pytest

from ltcontrast.core import CENTER_VIEW, normalize
from ltcontrast.losses import ContrastiveBatch


def random_batch(rng, n_classes=3, dim=4, size=None, centers=False, min_per_class=2):
    """Random unit-norm batch where every class has at least ``min_per_class`` samples."""
    size = size if size is not None else int(rng.integers(n_classes * min_per_class, n_classes * 4 + 1))
    labels = np.concatenate([
        np.repeat(np.arange(n_classes), min_per_class),
        rng.integers(0, n_classes, size - n_classes * min_per_class),
    ])
    rng.shuffle(labels)
    feats = normalize(rng.normal(size=(labels.size, dim)))
    views = rng.integers(0, 4, labels.size)
    counts = rng.integers(1, 500, n_classes)
    if centers:
        feats = np.vstack([feats, normalize(rng.normal(size=(n_classes, dim)))])
        labels = np.concatenate([labels, np.arange(n_classes)])
        views = np.concatenate([views, np.full(n_classes, CENTER_VIEW)])
    return ContrastiveBatch(feats, labels, views, counts)


def with_features(batch, feats):
    return ContrastiveBatch(feats, batch.labels, batch.views, batch.class_counts)


def replace_row(batch, k, row):
    feats = batch.features.copy()
    feats[k] = row
    return with_features(batch, feats)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def naive_scl(batch, i, tau):
    """Direct double loop over positives and candidates."""
    z = batch.features
    pos = [k for k in range(len(batch)) if k != i and not batch.is_center[k] and batch.labels[k] == batch.labels[i]]
    cand = [k for k in range(len(batch)) if k != i and not batch.is_center[k]]
    total = 0.0
    for p in pos:
        denom = sum(np.exp(z[i] @ z[a] / tau) for a in cand)
        total += -np.log(np.exp(z[i] @ z[p] / tau) / denom)
    return total / len(pos)


def naive_acl(batch, i, weights, tau):
    z = batch.features
    yi = batch.labels[i]
    pos = [k for k in range(len(batch)) if k != i and not batch.is_center[k] and batch.labels[k] == yi]
    pos += [k for k in range(len(batch)) if batch.is_center[k] and batch.labels[k] == yi]
    neg = [k for k in range(len(batch)) if batch.labels[k] != yi]
    weights = np.asarray(weights)
    if weights.ndim == 2:
        weights = weights[i]
    total = 0.0
    for p in pos:
        num = np.exp(z[i] @ z[p] / tau)
        denom = num + sum(weights[n] * np.exp(z[i] @ z[n] / tau) for n in neg)
        total += np.log(num / denom)
    return -total / len(pos)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acceptance.RESULTS):
            terminalreporter.write_line(acceptance.RESULTS[n])

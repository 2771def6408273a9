"""Gradient-conflict accounting for contrastive batches.

A positive pair (i, k) is *conflicting* when its instance-gradient
coefficient is strictly positive, i.e. the loss pushes a same-class entry
away from the anchor. Under SCL that happens exactly when
``q_(i,k) > 1 / |P(i)|``. A positive is *easy* when it is closer to the
anchor than the (renormalized) mean of the anchor's in-batch positives.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .gradients import scl_coefficients
from .losses import DEFAULT_TAU

_EASY_TOL = 1e-12  # absorbs rounding when a positive equals the mean direction


def _positive_means(batch, pos_mask):
    z = batch.features
    sums = pos_mask.astype(np.float64) @ z
    norms = np.linalg.norm(sums, axis=1, keepdims=True)
    return np.divide(sums, norms, out=np.zeros_like(sums), where=norms > 0)


def easy_positive_mask(batch):
    """(M, M) mask: ``[i, k]`` true iff ``k`` is an easy positive of anchor ``i``."""
    pos = batch.positive_mask()
    z = batch.features
    sim = z @ z.T
    sim_bar = np.sum(z * _positive_means(batch, pos), axis=1)
    easy = pos & (sim > sim_bar[:, None] + _EASY_TOL)
    easy[pos.sum(axis=1) < 2] = False
    return easy


def detect_easy_positives(batch, i):
    """Flags aligned with ``batch.positives(i)``."""
    pos = batch.positives(i)
    if pos.size == 0:
        raise ValueError(f"anchor has no positives: {i}")
    return easy_positive_mask(batch)[i, pos]


def positive_pair_count(m, n):
    """Ordered positive pairs of a class with ``n`` in-batch samples and ``m`` views each."""
    if m < 1 or n < 0:
        raise ValueError("need m >= 1 and n >= 0")
    mn = m * n
    return mn * (mn - 1)


def conflict_increment_estimate(m, n, beta):
    """Expected extra conflicting pairs from going from two views to ``m``."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if m < 2:
        raise ValueError("m must be at least 2")
    return (positive_pair_count(m, n) - positive_pair_count(2, n)) * beta


@dataclass
class ConflictReport:
    """Per-class tallies of positive-pair gradient signs, accumulated over batches."""

    class_counts: np.ndarray
    pos_pairs: np.ndarray = None
    repulsive: np.ndarray = None
    easy: np.ndarray = None
    in_batch: np.ndarray = None
    n_batches: int = 0
    views: int | None = None
    epoch: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.class_counts = np.asarray(self.class_counts)
        c = self.class_counts.size
        for name in ("pos_pairs", "repulsive", "easy", "in_batch"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(c, dtype=np.int64))

    @property
    def conflict_ratio(self):
        return np.divide(self.repulsive, self.pos_pairs, out=np.zeros(self.pos_pairs.size), where=self.pos_pairs > 0)

    @property
    def beta(self):
        return np.divide(self.easy, self.pos_pairs, out=np.zeros(self.pos_pairs.size), where=self.pos_pairs > 0)

    def add(self, batch, coefficients):
        """Tally one batch given its (M, M) per-anchor coefficient table."""
        pos = batch.positive_mask()
        rep = pos & (coefficients > 0)
        easy = easy_positive_mask(batch)
        c = self.class_counts.size
        labels = batch.labels
        self.pos_pairs += np.bincount(labels, weights=pos.sum(axis=1), minlength=c).astype(np.int64)
        self.repulsive += np.bincount(labels, weights=rep.sum(axis=1), minlength=c).astype(np.int64)
        self.easy += np.bincount(labels, weights=easy.sum(axis=1), minlength=c).astype(np.int64)
        samples = ~batch.is_center
        self.in_batch += np.bincount(labels[samples], minlength=c)
        self.n_batches += 1
        return self

    def spearman(self, classes=None):
        """Rank correlation between class train count and conflict ratio."""
        ratio = self.conflict_ratio
        counts = self.class_counts
        if classes is None:
            classes = np.flatnonzero(self.pos_pairs > 0)
        if np.unique(ratio[classes]).size < 2 or np.unique(counts[classes]).size < 2:
            return float("nan")
        return float(stats.spearmanr(counts[classes], ratio[classes]).statistic)

    def rows(self):
        epoch = "" if self.epoch is None else self.epoch
        ratio, beta = self.conflict_ratio, self.beta
        for j in range(self.class_counts.size):
            yield [epoch, j, int(self.class_counts[j]), int(self.pos_pairs[j]),
                   int(self.repulsive[j]), repr(float(ratio[j])), repr(float(beta[j]))]


CONFLICT_COLUMNS = ["epoch", "class_id", "class_count", "pos_pairs", "repulsive", "conflict_ratio", "beta"]


def conflict_ratio_per_class(batches, tau=DEFAULT_TAU, coefficients=None):
    """Aggregate SCL conflict tallies over ``batches`` into one report.

    ``coefficients`` may supply precomputed (M, M) tables, one per batch.
    """
    batches = list(batches)
    if not batches:
        raise ValueError("no batches to diagnose")
    report = ConflictReport(batches[0].class_counts.astype(np.int64))
    for j, batch in enumerate(batches):
        coef = scl_coefficients(batch, tau) if coefficients is None else coefficients[j]
        report.add(batch, coef)
    return report


def write_conflicts_csv(reports, path, header=None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header.rstrip("\n") + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONFLICT_COLUMNS)
        for report in reports:
            w.writerows(report.rows())


def attraction_repulsion_balance(batch, weights=None):
    """Per present class: (positive pairs, negative pairs, ratio[, weighted negative mass]).

    Counts run over sample entries only (centers excluded). With ``weights``
    (one per batch entry, or an (M, M) per-anchor table) the weighted negative mass is added as a fourth
    element. A class with no negatives reports ratio ``inf``.
    """
    pos = batch.positive_mask()
    neg = batch.negative_mask(with_centers=False)
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        w = np.broadcast_to(w, neg.shape)
    out = {}
    for cls in batch.present_classes():
        rows = (batch.labels == cls) & ~batch.is_center
        n_pos = int(pos[rows].sum())
        n_neg = int(neg[rows].sum())
        ratio = n_pos / n_neg if n_neg else float("inf")
        entry = (n_pos, n_neg, ratio)
        if weights is not None:
            entry += (float((neg[rows] * w[rows]).sum()),)
        out[int(cls)] = entry
    return out

"""Forward evaluation of the contrastive and classification objectives.

Two contrastive losses live here:

* ``scl``: the supervised contrastive loss. Each positive ``p`` of anchor
  ``i`` is classified against every other batch entry, so the remaining
  positives sit in the denominator.
* ``acl``: the aligned contrastive loss. Each positive term's denominator
  holds only that positive plus inverse-frequency weighted negatives, and
  the anchor's class center is added as one more positive.

Per-anchor functions (``scl_loss``, ``acl_loss``) take an anchor index and
mirror the definitions term by term. The ``*_batch_loss`` functions are the
vectorized forms used by the trainer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CENTER_VIEW, check_tau, logsumexp

DEFAULT_TAU = 0.1


@dataclass
class ContrastiveBatch:
    """Embeddings of one batch plus the bookkeeping that defines P(i), N(i), A(i).

    ``features`` rows are unit vectors. Entries whose view equals
    ``CENTER_VIEW`` are class centers: they never act as anchors, they are
    ignored by SCL, and under ACL they are the anchor's extra positive (own
    class) or weighted negatives (other classes).
    """

    features: np.ndarray
    labels: np.ndarray
    views: np.ndarray
    class_counts: np.ndarray
    base_index: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.views = np.asarray(self.views, dtype=np.int64)
        self.class_counts = np.asarray(self.class_counts, dtype=np.float64)
        m = self.features.shape[0]
        if self.labels.shape != (m,) or self.views.shape != (m,):
            raise ValueError("labels and views must have one entry per feature row")
        if np.any(self.class_counts <= 0):
            raise ValueError("class counts must be strictly positive")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_counts.size):
            raise ValueError("label outside the range covered by class_counts")
        centers = self.labels[self.views == CENTER_VIEW]
        if np.unique(centers).size != centers.size:
            raise ValueError("at most one center per class")

    @classmethod
    def from_embeddings(cls, embeddings, class_counts):
        return cls(
            np.stack([e.values for e in embeddings]),
            [e.label for e in embeddings],
            [e.view for e in embeddings],
            class_counts,
        )

    def __len__(self):
        return self.features.shape[0]

    @property
    def is_center(self):
        return self.views == CENTER_VIEW

    @property
    def anchors(self):
        """Indices of sample (non-center) entries."""
        return np.flatnonzero(~self.is_center)

    @property
    def has_centers(self):
        return bool(self.is_center.any())

    # Masks are (M, M); row i describes the sets of anchor i. Center rows are all False.
    def _masks(self):
        if "masks" not in self._cache:
            sample = ~self.is_center
            same = self.labels[:, None] == self.labels[None, :]
            not_self = ~np.eye(len(self), dtype=bool)
            rows = sample[:, None]
            pos = same & not_self & sample[None, :] & rows
            center = same & self.is_center[None, :] & rows
            neg = ~same & rows
            neg_samples = neg & sample[None, :]
            self._cache["masks"] = pos, center, neg, neg_samples
        return self._cache["masks"]

    def positive_mask(self):
        return self._masks()[0]

    def center_mask(self):
        return self._masks()[1]

    def negative_mask(self, with_centers=True):
        pos, center, neg, neg_samples = self._masks()
        return neg if with_centers else neg_samples

    def positives(self, i):
        return np.flatnonzero(self.positive_mask()[i])

    def negatives(self, i, with_centers=True):
        return np.flatnonzero(self.negative_mask(with_centers)[i])

    def center_index(self, i):
        """Index of anchor ``i``'s own class center, or None."""
        idx = np.flatnonzero(self.center_mask()[i])
        return int(idx[0]) if idx.size else None

    def candidates(self, i, kind="scl"):
        """A(i): every other sample for SCL; positives, own center and negatives for ACL."""
        if kind == "scl":
            sample = ~self.is_center
            sample[i] = False
            return np.flatnonzero(sample)
        pos, center, neg, _ = self._masks()
        return np.flatnonzero(pos[i] | center[i] | neg[i])

    def present_classes(self):
        return np.unique(self.labels[~self.is_center])


def _check_anchor(batch, i):
    if batch.is_center[i]:
        raise ValueError(f"entry {i} is a class center and cannot be an anchor")


def pairwise_logits(batch, i, tau):
    """Logits ``z_i . z_k / tau`` of anchor ``i`` against every batch entry."""
    return batch.features @ batch.features[i] / check_tau(tau)


def scl_pairwise_loss(batch, i, p, tau=DEFAULT_TAU):
    _check_anchor(batch, i)
    cand = batch.candidates(i, "scl")
    if p not in set(batch.positives(i).tolist()):
        raise ValueError(f"not a positive: {p} for anchor {i}")
    if cand.size < 2:
        raise ValueError("no contrast: fewer than two candidates")
    return _scl_term(pairwise_logits(batch, i, tau), cand, p)


def _scl_term(f, cand, p):
    # -log q_p written as log(1 + sum_{a != p} e^(f_a - f_p)); stays accurate as q_p -> 1
    others = cand[cand != p]
    return float(np.logaddexp(0.0, logsumexp(f[others] - f[p])))


def scl_loss(batch, i, tau=DEFAULT_TAU):
    """Mean of the pairwise SCL terms of anchor ``i`` over its positives."""
    _check_anchor(batch, i)
    pos = batch.positives(i)
    if pos.size == 0:
        raise ValueError(f"anchor has no positives: {i}")
    cand = batch.candidates(i, "scl")
    if cand.size < 2:
        raise ValueError("no contrast: fewer than two candidates")
    f = pairwise_logits(batch, i, tau)
    return float(np.mean([_scl_term(f, cand, p) for p in pos]))


def negative_weights(class_counts, negative_labels):
    """Inverse-frequency weights ``1 / N_label``, rescaled to mean 1 over the given negatives."""
    counts = np.asarray(class_counts, dtype=np.float64)
    labels = np.asarray(negative_labels, dtype=np.int64)
    if labels.size == 0:
        return np.zeros(0)
    if labels.min() < 0 or labels.max() >= counts.size:
        raise ValueError(f"unknown label in {sorted(set(labels.tolist()))}")
    raw = 1.0 / counts[labels]
    return raw / raw.mean()


def batch_negative_weights(batch, reweight=True, scope="anchor"):
    """Inverse-frequency negative weights for a whole batch.

    ``scope="anchor"`` returns an (M, M) table whose row i is normalized to
    mean 1 over the negatives of anchor i (zero elsewhere). ``scope="batch"``
    returns one weight per entry, normalized over every entry of the batch.
    With ``reweight=False`` all weights are 1.
    """
    if scope not in ("anchor", "batch"):
        raise ValueError(f"unknown weight scope {scope!r}")
    if scope == "batch":
        return np.ones(len(batch)) if not reweight else negative_weights(batch.class_counts, batch.labels)
    neg = batch.negative_mask()
    if not reweight:
        return neg.astype(np.float64)
    raw = 1.0 / np.asarray(batch.class_counts, dtype=np.float64)[batch.labels]
    table = np.where(neg, raw[None, :], 0.0)
    mean = table.sum(axis=1, keepdims=True) / np.maximum(neg.sum(axis=1, keepdims=True), 1)
    return np.divide(table, mean, out=np.zeros_like(table), where=mean > 0)


def _log_weights(weights, neg):
    """Log weights broadcastable against an (M, M) logit table; 0 off the negatives."""
    w = np.asarray(weights, dtype=np.float64)
    w = w[None, :] if w.ndim == 1 else w
    return np.log(np.where(neg, w, 1.0))


def _anchor_row(weights, i):
    w = np.asarray(weights, dtype=np.float64)
    return w[i] if w.ndim == 2 else w


def acl_loss(batch, i, weights, tau=DEFAULT_TAU):
    """Aligned contrastive loss of anchor ``i``.

    ``weights`` is indexed by batch entry (or an (M, M) table, row ``i`` used);
    only the negative entries are read.
    """
    _check_anchor(batch, i)
    c = batch.center_index(i)
    if c is None:
        raise ValueError(f"missing class center for anchor {i}")
    neg = batch.negatives(i)
    if neg.size == 0:
        raise ValueError(f"anchor {i} has no negatives")
    weights = _anchor_row(weights, i)
    f = pairwise_logits(batch, i, tau)
    log_neg = logsumexp(f[neg] + np.log(weights[neg]))
    terms = np.append(batch.positives(i), c)
    # -log(e^f_p / (e^f_p + S)) = log(1 + S e^-f_p)
    return float(np.mean(np.logaddexp(0.0, log_neg - f[terms])))


def scl_anchor_losses(batch, tau=DEFAULT_TAU):
    """Vectorized per-anchor SCL; NaN for centers and anchors without positives."""
    f = batch.features @ batch.features.T / check_tau(tau)
    pos = batch.positive_mask()
    cand = pos | batch.negative_mask(with_centers=False)
    n_pos = pos.sum(axis=1)
    log_norm = logsumexp(f, axis=1, where=cand)
    pos_sum = np.where(pos, f, 0.0).sum(axis=1)
    out = np.full(len(batch), np.nan)
    ok = n_pos > 0
    out[ok] = log_norm[ok] - pos_sum[ok] / n_pos[ok]
    return out


def scl_batch_loss(batch, tau=DEFAULT_TAU):
    """Mean SCL over anchors that have at least one positive (others are skipped)."""
    losses = scl_anchor_losses(batch, tau)
    valid = losses[~np.isnan(losses)]
    if valid.size == 0:
        raise ValueError("no anchor in the batch has a positive")
    return float(valid.mean())


def acl_anchor_losses(batch, weights, tau=DEFAULT_TAU):
    """Vectorized per-anchor ACL; NaN for center rows."""
    f = batch.features @ batch.features.T / check_tau(tau)
    pos = batch.positive_mask() | batch.center_mask()
    neg = batch.negative_mask()
    anchors = batch.anchors
    if not batch.center_mask()[anchors].any(axis=1).all():
        raise ValueError("missing class center for some anchor")
    if not neg[anchors].any(axis=1).all():
        raise ValueError("some anchor has no negatives")
    log_w = _log_weights(weights, neg)
    log_neg = logsumexp(f + log_w, axis=1, where=neg)
    terms = np.where(pos, np.logaddexp(0.0, log_neg[:, None] - f), 0.0)
    out = np.full(len(batch), np.nan)
    out[anchors] = terms[anchors].sum(axis=1) / pos[anchors].sum(axis=1)
    return out


def acl_batch_loss(batch, weights, tau=DEFAULT_TAU):
    losses = acl_anchor_losses(batch, weights, tau)
    return float(np.nanmean(losses))


def balanced_softmax_loss(class_logits, priors, label):
    """Cross-entropy on logits shifted by ``log prior``."""
    f = np.asarray(class_logits, dtype=np.float64)
    priors = np.asarray(priors, dtype=np.float64)
    if np.any(priors <= 0):
        raise ValueError("priors must be strictly positive")
    if abs(priors.sum() - 1.0) > 1e-9:
        raise ValueError("priors must sum to 1")
    if not 0 <= label < f.size:
        raise ValueError(f"invalid label {label}")
    adjusted = f + np.log(priors)
    return float(logsumexp(adjusted) - adjusted[label])


def balanced_softmax_batch(class_logits, labels, log_priors):
    """Mean balanced-softmax loss over rows and its gradient wrt ``class_logits``."""
    f = np.asarray(class_logits, dtype=np.float64) + log_priors[None, :]
    labels = np.asarray(labels)
    n = f.shape[0]
    log_z = logsumexp(f, axis=1)
    loss = float(np.mean(log_z - f[np.arange(n), labels]))
    grad = np.exp(f - log_z[:, None])
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass(frozen=True)
class LossBreakdown:
    acl: float
    bs: float
    total: float
    alpha: float


def combined_loss(acl, bs, alpha):
    """``alpha * contrastive + balanced softmax``."""
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    return LossBreakdown(float(acl), float(bs), alpha * acl + bs, float(alpha))

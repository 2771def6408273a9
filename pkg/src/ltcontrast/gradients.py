"""Closed-form gradients of SCL and ACL, plus a finite-difference oracle.

All gradients are ambient derivatives: embeddings are treated as free
vectors, with no projection onto the unit sphere. Since every logit is
``z_i . z_k / tau``, the gradient of a per-anchor loss with respect to a
candidate ``z_k`` is a scalar coefficient times ``z_i``; ``GradientField``
stores those coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import candidate_softmax, check_tau, logsumexp, normalize
from .losses import DEFAULT_TAU, _anchor_row, _check_anchor, _log_weights, pairwise_logits


@dataclass(frozen=True)
class GradientField:
    """Gradient of one anchor's loss over a set of candidate entries.

    ``vectors[j] == coefficients[j] * anchor`` is the gradient with respect
    to entry ``indices[j]``.
    """

    indices: np.ndarray
    coefficients: np.ndarray
    anchor: np.ndarray

    @property
    def vectors(self):
        return self.coefficients[:, None] * self.anchor[None, :]

    def coefficient(self, k):
        j = np.flatnonzero(self.indices == k)
        if j.size == 0:
            raise KeyError(k)
        return float(self.coefficients[j[0]])

    def as_dict(self):
        return dict(zip(self.indices.tolist(), self.coefficients.tolist()))


def _scl_setup(batch, i, tau):
    _check_anchor(batch, i)
    cand = batch.candidates(i, "scl")
    if cand.size < 2:
        raise ValueError("no contrast: fewer than two candidates")
    q = candidate_softmax(pairwise_logits(batch, i, tau)[cand])
    return cand, q


def scl_pairwise_grad(batch, i, p, tau=DEFAULT_TAU):
    """Gradient of the single term L(i, p): attraction on ``p``, repulsion on everything else."""
    tau = check_tau(tau)
    if p not in set(batch.positives(i).tolist()):
        raise ValueError(f"not a positive: {p} for anchor {i}")
    cand, q = _scl_setup(batch, i, tau)
    coef = q / tau
    coef[cand == p] = -(1.0 - q[cand == p]) / tau
    return GradientField(cand, coef, batch.features[i].copy())


def scl_instance_grad(batch, i, tau=DEFAULT_TAU):
    """Gradient of the per-anchor SCL: ``-(1/|P| - q_k) / tau`` on positives, ``q_k / tau`` otherwise."""
    tau = check_tau(tau)
    pos = batch.positives(i)
    if pos.size == 0:
        raise ValueError(f"anchor has no positives: {i}")
    cand, q = _scl_setup(batch, i, tau)
    coef = q / tau
    is_pos = np.isin(cand, pos)
    coef[is_pos] -= 1.0 / (pos.size * tau)
    return GradientField(cand, coef, batch.features[i].copy())


def nabla(p_count, q):
    """Sign term of a positive's SCL gradient; > 0 attracts, < 0 repels."""
    if p_count < 1:
        raise ValueError("p_count must be at least 1")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    return 1.0 / p_count - q


def nabla_without_negatives(batch, i, k, tau=DEFAULT_TAU):
    """Converged-regime sign term with the negative logits dropped from the denominator."""
    pos = batch.positives(i)
    f = pairwise_logits(batch, i, tau)
    return 1.0 / pos.size - float(np.exp(f[k] - logsumexp(f[pos])))


def nabla_center_approx(batch, i, k, tau=DEFAULT_TAU):
    """Converged-regime sign term with the positive sum replaced by ``|P|`` copies of their mean."""
    pos = batch.positives(i)
    center = normalize(batch.features[pos].mean(axis=0))
    f = pairwise_logits(batch, i, tau)
    f_bar = float(center @ batch.features[i]) / tau
    return 1.0 / pos.size - float(np.exp(f[k] - f_bar)) / pos.size


def _acl_setup(batch, i, weights, tau):
    _check_anchor(batch, i)
    c = batch.center_index(i)
    if c is None:
        raise ValueError(f"missing class center for anchor {i}")
    neg = batch.negatives(i)
    if neg.size == 0:
        raise ValueError(f"anchor {i} has no negatives")
    weights = _anchor_row(weights, i)
    f = pairwise_logits(batch, i, tau)
    terms = np.append(batch.positives(i), c)
    log_neg = logsumexp(f[neg] + np.log(weights[neg]))
    return f, terms, neg, weights, log_neg


def aligned_probability(batch, i, k, weights, tau=DEFAULT_TAU):
    """q of positive ``k`` against only the weighted negatives of anchor ``i``."""
    f, terms, neg, weights, log_neg = _acl_setup(batch, i, weights, tau)
    if k not in set(terms.tolist()):
        raise ValueError(f"not a positive: {k} for anchor {i}")
    return float(1.0 / (1.0 + np.exp(log_neg - f[k])))


def acl_positive_grad(batch, i, weights, tau=DEFAULT_TAU):
    tau = check_tau(tau)
    f, terms, neg, weights, log_neg = _acl_setup(batch, i, weights, tau)
    q = 1.0 / (1.0 + np.exp(log_neg - f[terms]))
    coef = -(1.0 - q) / (tau * terms.size)
    return GradientField(terms, coef, batch.features[i].copy())


def acl_negative_grad(batch, i, weights, tau=DEFAULT_TAU):
    tau = check_tau(tau)
    f, terms, neg, weights, log_neg = _acl_setup(batch, i, weights, tau)
    # w_n e^f_n / (e^f_p + S) = (1 - q_p) * w_n e^f_n / S
    share = np.exp(f[neg] + np.log(weights[neg]) - log_neg)
    q = 1.0 / (1.0 + np.exp(log_neg - f[terms]))
    coef = share * np.sum(1.0 - q) / (tau * terms.size)
    return GradientField(neg, coef, batch.features[i].copy())


def anchor_grad(loss_kind, batch, i, weights=None, tau=DEFAULT_TAU, p=None):
    """Gradient of the per-anchor loss with respect to the anchor ``z_i``.

    ``loss_kind`` is ``"scl"``, ``"acl"`` or ``"scl_pairwise"`` (needs ``p``).
    """
    if loss_kind == "scl_pairwise":
        field = scl_pairwise_grad(batch, i, p, tau)
    elif loss_kind == "scl":
        field = scl_instance_grad(batch, i, tau)
    elif loss_kind == "acl":
        pos = acl_positive_grad(batch, i, weights, tau)
        negs = acl_negative_grad(batch, i, weights, tau)
        field = GradientField(
            np.concatenate([pos.indices, negs.indices]),
            np.concatenate([pos.coefficients, negs.coefficients]),
            pos.anchor,
        )
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    # d f_ik / d z_i = z_k / tau, and each coefficient already carries the 1/tau.
    return field.coefficients @ batch.features[field.indices]


def finite_difference_oracle(fn, point, step=1e-6):
    """Central-difference gradient of scalar ``fn`` at ``point`` (any array shape)."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.array(point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x, flat_g = x.reshape(-1), grad.reshape(-1)
    for j in range(flat_x.size):
        orig = flat_x[j]
        flat_x[j] = orig + step
        up = fn(x.copy())
        flat_x[j] = orig - step
        down = fn(x.copy())
        flat_x[j] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError(f"non-finite evaluation at coordinate {j}")
        flat_g[j] = (up - down) / (2.0 * step)
    return grad


def scl_terms(batch, tau=DEFAULT_TAU):
    """Per-anchor SCL losses (NaN where skipped) and the (M, M) coefficient table, in one pass.

    Entry ``[i, k]`` of the table is ``dL_i / df_ik / tau``; rows of centers
    and of anchors without positives are zero.
    """
    tau = check_tau(tau)
    f = batch.features @ batch.features.T / tau
    pos = batch.positive_mask()
    cand = pos | batch.negative_mask(with_centers=False)
    n_pos = pos.sum(axis=1)
    valid = n_pos > 0
    log_norm = logsumexp(f, axis=1, where=cand)
    q = np.where(cand, np.exp(f - log_norm[:, None]), 0.0)
    inv = 1.0 / np.maximum(n_pos, 1)
    losses = np.where(valid, log_norm - np.where(pos, f, 0.0).sum(axis=1) * inv, np.nan)
    coef = np.where(valid[:, None], q - pos * inv[:, None], 0.0) / tau
    return losses, coef


def scl_coefficients(batch, tau=DEFAULT_TAU):
    return scl_terms(batch, tau)[1]


def acl_terms(batch, weights, tau=DEFAULT_TAU):
    """Per-anchor ACL losses (NaN on center rows) and the (M, M) coefficient table.

    Positive coefficients are <= 0 and negative coefficients >= 0.
    """
    tau = check_tau(tau)
    f = batch.features @ batch.features.T / tau
    pos = batch.positive_mask() | batch.center_mask()
    neg = batch.negative_mask()
    anchors = ~batch.is_center
    if not pos[anchors].any(axis=1).all() or not batch.center_mask()[anchors].any(axis=1).all():
        raise ValueError("missing class center for some anchor")
    if not neg[anchors].any(axis=1).all():
        raise ValueError("some anchor has no negatives")
    log_w = _log_weights(weights, neg)
    log_neg = logsumexp(f + log_w, axis=1, where=neg)
    gap = log_neg[:, None] - f
    n_terms = np.maximum(pos.sum(axis=1), 1)
    losses = np.where(anchors, np.where(pos, np.logaddexp(0.0, gap), 0.0).sum(axis=1) / n_terms, np.nan)
    # 1 - q = sigmoid(gap)
    miss = np.where(pos, 0.5 * (1.0 + np.tanh(0.5 * gap)), 0.0) / n_terms[:, None]
    share = np.where(neg, np.exp(f + log_w - log_neg[:, None]), 0.0)
    coef = -miss + share * miss.sum(axis=1, keepdims=True)
    coef[batch.is_center] = 0.0
    return losses, coef / tau


def acl_coefficients(batch, weights, tau=DEFAULT_TAU):
    return acl_terms(batch, weights, tau)[1]


def _batch_grad(batch, coef, n_anchors):
    z = batch.features
    return (coef @ z + coef.T @ z) / n_anchors


def scl_batch_grad(batch, tau=DEFAULT_TAU):
    """Mean SCL over anchors with positives, and its gradient for every entry."""
    losses, coef = scl_terms(batch, tau)
    valid = ~np.isnan(losses)
    if not valid.any():
        raise ValueError("no anchor in the batch has a positive")
    return float(losses[valid].mean()), _batch_grad(batch, coef, valid.sum())


def acl_batch_grad(batch, weights, tau=DEFAULT_TAU):
    """Mean ACL over sample anchors, and its gradient for every entry (centers included)."""
    losses, coef = acl_terms(batch, weights, tau)
    return float(np.nanmean(losses)), _batch_grad(batch, coef, batch.anchors.size)

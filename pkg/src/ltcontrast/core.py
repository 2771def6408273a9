"""Vector primitives shared by the loss and gradient code.

Every embedding that enters a loss is unit-normalized, so inner products
are cosine similarities and logits are bounded by ``1 / tau``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CENTER_VIEW = -1  # view index reserved for class-center entries


class DegenerateEmbedding(ValueError):
    pass


def normalize(v, axis=-1):
    """Scale ``v`` to unit Euclidean norm along ``axis``.

    Raises DegenerateEmbedding if any slice along ``axis`` is all zeros.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(norm == 0.0):
        raise DegenerateEmbedding("degenerate embedding")
    return v / norm


@dataclass(frozen=True)
class Embedding:
    values: np.ndarray
    label: int
    view: int = 0

    @classmethod
    def from_raw(cls, v, label, view=0):
        return cls(normalize(v), int(label), int(view))

    @property
    def dim(self):
        return self.values.shape[-1]

    @property
    def is_center(self):
        return self.view == CENTER_VIEW


def check_tau(tau):
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return float(tau)


def logit(z_i, z_a, tau):
    """Temperature-scaled similarity ``z_i . z_a / tau``."""
    z_i = np.asarray(getattr(z_i, "values", z_i), dtype=np.float64)
    z_a = np.asarray(getattr(z_a, "values", z_a), dtype=np.float64)
    if z_i.shape != z_a.shape:
        raise ValueError(f"dimension mismatch: {z_i.shape} vs {z_a.shape}")
    return float(np.dot(z_i, z_a)) / check_tau(tau)


def candidate_softmax(logits):
    """Softmax over a candidate set, max-shifted so large logits cannot overflow."""
    f = np.asarray(logits, dtype=np.float64)
    if f.size == 0:
        raise ValueError("softmax over an empty candidate set")
    e = np.exp(f - f.max())
    return e / e.sum()


def logsumexp(f, axis=None, where=None):
    """Stable log-sum-exp; ``where`` masks entries out of the sum."""
    f = np.asarray(f, dtype=np.float64)
    if where is None:
        m = np.max(f, axis=axis, keepdims=True)
        out = m + np.log(np.sum(np.exp(f - m), axis=axis, keepdims=True))
    else:
        masked = np.where(where, f, -np.inf)
        m = np.max(masked, axis=axis, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        s = np.sum(np.where(where, np.exp(masked - m), 0.0), axis=axis, keepdims=True)
        with np.errstate(divide="ignore"):
            out = m + np.log(s)
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)

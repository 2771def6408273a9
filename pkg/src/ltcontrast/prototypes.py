"""Class centers maintained by exponential moving average.

Centers are statistics, not parameters: they are refreshed from batch
means after each optimizer step and never receive loss gradients.
"""
from __future__ import annotations

import logging

import numpy as np

from .core import CENTER_VIEW, normalize

log = logging.getLogger(__name__)

DEFAULT_MOMENTUM = 0.9


class ClassCenters:
    def __init__(self, n_classes, dim, momentum=DEFAULT_MOMENTUM):
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
        self.momentum = float(momentum)
        self.vectors = np.zeros((n_classes, dim))
        self.initialized = np.zeros(n_classes, dtype=bool)

    @property
    def n_classes(self):
        return self.vectors.shape[0]

    def init_center(self, cls, batch_class_mean):
        if self.initialized[cls]:
            raise ValueError(f"center of class {cls} already initialized")
        self.vectors[cls] = normalize(batch_class_mean)
        self.initialized[cls] = True
        return self

    def ema_update(self, cls, batch_class_mean, momentum=None):
        """Blend the normalized batch mean into the stored center, then renormalize.

        If the blend cancels exactly, the old center is kept.
        """
        mu = self.momentum if momentum is None else float(momentum)
        if not 0.0 <= mu < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {mu}")
        if not self.initialized[cls]:
            raise ValueError(f"center of class {cls} is not initialized")
        raw = mu * self.vectors[cls] + (1.0 - mu) * normalize(batch_class_mean)
        if not np.any(raw):
            log.warning("EMA update of class %d cancelled exactly; keeping old center", cls)
            return self
        self.vectors[cls] = normalize(raw)
        return self

    def observe(self, labels, embeddings):
        """Initialize unseen classes or EMA-update seen ones from per-class batch means.

        Returns the classes that were initialized by this call.
        """
        labels = np.asarray(labels)
        fresh = []
        for cls in np.unique(labels):
            mean = embeddings[labels == cls].mean(axis=0)
            if not np.any(mean):
                continue
            if self.initialized[cls]:
                self.ema_update(cls, mean)
            else:
                self.init_center(cls, mean)
                fresh.append(int(cls))
        return fresh

    def centers_for_batch(self, present_classes):
        """Center rows, labels and views (all ``CENTER_VIEW``) for the requested classes."""
        classes = np.asarray(present_classes, dtype=np.int64)
        missing = classes[~self.initialized[classes]]
        if missing.size:
            raise ValueError(f"uninitialized class center requested: {missing.tolist()}")
        return self.vectors[classes].copy(), classes.copy(), np.full(classes.size, CENTER_VIEW)

    def copy(self):
        out = ClassCenters(self.n_classes, self.vectors.shape[1], self.momentum)
        out.vectors = self.vectors.copy()
        out.initialized = self.initialized.copy()
        return out

"""Desk-scale training: MLP encoder, cosine classifier, SGD with momentum.

The objective is ``alpha * contrastive + balanced_softmax``. Balanced
softmax sees every view of every base sample; the contrastive term sees
either all views (``*_uniform``) or the distribution-aware subset (the
first ``assign_views(...)`` views of each sample). Contrastive gradients
reach the encoder only; the classifier head is trained by balanced softmax
alone. Class centers are EMA statistics updated after each step.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import CENTER_VIEW
from .data import ViewPolicy, assign_views, expand_views, shot_groups
from .diagnostics import ConflictReport
from .gradients import acl_terms, scl_terms
from .losses import (
    ContrastiveBatch,
    LossBreakdown,
    balanced_softmax_batch,
    batch_negative_weights,
    combined_loss,
)
from .prototypes import ClassCenters

log = logging.getLogger(__name__)

LOSS_KINDS = ("bs_only", "bs+scl_uniform", "bs+scl_aware", "bs+acl_noweight", "bs+acl")
GROUP_NAMES = ("Many", "Medium", "Few")


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, batch=None):
        super().__init__(message)
        self.batch = batch


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    hidden: tuple = (64,)
    embed_dim: int = 32

    def __post_init__(self):
        if self.embed_dim < 2:
            raise ValueError("embedding dimension must be at least 2")
        if min((self.input_dim, *self.hidden)) < 1:
            raise ValueError("layer widths must be positive")

    @property
    def widths(self):
        return (self.input_dim, *self.hidden, self.embed_dim)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_epochs: tuple = ()
    lr_decay: float = 0.1
    alpha: float = 0.5
    tau: float = 0.1
    classifier_tau: float = 0.05
    center_momentum: float = 0.9
    weight_scope: str = "anchor"
    views: int = 4
    view_policy: ViewPolicy = field(default_factory=ViewPolicy)
    loss_kind: str = "bs+acl"
    hidden: tuple = (64,)
    embed_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not self.lr >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss_kind {self.loss_kind!r}; valid: {', '.join(LOSS_KINDS)}")
        if self.weight_scope not in ("anchor", "batch"):
            raise ValueError("weight_scope must be 'anchor' or 'batch'")
        if not 1 <= self.views <= len(self.view_policy.noise_scales):
            raise ValueError("views must be between 1 and the number of noise scales")

    @property
    def contrastive(self):
        return None if self.loss_kind == "bs_only" else self.loss_kind.split("+")[1]

    def hash(self):
        blob = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def contrastive_views(config, class_counts):
    """Per-class number of views that enter the contrastive term."""
    if config.contrastive in (None, "scl_uniform"):
        return np.full(len(class_counts), config.views)
    return np.minimum(assign_views(class_counts, config.view_policy), config.views)


class Model:
    """MLP encoder (ReLU hidden layers, linear output, unit normalization) + cosine head."""

    def __init__(self, encoder_config, n_classes, rng, classifier_tau=0.05, center_momentum=0.9):
        self.encoder_config = encoder_config
        self.classifier_tau = classifier_tau
        self.params = {}
        widths = encoder_config.widths
        for j, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            self.params[f"W{j}"] = rng.normal(scale=np.sqrt(2.0 / a), size=(a, b))
            self.params[f"b{j}"] = np.zeros(b)
        self.params["head"] = rng.normal(size=(n_classes, encoder_config.embed_dim))
        self.n_layers = len(widths) - 1
        self.centers = ClassCenters(n_classes, encoder_config.embed_dim, center_momentum)
        self.velocity = {k: np.zeros_like(v) for k, v in self.params.items()}

    @property
    def n_classes(self):
        return self.params["head"].shape[0]

    @property
    def scale(self):
        return 1.0 / self.classifier_tau

    def copy(self):
        out = object.__new__(Model)
        out.__dict__.update(self.__dict__)
        out.params = {k: v.copy() for k, v in self.params.items()}
        out.velocity = {k: v.copy() for k, v in self.velocity.items()}
        out.centers = self.centers.copy()
        return out

    def _head_unit(self):
        w = self.params["head"]
        norms = np.linalg.norm(w, axis=1, keepdims=True)
        return np.divide(w, norms, out=np.zeros_like(w), where=norms > 0), norms

    def forward(self, x, keep_cache=False):
        """Return unit embeddings and cosine logits (and a backward cache if asked)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.encoder_config.input_dim:
            raise ValueError(f"expected inputs of shape (n, {self.encoder_config.input_dim}), got {x.shape}")
        acts = [x]
        h = x
        for j in range(self.n_layers):
            h = h @ self.params[f"W{j}"] + self.params[f"b{j}"]
            if j < self.n_layers - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        norm = np.linalg.norm(h, axis=1, keepdims=True)
        norm = np.maximum(norm, 1e-12)
        z = h / norm
        w_unit, w_norm = self._head_unit()
        logits = self.scale * z @ w_unit.T
        if keep_cache:
            return z, logits, (acts, norm, w_unit, w_norm)
        return z, logits

    def embed(self, x):
        return self.forward(x)[0]

    def predict(self, x):
        return np.argmax(self.forward(x)[1], axis=1)

    def backward(self, cache, dz, dlogits, z):
        """Parameter gradients from upstream gradients on embeddings and logits."""
        acts, norm, w_unit, w_norm = cache
        grads = {}
        dz = dz + self.scale * dlogits @ w_unit
        dw_unit = self.scale * dlogits.T @ z
        radial = np.sum(w_unit * dw_unit, axis=1, keepdims=True)
        grads["head"] = np.divide(dw_unit - w_unit * radial, w_norm, out=np.zeros_like(dw_unit), where=w_norm > 0)
        # chain rule through z = h / |h|
        dh = (dz - z * np.sum(z * dz, axis=1, keepdims=True)) / norm
        for j in reversed(range(self.n_layers)):
            if j < self.n_layers - 1:
                dh = dh * (acts[j + 1] > 0)
            grads[f"W{j}"] = acts[j].T @ dh
            grads[f"b{j}"] = dh.sum(axis=0)
            if j:
                dh = dh @ self.params[f"W{j}"].T
        return grads


def build_model(config, input_dim, n_classes, rng):
    enc = EncoderConfig(input_dim, tuple(config.hidden), config.embed_dim)
    return Model(enc, n_classes, rng, config.classifier_tau, config.center_momentum)


def _contrastive_batch(model, z, labels, views, class_counts, with_centers):
    feats, labs, vws = z, labels, views
    if with_centers:
        c_feats, c_labels, c_views = model.centers.centers_for_batch(np.unique(labels))
        feats = np.vstack([z, c_feats])
        labs = np.concatenate([labels, c_labels])
        vws = np.concatenate([views, c_views])
    return ContrastiveBatch(feats, labs, vws, class_counts)


def objective(model, view_batch, config, class_counts, with_grads=True):
    """Combined loss on one view batch, with parameter gradients.

    Centers of the classes present must already be initialized for the ACL
    kinds; they are read, never written. Returns
    ``(LossBreakdown, grads, info)`` where ``info`` holds the embeddings and
    the contrastive batch and coefficient table (for conflict monitoring).
    """
    z, logits, cache = model.forward(view_batch.inputs, keep_cache=True)
    log_priors = np.log(np.asarray(class_counts, dtype=np.float64) / np.sum(class_counts))
    bs, dlogits = balanced_softmax_batch(logits, view_batch.labels, log_priors)
    dz = np.zeros_like(z)
    con, cbatch, coef = 0.0, None, None
    kind = config.contrastive
    if kind is not None:
        keep = view_batch.views < contrastive_views(config, class_counts)[view_batch.labels]
        labels = view_batch.labels[keep]
        if np.unique(labels).size < 2:
            log.warning("single-class batch; contrastive term skipped")
        else:
            is_acl = kind.startswith("acl")
            cbatch = _contrastive_batch(model, z[keep], labels, view_batch.views[keep], class_counts, is_acl)
            if is_acl:
                w = batch_negative_weights(cbatch, reweight=(kind == "acl"), scope=config.weight_scope)
                losses, coef = acl_terms(cbatch, w, config.tau)
                n_anchor = cbatch.anchors.size
            else:
                losses, coef = scl_terms(cbatch, config.tau)
                n_anchor = int(np.sum(~np.isnan(losses)))
            if n_anchor:
                con = float(np.nanmean(losses))
                if with_grads and config.alpha:
                    zc = cbatch.features
                    g = (coef @ zc + coef.T @ zc) / n_anchor
                    # center rows are stop-gradient
                    dz[keep] = config.alpha * g[: int(keep.sum())]
    breakdown = combined_loss(con, bs, config.alpha)
    if not np.isfinite(breakdown.total):
        raise TrainingDiverged(f"non-finite loss {breakdown}", batch=view_batch)
    grads = model.backward(cache, dz, dlogits, z) if with_grads else None
    return breakdown, grads, {"z": z, "batch": cbatch, "coefficients": coef}


def backward_and_step(model, view_batch, config, class_counts, lr=None):
    """One SGD step on the combined objective; EMA-updates centers afterwards.

    Classes seen for the first time get their center initialized from this
    batch before the loss is evaluated. Returns ``(LossBreakdown, info)``.
    """
    lr = config.lr if lr is None else lr
    fresh = []
    if config.contrastive and config.contrastive.startswith("acl"):
        present = np.unique(view_batch.labels)
        missing = present[~model.centers.initialized[present]]
        if missing.size:
            z = model.embed(view_batch.inputs)
            for cls in missing:
                model.centers.init_center(cls, z[view_batch.labels == cls].mean(axis=0))
                fresh.append(int(cls))
    breakdown, grads, info = objective(model, view_batch, config, class_counts)
    for name, g in grads.items():
        p = model.params[name]
        v = model.velocity[name]
        v *= config.momentum
        v += g + config.weight_decay * p
        p -= lr * v
    if config.contrastive and config.contrastive.startswith("acl"):
        z, labels = info["z"], view_batch.labels
        for cls in np.unique(labels):
            if int(cls) not in fresh:
                model.centers.ema_update(cls, z[labels == cls].mean(axis=0))
    return breakdown, info


def per_class_accuracy(model, x, y, n_classes):
    pred = model.predict(x)
    hits = np.bincount(y, weights=(pred == y).astype(np.float64), minlength=n_classes)
    totals = np.bincount(y, minlength=n_classes)
    return np.divide(hits, totals, out=np.full(n_classes, np.nan), where=totals > 0)


def group_accuracies(per_class, train_counts, many_min=100, few_max=20):
    """Many/Medium/Few means by train-count group (None when a group is empty) and balanced All."""
    per_class = np.asarray(per_class, dtype=np.float64)
    groups = shot_groups(train_counts, many_min, few_max)
    out = {}
    for g, name in enumerate(GROUP_NAMES):
        sel = groups == g
        out[name] = float(per_class[sel].mean()) if sel.any() else None
    out["All"] = float(per_class.mean())
    return out


def evaluate(model, test_x, test_y, train_counts, many_min=100, few_max=20):
    """Per-class test accuracy plus group means; requires a class-balanced test split."""
    totals = np.bincount(test_y, minlength=model.n_classes)
    if np.unique(totals).size != 1:
        raise ValueError("test split must be balanced per class")
    acc = per_class_accuracy(model, test_x, test_y, model.n_classes)
    out = group_accuracies(acc, train_counts, many_min, few_max)
    out["per_class"] = acc
    return out


@dataclass
class EpochRecord:
    epoch: int
    loss_total: float
    loss_contrastive: float
    loss_bs: float
    train_acc: np.ndarray
    test_acc: np.ndarray
    groups: dict
    conflicts: ConflictReport | None = None


@dataclass
class MetricTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, j):
        return self.records[j]

    @property
    def final(self):
        return self.records[-1]


def _epoch_batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = np.sort(perm[start:start + batch_size])
        if idx.size >= 2:
            yield idx


def train(config, dataset, model=None, callback=None):
    """Train from scratch (or continue ``model``); deterministic given ``config.seed``."""
    if dataset.n_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = build_model(config, dataset.train_x.shape[1], dataset.n_classes, rng)
    trace = MetricTrace()
    counts = dataset.class_counts
    policy = config.view_policy
    bs_views = np.full(dataset.n_classes, config.views)
    lr = config.lr
    for epoch in range(config.epochs):
        if epoch in config.lr_decay_epochs:
            lr *= config.lr_decay
        totals = np.zeros(3)
        n_batches = 0
        report = ConflictReport(counts.astype(np.int64), epoch=epoch, views=config.views) if config.contrastive else None
        for idx in _epoch_batches(dataset.train_y.size, config.batch_size, rng):
            vb = expand_views(dataset.train_x[idx], dataset.train_y[idx], idx, bs_views, policy.noise_scales, rng)
            breakdown, info = backward_and_step(model, vb, config, counts, lr)
            totals += (breakdown.total, breakdown.acl, breakdown.bs)
            n_batches += 1
            if report is not None and info["batch"] is not None:
                report.add(info["batch"], info["coefficients"])
        train_acc = per_class_accuracy(model, dataset.train_x, dataset.train_y, dataset.n_classes)
        ev = evaluate(model, dataset.test_x, dataset.test_y, counts, policy.many_min, policy.few_max)
        means = totals / max(n_batches, 1)
        rec = EpochRecord(epoch, *means, train_acc, ev.pop("per_class"), ev, report)
        trace.records.append(rec)
        if callback is not None:
            callback(rec)
    return model, trace


def with_overrides(config, **kw):
    return replace(config, **kw)

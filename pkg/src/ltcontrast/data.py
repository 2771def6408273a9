"""Synthetic long-tailed data, noise-based multi-view augmentation, batch composition."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import normalize
from .losses import ContrastiveBatch


def generate_longtailed_counts(n_classes, n_max, imbalance_factor):
    """Exponentially decaying per-class counts from ``n_max`` down to ``n_max / IF``."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if imbalance_factor < 1:
        raise ValueError("imbalance factor must be >= 1")
    if n_max < imbalance_factor:
        raise ValueError(f"n_max={n_max} < IF={imbalance_factor}: tail class would be empty")
    j = np.arange(n_classes)
    raw = n_max * float(imbalance_factor) ** (-j / (n_classes - 1))
    return np.floor(raw + 0.5).astype(np.int64)


@dataclass(frozen=True)
class LongTailedDatasetSpec:
    n_classes: int = 20
    n_max: int = 500
    imbalance_factor: float = 100.0
    input_dim: int = 16
    class_center_separation: float = 1.0
    within_class_stddev: float = 1.0
    seed: int = 0
    test_per_class: int = 50


@dataclass
class LongTailedDataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    class_counts: np.ndarray
    class_means: np.ndarray
    spec: LongTailedDatasetSpec = field(default_factory=LongTailedDatasetSpec)

    @property
    def n_classes(self):
        return self.class_counts.size

    @property
    def priors(self):
        return self.class_counts / self.class_counts.sum()


def _place_means(rng, n_classes, dim, separation, max_tries=2000):
    means = []
    for cls in range(n_classes):
        for _ in range(max_tries):
            cand = separation * normalize(rng.normal(size=dim))
            if all(np.linalg.norm(cand - m) >= separation for m in means):
                means.append(cand)
                break
        else:
            raise ValueError(
                f"cannot place {n_classes} class means {separation} apart in {dim} dimensions"
            )
    return np.array(means)


def sample_dataset(spec):
    """Gaussian class clusters with long-tailed train counts and a balanced test split."""
    rng = np.random.default_rng(spec.seed)
    counts = generate_longtailed_counts(spec.n_classes, spec.n_max, spec.imbalance_factor)
    means = _place_means(rng, spec.n_classes, spec.input_dim, spec.class_center_separation)

    def draw(per_class):
        y = np.repeat(np.arange(spec.n_classes), per_class)
        x = means[y] + spec.within_class_stddev * rng.normal(size=(y.size, spec.input_dim))
        return x, y

    train_x, train_y = draw(counts)
    test_x, test_y = draw(np.full(spec.n_classes, spec.test_per_class))
    return LongTailedDataset(train_x, train_y, test_x, test_y, counts, means, spec)


def save_dataset(dataset, directory):
    """Write ``train.csv`` / ``test.csv`` (label, features...) and a ``dataset.json`` header."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, x, y in (("train", dataset.train_x, dataset.train_y), ("test", dataset.test_x, dataset.test_y)):
        np.savetxt(d / f"{name}.csv", np.column_stack([y, x]), delimiter=",", fmt=["%d"] + ["%.17g"] * x.shape[1])
    header = {
        "spec": asdict(dataset.spec),
        "class_counts": dataset.class_counts.tolist(),
        "class_means": dataset.class_means.tolist(),
    }
    (d / "dataset.json").write_text(json.dumps(header, indent=2))


def load_dataset(directory):
    d = Path(directory)
    header = json.loads((d / "dataset.json").read_text())

    def read(name):
        arr = np.loadtxt(d / f"{name}.csv", delimiter=",", ndmin=2)
        return arr[:, 1:], arr[:, 0].astype(np.int64)

    train_x, train_y = read("train")
    test_x, test_y = read("test")
    return LongTailedDataset(
        train_x, train_y, test_x, test_y,
        np.asarray(header["class_counts"], dtype=np.int64),
        np.asarray(header["class_means"]),
        LongTailedDatasetSpec(**header["spec"]),
    )


@dataclass(frozen=True)
class ViewPolicy:
    """How many augmented views each shot group gets, and the noise scale of each view index.

    A class with more than ``many_min`` training samples is many-shot, fewer
    than ``few_max`` is few-shot, anything else (boundaries included) medium.
    """

    many_min: int = 100
    few_max: int = 20
    views_per_group: tuple = (2, 3, 4)
    noise_scales: tuple = (0.05, 0.1, 0.15, 0.2)

    def __post_init__(self):
        if self.many_min <= self.few_max:
            raise ValueError("many_min must exceed few_max")
        v = self.views_per_group
        if len(v) != 3 or min(v) < 1 or not v[0] <= v[1] <= v[2]:
            raise ValueError(f"views_per_group must be positive and non-decreasing, got {v}")
        if len(self.noise_scales) < v[2]:
            raise ValueError("need one noise scale per view index")
        if any(s < 0 for s in self.noise_scales) or self.noise_scales[0] != min(self.noise_scales):
            raise ValueError("noise scales must be non-negative with view 0 the smallest")

    @classmethod
    def uniform(cls, k, noise_scales=None, **kw):
        scales = tuple(noise_scales) if noise_scales is not None else ViewPolicy.noise_scales
        return cls(views_per_group=(k, k, k), noise_scales=scales, **kw)


def shot_groups(class_counts, many_min=100, few_max=20):
    """0 = many, 1 = medium, 2 = few, per class."""
    counts = np.asarray(class_counts)
    return np.where(counts > many_min, 0, np.where(counts < few_max, 2, 1))


def assign_views(class_counts, policy):
    groups = shot_groups(class_counts, policy.many_min, policy.few_max)
    return np.asarray(policy.views_per_group)[groups]


def augment_views(sample, k, policy, seed=None):
    """``k`` noisy copies of ``sample``; view ``v`` gets Gaussian noise of scale ``noise_scales[v]``."""
    if k > len(policy.noise_scales):
        raise ValueError(f"k={k} exceeds the {len(policy.noise_scales)} configured noise scales")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sample = np.asarray(sample, dtype=np.float64)
    scales = np.asarray(policy.noise_scales[:k], dtype=np.float64)
    return sample[None, :] + scales[:, None] * rng.normal(size=(k, sample.size))


@dataclass
class ViewBatch:
    """Augmented inputs of one batch before encoding."""

    inputs: np.ndarray
    labels: np.ndarray
    views: np.ndarray
    base_index: np.ndarray

    def select(self, views_per_class):
        """Sub-batch keeping the first ``views_per_class[label]`` views of every base sample."""
        keep = self.views < np.asarray(views_per_class)[self.labels]
        return ViewBatch(self.inputs[keep], self.labels[keep], self.views[keep], self.base_index[keep])


def expand_views(x, y, base_index, views_per_class, noise_scales, rng):
    """Expand base samples into their class's number of views, view-major within each sample."""
    reps = np.asarray(views_per_class)[y]
    if reps.max(initial=0) > len(noise_scales):
        raise ValueError("view count exceeds the configured noise scales")
    owner = np.repeat(np.arange(y.size), reps)
    views = np.concatenate([np.arange(r) for r in reps]) if reps.size else np.zeros(0, np.int64)
    scales = np.asarray(noise_scales, dtype=np.float64)[views]
    inputs = x[owner] + scales[:, None] * rng.normal(size=(owner.size, x.shape[1]))
    return ViewBatch(inputs, y[owner], views.astype(np.int64), np.asarray(base_index)[owner])


def compose_batch(dataset, batch_size, view_policy, seed=None, encode=None, centers=None):
    """Sample ``batch_size`` base instances uniformly, expand into views, build a ContrastiveBatch.

    ``encode`` maps augmented inputs to embeddings (default: normalize the
    inputs themselves). If ``centers`` is given, the centers of the classes
    present in the batch are appended as center entries.
    """
    if batch_size < 2:
        raise ValueError("batch needs at least two base samples")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(dataset.train_y.size, size=batch_size, replace=False))
    views = assign_views(dataset.class_counts, view_policy)
    vb = expand_views(dataset.train_x[idx], dataset.train_y[idx], idx, views, view_policy.noise_scales, rng)
    feats = normalize(vb.inputs) if encode is None else encode(vb.inputs)
    labels, view_ids = vb.labels, vb.views
    if centers is not None:
        c_feats, c_labels, c_views = centers.centers_for_batch(np.unique(labels))
        feats = np.vstack([feats, c_feats])
        labels = np.concatenate([labels, c_labels])
        view_ids = np.concatenate([view_ids, c_views])
    base = np.concatenate([vb.base_index, np.full(len(labels) - vb.base_index.size, -1)])
    return ContrastiveBatch(feats, labels, view_ids, dataset.class_counts, base_index=base)

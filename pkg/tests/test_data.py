import numpy as np
import pytest

from ltcontrast.data import (
    LongTailedDatasetSpec,
    ViewPolicy,
    assign_views,
    augment_views,
    compose_batch,
    generate_longtailed_counts,
    load_dataset,
    sample_dataset,
    save_dataset,
)
from ltcontrast.diagnostics import positive_pair_count
from ltcontrast.prototypes import ClassCenters


class TestCounts:
    def test_examples(self):
        np.testing.assert_array_equal(generate_longtailed_counts(3, 1000, 100), [1000, 100, 10])
        np.testing.assert_array_equal(generate_longtailed_counts(5, 40, 1), [40] * 5)
        np.testing.assert_array_equal(generate_longtailed_counts(2, 100, 100), [100, 1])

    def test_errors(self):
        with pytest.raises(ValueError):
            generate_longtailed_counts(3, 50, 100)
        with pytest.raises(ValueError):
            generate_longtailed_counts(1, 50, 1)

    @pytest.mark.parametrize("c, n, imb", [(10, 500, 100), (20, 500, 100), (7, 1280, 256), (50, 600, 10)])
    def test_profile(self, c, n, imb):
        counts = generate_longtailed_counts(c, n, imb)
        assert np.all(np.diff(counts) <= 0)
        assert counts[0] == n
        assert abs(counts[0] / counts[-1] - imb) / imb <= 1.0 / counts[-1]


class TestDataset:
    def test_deterministic(self):
        spec = LongTailedDatasetSpec(n_classes=4, n_max=50, imbalance_factor=10, input_dim=3, seed=7)
        a, b = sample_dataset(spec), sample_dataset(spec)
        for name in ("train_x", "train_y", "test_x", "test_y", "class_means"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_zero_stddev(self):
        ds = sample_dataset(LongTailedDatasetSpec(n_classes=3, n_max=20, imbalance_factor=4, input_dim=5, within_class_stddev=0.0))
        np.testing.assert_array_equal(ds.train_x, ds.class_means[ds.train_y])

    def test_sizes_and_separation(self):
        spec = LongTailedDatasetSpec(n_classes=3, n_max=1000, imbalance_factor=100, input_dim=6, class_center_separation=2.0, test_per_class=30)
        ds = sample_dataset(spec)
        assert ds.train_y.size == 1110
        np.testing.assert_array_equal(np.bincount(ds.test_y), [30, 30, 30])
        d = np.linalg.norm(ds.class_means[:, None] - ds.class_means[None], axis=-1)
        assert d[np.triu_indices(3, 1)].min() >= 2.0

    def test_infeasible_separation(self):
        with pytest.raises(ValueError, match="cannot place"):
            sample_dataset(LongTailedDatasetSpec(n_classes=3, n_max=10, imbalance_factor=1, input_dim=1))

    def test_csv_round_trip(self, tmp_path):
        ds = sample_dataset(LongTailedDatasetSpec(n_classes=3, n_max=30, imbalance_factor=3, input_dim=4, seed=2))
        save_dataset(ds, tmp_path / "ds")
        back = load_dataset(tmp_path / "ds")
        np.testing.assert_array_equal(back.train_x, ds.train_x)
        np.testing.assert_array_equal(back.test_y, ds.test_y)
        np.testing.assert_array_equal(back.class_counts, ds.class_counts)
        assert back.spec == ds.spec


class TestViews:
    def test_assign(self):
        np.testing.assert_array_equal(assign_views([150, 50, 10], ViewPolicy()), [2, 3, 4])
        np.testing.assert_array_equal(assign_views([150, 50, 10], ViewPolicy.uniform(3)), [3, 3, 3])
        np.testing.assert_array_equal(assign_views([100, 20, 19, 101], ViewPolicy()), [3, 3, 4, 2])

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            ViewPolicy(many_min=10, few_max=20)
        with pytest.raises(ValueError):
            ViewPolicy(views_per_group=(4, 3, 2))
        with pytest.raises(ValueError):
            ViewPolicy(views_per_group=(2, 3, 5))
        with pytest.raises(ValueError):
            ViewPolicy(noise_scales=(0.2, 0.1, 0.1, 0.1))

    def test_augment(self):
        policy = ViewPolicy(noise_scales=(0.0, 0.0, 0.0, 0.0))
        v = augment_views([1.0, 2.0], 3, policy, seed=0)
        np.testing.assert_array_equal(v, [[1.0, 2.0]] * 3)
        p = ViewPolicy()
        np.testing.assert_array_equal(augment_views([1.0, 2.0], 4, p, seed=3), augment_views([1.0, 2.0], 4, p, seed=3))
        with pytest.raises(ValueError):
            augment_views([1.0], 5, p, seed=0)

    def test_augment_noise_scales(self):
        scales = (0.05, 0.1, 0.1, 0.2)
        policy = ViewPolicy(noise_scales=scales)
        sample = np.array([0.5, -1.0, 2.0])
        rng = np.random.default_rng(0)
        draws = np.array([augment_views(sample, 4, policy, rng) for _ in range(10_000)]) - sample
        empirical = draws.std(axis=(0, 2))
        np.testing.assert_allclose(empirical, scales, rtol=0.1)


def tiny_dataset(counts, dim=3):
    from ltcontrast.data import LongTailedDataset

    counts = np.asarray(counts)
    y = np.repeat(np.arange(counts.size), counts)
    rng = np.random.default_rng(0)
    return LongTailedDataset(rng.normal(size=(y.size, dim)) + 3 * np.eye(dim)[y % dim], y, None, None, counts, None)


class TestComposeBatch:
    def test_two_by_two(self):
        ds = tiny_dataset([2, 2])
        b = compose_batch(ds, 4, ViewPolicy.uniform(2), seed=0)
        assert len(b) == 8
        assert all(b.positives(i).size == 3 for i in range(8))

    def test_per_class_expansion(self):
        ds = tiny_dataset([150, 10])
        policy = ViewPolicy(views_per_group=(2, 3, 4))
        rng = np.random.default_rng(1)
        for _ in range(10):
            b = compose_batch(ds, 20, policy, seed=int(rng.integers(1 << 30)))
            base = b.base_index
            for idx in np.unique(base):
                n_views = np.sum(base == idx)
                assert n_views == (2 if ds.train_y[idx] == 0 else 4)
                assert np.unique(b.labels[base == idx]).size == 1

    def test_index_sets_and_centers(self):
        ds = tiny_dataset([30, 12, 5])
        centers = ClassCenters(3, 3)
        for j in range(3):
            centers.init_center(j, np.eye(3)[j])
        b = compose_batch(ds, 12, ViewPolicy(), seed=4, centers=centers)
        assert b.has_centers
        for i in b.anchors:
            pos, neg = b.positives(i), b.negatives(i)
            assert not set(pos) & set(neg)
            assert np.all(b.labels[pos] == b.labels[i]) and np.all(b.labels[neg] != b.labels[i])
        samples = b.anchors.size
        assert samples == assign_views(ds.class_counts, ViewPolicy())[ds.train_y[np.unique(b.base_index[b.base_index >= 0])]].sum()

    def test_too_small(self):
        with pytest.raises(ValueError):
            compose_batch(tiny_dataset([3, 3]), 1, ViewPolicy())


def _in_batch_pairs(batch, cls):
    return int(batch.positive_mask()[batch.labels == cls].sum())


def test_aware_views_shrink_head_tail_pair_spread():
    spec = LongTailedDatasetSpec(n_classes=10, n_max=500, imbalance_factor=100, input_dim=8, seed=0)
    ds = sample_dataset(spec)
    uniform, aware = ViewPolicy.uniform(4), ViewPolicy()
    head, tail = 0, ds.n_classes - 1
    rng = np.random.default_rng(0)
    spreads = {"uniform": [], "aware": []}
    for _ in range(100):
        seed = int(rng.integers(1 << 30))
        bu = compose_batch(ds, 64, uniform, seed=seed)
        # same total budget: draw base samples until the aware expansion reaches the uniform size
        base = 64
        while True:
            ba = compose_batch(ds, base, aware, seed=seed)
            if len(ba) >= len(bu):
                break
            base += 1
        for name, b in (("uniform", bu), ("aware", ba)):
            spreads[name].append(_in_batch_pairs(b, head) - _in_batch_pairs(b, tail))
    assert np.mean(spreads["aware"]) < np.mean(spreads["uniform"])
    # closed-form cross-check of the same quantity for expected in-batch counts
    n_head = 64 * ds.class_counts[0] / ds.class_counts.sum()
    assert positive_pair_count(2, round(n_head)) < positive_pair_count(4, round(n_head))

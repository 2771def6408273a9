"""Synthetic long-tailed data, shot groups and distribution-aware views."""
import numpy as np

from ltcontrast.data import (
    LongTailedDatasetSpec,
    ViewPolicy,
    assign_views,
    augment_views,
    compose_batch,
    generate_longtailed_counts,
    sample_dataset,
    shot_groups,
)

print("3 classes, N_max 1000, IF 100:", generate_longtailed_counts(3, 1000, 100))
counts = generate_longtailed_counts(20, 500, 100)
print("20 classes, N_max 500, IF 100:", counts)

policy = ViewPolicy()  # 2/3/4 views for many/medium/few
names = np.array(["many", "medium", "few"])[shot_groups(counts, policy.many_min, policy.few_max)]
print("groups:", {str(k): int(v) for k, v in zip(*np.unique(names, return_counts=True))})
print("views per class:", assign_views(counts, policy))

# views are the sample plus Gaussian noise of a per-view scale
sample = np.zeros(4)
print("\nfour views of the origin, scales", policy.noise_scales)
print(np.round(augment_views(sample, 4, policy, seed=0), 3))

ds = sample_dataset(LongTailedDatasetSpec(n_classes=20, n_max=500, imbalance_factor=100, input_dim=16, seed=0))
print("\ntrain size", ds.train_y.size, "test size", ds.test_y.size, "(balanced test split)")
gaps = np.linalg.norm(ds.class_means[:, None] - ds.class_means[None], axis=-1)
print("closest pair of class means:", round(gaps[np.triu_indices(20, 1)].min(), 3))

# more views for rare classes narrows the head/tail gap in positive pairs
uniform = ViewPolicy.uniform(3)
for name, pol in (("uniform 3 views", uniform), ("2/3/4 views", policy)):
    pairs = np.zeros(20)
    for s in range(50):
        b = compose_batch(ds, 64, pol, seed=s)
        pairs += np.bincount(b.labels, weights=b.positive_mask().sum(axis=1), minlength=20)
    print(f"{name:>16s}: batch entries {len(b):4d}, head/tail positive pairs ratio "
          f"{pairs[:3].mean() / max(pairs[-3:].mean(), 1):.0f}")

"""Where SCL pushes positives apart, and how often that happens per class.

Part one builds a batch whose anchor has an exact duplicate (an "easy"
positive) and counts repulsive positive coefficients under SCL and ACL.
Part two draws multi-view batches from a long-tailed dataset, embeds them with
a random projection, and tallies conflicts per class. Head classes supply
almost all positive pairs and so almost all repulsive ones. The ratio is a
different story: with an untrained encoder it falls with class size, and it
only rises with class size once SCL training has clustered the head classes
(see 05_training.py).
"""
import numpy as np

from ltcontrast import CENTER_VIEW, ContrastiveBatch, normalize
from ltcontrast.data import LongTailedDatasetSpec, ViewPolicy, compose_batch, sample_dataset
from ltcontrast.diagnostics import (
    conflict_increment_estimate,
    conflict_ratio_per_class,
    easy_positive_mask,
    positive_pair_count,
)
from ltcontrast.gradients import acl_coefficients
from ltcontrast.losses import batch_negative_weights

e = np.eye(5)
a, near = e[0], normalize(e[0] + 0.5 * e[1])
feats = np.array([a, a, near, e[2], e[3], normalize(a + near), e[4]])
labels = [0, 0, 0, 0, 1, 0, 1]
views = [0, 1, 0, 0, 0, CENTER_VIEW, CENTER_VIEW]
batch = ContrastiveBatch(feats, labels, views, [100, 10])

report = conflict_ratio_per_class([batch], tau=0.1)
print("easy positives per anchor:", easy_positive_mask(batch).sum(axis=1)[:4])
print("SCL repulsive positive pairs:", report.repulsive[0], "of", report.pos_pairs[0])
coef = acl_coefficients(batch, batch_negative_weights(batch), 0.1)
print("ACL repulsive positive pairs:", int(np.sum((coef > 0) & (batch.positive_mask() | batch.center_mask()))))

# positive pairs grow quadratically with views and class frequency
print("\npositive pairs for n = 1, 5, 10 samples:")
for m in (2, 3, 4):
    print(f"  {m} views:", [positive_pair_count(m, n) for n in (1, 5, 10)],
          " extra conflicts at beta 0.3:", [conflict_increment_estimate(m, n, 0.3) for n in (1, 5, 10)])

spec = LongTailedDatasetSpec(n_classes=10, n_max=300, imbalance_factor=50, input_dim=16, seed=3)
ds = sample_dataset(spec)
proj = np.random.default_rng(0).normal(size=(16, 8))
policy = ViewPolicy.uniform(4, noise_scales=(0.1, 0.2, 0.3, 0.4))
batches = [compose_batch(ds, 64, policy, seed=s, encode=lambda x: normalize(x @ proj)) for s in range(30)]
report = conflict_ratio_per_class(batches, tau=0.1)

print("\nclass  train count  positive pairs  repulsive  conflict ratio")
for j in range(ds.n_classes):
    print(f"{j:5d}  {ds.class_counts[j]:11d}  {report.pos_pairs[j]:14d}  {report.repulsive[j]:9d}"
          f"  {report.conflict_ratio[j]:14.3f}")
print("Spearman(count, conflict ratio) =", round(report.spearman(), 3))

"""Contrastive losses and their gradients on a hand-made batch.

A batch of unit vectors with labels, one class center per class, and the two
losses side by side: supervised contrastive (SCL) and aligned contrastive (ACL).
The analytic gradient coefficients are then checked against central
finite differences.
"""
import numpy as np

from ltcontrast import CENTER_VIEW, ContrastiveBatch, normalize
from ltcontrast.gradients import (
    acl_negative_grad,
    acl_positive_grad,
    anchor_grad,
    finite_difference_oracle,
    scl_instance_grad,
)
from ltcontrast.losses import acl_loss, batch_negative_weights, scl_loss

rng = np.random.default_rng(0)

# two views each of two head samples (class 0), one medium sample (1) and one tail sample (2)
feats = normalize(rng.normal(size=(8, 6)))
labels = np.array([0, 0, 0, 0, 1, 1, 2, 2])
views = np.array([0, 1, 0, 1, 0, 1, 0, 1])
counts = [300, 60, 12]
batch = ContrastiveBatch(feats, labels, views, class_counts=counts)

tau = 0.1
print("SCL of anchor 0:", round(scl_loss(batch, 0, tau), 4))

# ACL needs a center per class; append the class means
means = np.array([feats[labels == c].mean(axis=0) for c in (0, 1, 2)])
with_centers = ContrastiveBatch(
    np.vstack([feats, normalize(means)]),
    np.concatenate([labels, [0, 1, 2]]),
    np.concatenate([views, [CENTER_VIEW] * 3]),
    class_counts=counts,
)
w = batch_negative_weights(with_centers)
# each anchor's weights have mean 1 over its own negatives; rarer classes weigh more
for i in (0, 6):
    neg = with_centers.negatives(i)
    print(f"anchor {i} negatives {with_centers.labels[neg]} weights {np.round(w[i][neg], 3)}")
print("ACL of anchor 0:", round(acl_loss(with_centers, 0, w, tau), 4))

# gradient coefficients: negative means "pull towards the anchor"
g = scl_instance_grad(batch, 0, tau)
print("\nSCL coefficients of anchor 0 (candidates", g.indices, "):", np.round(g.coefficients, 3))
print("ACL positive coefficients:", np.round(acl_positive_grad(with_centers, 0, w, tau).coefficients, 3))
print("ACL negative coefficients:", np.round(acl_negative_grad(with_centers, 0, w, tau).coefficients, 3))



def moved_anchor(b, row):
    f = b.features.copy()
    f[0] = row
    return ContrastiveBatch(f, b.labels, b.views, b.class_counts)


# finite-difference check of the anchor gradient
for kind, b, loss in (("scl", batch, lambda x: scl_loss(moved_anchor(batch, x), 0, tau)),
                      ("acl", with_centers, lambda x: acl_loss(moved_anchor(with_centers, x), 0, w, tau))):
    analytic = anchor_grad(kind, b, 0, w if kind == "acl" else None, tau)
    numeric = finite_difference_oracle(loss, b.features[0])
    err = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
    print(f"{kind} anchor gradient vs finite differences: relative error {err:.1e}")

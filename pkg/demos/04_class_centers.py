"""Class centers kept as exponential moving averages of batch means.

Centers live on the unit sphere. Feeding a constant batch mean drives a center
to that direction; the tangent of the angle shrinks by at least the momentum
at every update.
"""
import math

import numpy as np

from ltcontrast import normalize
from ltcontrast.prototypes import ClassCenters

rng = np.random.default_rng(1)
target = normalize(rng.normal(size=8))
side = rng.normal(size=8)
side = normalize(side - (side @ target) * target)
start = np.cos(np.pi / 4) * target + np.sin(np.pi / 4) * side

for mu in (0.5, 0.9, 0.99):
    centers = ClassCenters(n_classes=1, dim=8, momentum=mu)
    centers.init_center(0, start)
    steps = 0
    while np.linalg.norm(centers.vectors[0] - target) >= 1e-6:
        centers.ema_update(0, 2.5 * target)  # scale of the batch mean does not matter
        steps += 1
    print(f"momentum {mu}: {steps} updates from 45 degrees (bound {math.ceil(math.log(1e-6) / math.log(mu)) + 1})")

# a trainer-style stream: noisy batch means around a class direction
centers = ClassCenters(n_classes=3, dim=8, momentum=0.9)
dirs = normalize(rng.normal(size=(3, 8)))
for step in range(200):
    labels = rng.integers(0, 3, 32)
    emb = normalize(dirs[labels] + 0.3 * rng.normal(size=(32, 8)))
    centers.observe(labels, emb)
print("\ncosine between learned centers and class directions:", np.round(np.sum(centers.vectors * dirs, axis=1), 4))

"""Contrastive learning under class imbalance, at desk scale."""
from .core import CENTER_VIEW, Embedding, candidate_softmax, logit, normalize
from .losses import (
    ContrastiveBatch,
    LossBreakdown,
    acl_batch_loss,
    acl_loss,
    balanced_softmax_loss,
    batch_negative_weights,
    combined_loss,
    negative_weights,
    scl_batch_loss,
    scl_loss,
    scl_pairwise_loss,
)

__version__ = "0.1.0"

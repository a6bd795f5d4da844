"""Uncertainty-weighted feature mixing and the training losses.

Each sample's embedding is blended with its positive and negative
partners using weights derived from the predicted sigmas, the blend is
classified, and the classification loss charges the blended features
with all three participating labels.  A squared-distance triplet term
on the raw means shapes the embedding geometry directly.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, LabelError, ShapeError
from .heads import UncertainBatch
from .mining import TripletPlan

SIGMA_WEIGHTS = "sigma"        # branch weight proportional to its own sigma
PRECISION_WEIGHTS = "precision"  # proportional to 1 / sigma


@dataclass
class MixedFeatures:
    """Blended embeddings and the per-branch weights that built them.

    Weights are (B, d) and sum to one elementwise across the branches
    that exist; rows that could not be mixed carry f = mean, w = 1 and
    zero partner weights.
    """

    features: T.DiffArray   # (B, d)
    w_self: T.DiffArray     # (B, d)
    w_pos: T.DiffArray      # (B, d)
    w_neg: T.DiffArray      # (B, d)


def mixup(u: UncertainBatch, plan: TripletPlan | None,
          weighting: str = SIGMA_WEIGHTS,
          include_pos: bool = True,
          include_neg: bool = True) -> MixedFeatures:
    """Blend each embedding with its partners, weighted by uncertainty.

    With sigma weighting each branch's weight is its own sigma divided by
    the sum of participating sigmas; precision weighting uses 1/sigma
    instead, so confident branches dominate the blend.  Rows where
    plan.valid_mask is False (or when both partner branches are switched
    off) degrade to the identity blend.
    """
    if weighting not in (SIGMA_WEIGHTS, PRECISION_WEIGHTS):
        raise ContractError(f"unknown mixup weighting {weighting!r}")
    b, d = u.mean.shape
    ones = T.constant(np.ones((b, d)))
    zeros = T.constant(np.zeros((b, d)))

    if plan is None or not (include_pos or include_neg):
        return MixedFeatures(features=u.mean, w_self=ones,
                             w_pos=zeros, w_neg=zeros)

    if plan.pos_index.shape != (b,) or plan.neg_index.shape != (b,):
        raise ShapeError("triplet plan does not match batch size")

    if weighting == SIGMA_WEIGHTS:
        base = u.sigma
    else:
        base = T.div(ones, u.sigma)

    parts = [base]
    if include_pos:
        parts.append(T.take_rows(base, plan.pos_index))
    if include_neg:
        parts.append(T.take_rows(base, plan.neg_index))
    denom = parts[0]
    for extra in parts[1:]:
        denom = T.add(denom, extra)

    w_self = T.div(base, denom)
    w_pos = T.div(parts[1], denom) if include_pos else zeros
    w_neg = T.div(parts[-1], denom) if include_neg else zeros

    mixed = T.mul(w_self, u.mean)
    if include_pos:
        mixed = T.add(mixed, T.mul(w_pos, T.take_rows(u.mean, plan.pos_index)))
    if include_neg:
        mixed = T.add(mixed, T.mul(w_neg, T.take_rows(u.mean, plan.neg_index)))

    # degrade invalid rows to the identity blend
    keep = plan.valid_mask.astype(np.float64)[:, None]
    keep_c = T.constant(np.broadcast_to(keep, (b, d)).copy())
    drop_c = T.constant(np.broadcast_to(1.0 - keep, (b, d)).copy())

    features = T.add(T.mul(keep_c, mixed), T.mul(drop_c, u.mean))
    w_self = T.add(T.mul(keep_c, w_self), drop_c)
    w_pos = T.mul(keep_c, w_pos)
    w_neg = T.mul(keep_c, w_neg)
    return MixedFeatures(features=features, w_self=w_self,
                         w_pos=w_pos, w_neg=w_neg)


def _check_labels(labels: np.ndarray, num_classes: int, what: str):
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f"{what} outside [0, {num_classes})")


def ce_loss(mixed: T.DiffArray, classifier: T.DiffArray,
            labels: np.ndarray, plan: TripletPlan | None = None,
            include_pos: bool = True,
            include_neg: bool = True) -> T.DiffArray:
    """Multi-label cross entropy over the blended features.

    Every sample is charged with its own label plus, when a valid plan is
    given, the labels of the partners blended into it, so the classifier
    must explain all ingredients of the mix.  Averaged over the batch.
    """
    if mixed.ndim != 2:
        raise ShapeError(f"ce_loss needs 2-d features, got {mixed.shape}")
    if classifier.ndim != 2 or classifier.shape[1] != mixed.shape[1]:
        raise ShapeError(f"classifier {classifier.shape} does not match "
                         f"features {mixed.shape}")
    b = mixed.shape[0]
    k = classifier.shape[0]
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} does not match "
                         f"batch {b}")
    _check_labels(labels, k, "labels")

    targets = np.zeros((b, k), dtype=np.float64)
    targets[np.arange(b), labels] += 1.0
    if plan is not None:
        valid = plan.valid_mask
        if include_pos:
            pos_labels = labels[plan.pos_index]
            _check_labels(pos_labels, k, "positive labels")
            rows = np.flatnonzero(valid)
            targets[rows, pos_labels[rows]] += 1.0
        if include_neg:
            neg_labels = labels[plan.neg_index]
            _check_labels(neg_labels, k, "negative labels")
            rows = np.flatnonzero(valid)
            targets[rows, neg_labels[rows]] += 1.0

    logp = T.log_softmax(T.matmul(mixed, T.transpose(classifier)))
    picked = T.total_sum(T.mul(T.constant(targets), logp))
    return T.scalar_mul(-1.0 / b, picked)


def triplet_loss(u: UncertainBatch, plan: TripletPlan,
                 margin: float) -> T.DiffArray:
    """Hinged squared-distance triplet loss on the raw embedding means.

    sum_i max(||mu_i - mu_pos||^2 - ||mu_i - mu_neg||^2 + margin, 0)
    over the valid rows; a sum, not a mean, so each extra violating
    triplet adds its full cost.
    """
    if margin < 0:
        raise ContractError(f"margin must be non-negative, got {margin}")
    b = u.mean.shape[0]
    if plan.pos_index.shape != (b,):
        raise ShapeError("triplet plan does not match batch size")
    d_pos = T.sub(u.mean, T.take_rows(u.mean, plan.pos_index))
    d_neg = T.sub(u.mean, T.take_rows(u.mean, plan.neg_index))
    sq_pos = T.row_sum(T.mul(d_pos, d_pos))
    sq_neg = T.row_sum(T.mul(d_neg, d_neg))
    hinge = T.relu(T.add(T.sub(sq_pos, sq_neg), T.constant(float(margin))))
    keep = T.constant(plan.valid_mask.astype(np.float64))
    return T.total_sum(T.mul(hinge, keep))


@dataclass
class LossBreakdown:
    """The combined objective and its pieces, still differentiable."""

    total: T.DiffArray
    ce_term: T.DiffArray
    triplet_term: T.DiffArray
    triplet_weight: float
    margin: float

    def scalars(self) -> tuple[float, float, float]:
        return (float(self.total.values), float(self.ce_term.values),
                float(self.triplet_term.values))


def total_loss(ce_term: T.DiffArray, triplet_term: T.DiffArray,
               triplet_weight: float, margin: float = 1.0) -> LossBreakdown:
    """total = ce + triplet_weight * triplet, composed on the tape."""
    if triplet_weight < 0:
        raise ContractError(f"triplet weight must be non-negative, got "
                            f"{triplet_weight}")
    total = T.add(ce_term, T.scalar_mul(triplet_weight, triplet_term))
    return LossBreakdown(total=total, ce_term=ce_term,
                         triplet_term=triplet_term,
                         triplet_weight=float(triplet_weight),
                         margin=float(margin))

"""Training objectives over unit-sphere features.

All losses are built from the autodiff primitives, so gradients flow to both
features and classifier weights.  Softmax terms use max-subtracted
log-sum-exp: a temperature of 1/32 scales cosine logits by 32, which would
overflow a naive exp.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class LossConfig:
    tau: float = 1.0 / 16.0
    margin: float = 0.0
    lambda_ssc: float = 0.0
    lambda_inter: float = 0.0
    lambda_intra: float = 0.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        for name in ("lambda_ssc", "lambda_inter", "lambda_intra"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def _check_labels(labels: np.ndarray, n: int, n_classes: int | None = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if n_classes is not None and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes})")
    return labels


def _row_logsumexp(logits: Tensor, exclude_diag: bool = False) -> Tensor:
    """Stable per-row log-sum-exp, returned as an n x 1 tensor."""
    n, m = logits.shape
    if exclude_diag:
        offdiag = ~np.eye(n, dtype=bool)
        row_max = np.max(np.where(offdiag, logits.data, -np.inf), axis=1, keepdims=True)
        # shift excluded diagonal entries to 0 so exp cannot overflow there;
        # the mask below zeroes them out (and their gradient) anyway
        shift = np.where(offdiag, np.tile(row_max, (1, m)), logits.data)
    else:
        row_max = np.max(logits.data, axis=1, keepdims=True)
        shift = np.tile(row_max, (1, m))
    e = ad.exp(ad.sub(logits, Tensor(shift)))
    if exclude_diag:
        e = ad.mul(e, Tensor(offdiag.astype(float)))
    se = ad.matmul(e, Tensor(np.ones((m, 1))))
    return ad.add(ad.log(se), Tensor(row_max))


def sce_loss(features: Tensor, labels, classifier: Tensor,
             tau: float, margin: float = 0.0) -> Tensor:
    """Softmax cross-entropy over cosine-similarity logits.

    The true-class logit is (sim(z_i, phi_{y_i}) - margin) / tau; all other
    logits are sim(z_i, phi_j) / tau.  Mean over the batch.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    b = features.shape[0]
    c = classifier.shape[0]
    if c < 2:
        raise ValueError(f"need at least 2 classes, got {c}")
    labels = _check_labels(labels, b, c)
    onehot = np.zeros((b, c))
    onehot[np.arange(b), labels] = 1.0
    cos = ad.cosine_matrix(features, classifier)
    if margin != 0.0:
        cos = ad.sub(cos, Tensor(margin * onehot))
    logits = ad.scale(cos, 1.0 / tau)
    lse = _row_logsumexp(logits)
    true_logit = ad.matmul(ad.mul(logits, Tensor(onehot)), Tensor(np.ones((c, 1))))
    return ad.mean(ad.sub(lse, true_logit))


def ssc_loss(features: Tensor, positive_pairs, tau: float) -> Tensor:
    """InfoNCE over listed positive pairs (i, j).

    For each pair the denominator runs over every sample k != i in the
    batch; the loss is the mean over all listed pairs.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    b = features.shape[0]
    if b < 2:
        raise ValueError("ssc_loss needs at least 2 samples")
    pairs = list(positive_pairs)
    if not pairs:
        raise ValueError("ssc_loss needs at least one positive pair")
    for i, j in pairs:
        if i == j or not (0 <= i < b and 0 <= j < b):
            raise ValueError(f"invalid positive pair ({i}, {j}) for batch of {b}")
    logits = ad.scale(ad.cosine_matrix(features, features), 1.0 / tau)
    lse = _row_logsumexp(logits, exclude_diag=True)
    anchor_counts = np.zeros((b, 1))
    pair_weight = np.zeros((b, b))
    for i, j in pairs:
        anchor_counts[i, 0] += 1.0
        pair_weight[i, j] += 1.0
    sum_lse = ad.tensor_sum(ad.mul(lse, Tensor(anchor_counts)))
    sum_pos = ad.tensor_sum(ad.mul(logits, Tensor(pair_weight)))
    return ad.scale(ad.sub(sum_lse, sum_pos), 1.0 / len(pairs))


def _pairwise_cos_loss(features: Tensor, labels, same_class: bool) -> Tensor:
    b = features.shape[0]
    labels = _check_labels(labels, b)
    eq = labels[:, None] == labels[None, :]
    upper = np.triu(np.ones((b, b), dtype=bool), k=1)
    mask = (upper & eq) if same_class else (upper & ~eq)
    n_pairs = int(mask.sum())
    if n_pairs == 0:
        kind = "same-class" if same_class else "different-class"
        raise ValueError(f"no {kind} pair in batch")
    cos = ad.cosine_matrix(features, features)
    return ad.scale(ad.tensor_sum(ad.mul(cos, Tensor(mask.astype(float)))), -1.0 / n_pairs)


def inter_loss(features: Tensor, labels) -> Tensor:
    """Negative mean cosine similarity over unordered different-class pairs."""
    return _pairwise_cos_loss(features, labels, same_class=False)


def intra_loss(features: Tensor, labels) -> Tensor:
    """Negative mean cosine similarity over unordered same-class pairs."""
    return _pairwise_cos_loss(features, labels, same_class=True)


def total_loss(features: Tensor, labels, classifier: Tensor, config: LossConfig,
               aug_features: Tensor | None = None):
    """Weighted combination of the active loss terms.

    ``aug_features`` holds one augmented view per batch element (same row
    order); it is required when lambda_ssc > 0.  The contrastive term runs
    over the 2B-row concatenation with pairs (i, B+i) and (B+i, i).

    Returns ``(total, breakdown)`` with per-term weighted contributions.
    """
    terms: dict[str, float] = {}
    total = sce_loss(features, labels, classifier, config.tau, config.margin)
    terms["ce"] = total.item()
    if config.lambda_ssc > 0:
        if aug_features is None:
            raise ValueError("lambda_ssc > 0 requires augmented views")
        b = features.shape[0]
        combined = ad.concat_rows(features, aug_features)
        pairs = [(i, b + i) for i in range(b)] + [(b + i, i) for i in range(b)]
        t = ad.scale(ssc_loss(combined, pairs, config.tau), config.lambda_ssc)
        terms["ssc"] = t.item()
        total = ad.add(total, t)
    if config.lambda_inter > 0:
        t = ad.scale(inter_loss(features, labels), config.lambda_inter)
        terms["inter"] = t.item()
        total = ad.add(total, t)
    if config.lambda_intra > 0:
        t = ad.scale(intra_loss(features, labels), config.lambda_intra)
        terms["intra"] = t.item()
        total = ad.add(total, t)
    terms["total"] = total.item()
    return total, terms

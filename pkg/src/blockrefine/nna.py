"""Nearest-neighbor alignment loss and batch construction.

Each anchor is pulled toward a positive retrieved from the support queue and
pushed away from stop-gradient negatives of other samples in the batch.
"""
from dataclasses import dataclass

import numpy as np

from .errors import BadTemperature, MaskDiagonal, ShapeMismatch
from .numerics import log_sum_exp


@dataclass
class ContrastiveBatch:
    """Inputs of one loss evaluation.

    anchors: (N, d) unit rows, gradient-carrying.
    positives: (N, d) unit rows, constant.
    negatives: (M, d) unit rows, constant. Usually M == N.
    tau: temperature.
    mask: (N, M) bool, True where the negative term is dropped. For square
        batches the diagonal must be True.
    """
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    tau: float
    mask: np.ndarray

    def validate(self):
        if not self.tau > 0:
            raise BadTemperature(f"temperature must be positive, got {self.tau}")
        n, d = self.anchors.shape
        if self.positives.shape != (n, d) or self.negatives.shape[1] != d:
            raise ShapeMismatch("anchors, positives and negatives disagree")
        if self.mask.shape != (n, self.negatives.shape[0]):
            raise ShapeMismatch("mask must be (anchors, negatives)")
        if n == self.negatives.shape[0] and not np.all(np.diagonal(self.mask)):
            raise MaskDiagonal("self-pairs must be excluded from the negatives")


@dataclass
class LossOutput:
    loss: float
    grad_anchors: np.ndarray
    per_anchor: np.ndarray


def nna_loss(batch):
    """Mean NNA loss over anchors and its gradient w.r.t. the anchors only."""
    batch.validate()
    z, pos, neg, tau = batch.anchors, batch.positives, batch.negatives, float(batch.tau)
    n = z.shape[0]
    lp = (z * pos).sum(1) / tau
    ln = np.where(batch.mask, -np.inf, z @ neg.T / tau)
    logits = np.concatenate([lp[:, None], ln], axis=1)
    lse = log_sum_exp(logits, axis=1)
    per_anchor = lse - lp
    w = np.exp(logits - lse[:, None])
    grad = ((w[:, 0] - 1.0)[:, None] * pos + w[:, 1:] @ neg) / (tau * n)
    return LossOutput(float(per_anchor.mean()), grad, per_anchor)


def build_batch_nna(pred, proj, queue, tau, k, swap_negatives=False,
                    same_sample_groups=None, rng=None, negatives=None,
                    negative_groups=None):
    """Assemble a ContrastiveBatch.

    ``pred`` rows become anchors. The positive of row i is a top-k queue
    neighbor of ``proj[i]``. Negatives default to ``proj`` itself (stop
    gradient); pass ``negatives``/``negative_groups`` to use a different pool.
    With ``swap_negatives`` every negative is replaced by its own queue
    neighbor, which is the NNCLR variant. Pairs whose group ids match are
    excluded from the negative sum; without groups only i == j is excluded.
    """
    pred = np.atleast_2d(pred)
    proj = np.atleast_2d(proj)
    if pred.shape != proj.shape:
        raise ShapeMismatch("pred and proj must be row-aligned")
    n = pred.shape[0]
    groups = np.arange(n) if same_sample_groups is None else np.asarray(same_sample_groups)
    positives, _ = queue.retrieve(proj, k, rng)
    if negatives is None:
        negs, neg_groups = proj, groups
    else:
        negs = np.atleast_2d(negatives)
        neg_groups = np.asarray(negative_groups)
    if swap_negatives:
        negs, _ = queue.retrieve(negs, k, rng)
    mask = groups[:, None] == neg_groups[None, :]
    return ContrastiveBatch(pred, positives, np.array(negs, copy=True), float(tau), mask)

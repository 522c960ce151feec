"""Contrastive and classification losses.

All contrastive losses take a (2N, D) matrix of unit-norm projections and
treat rows i != j as a positive pair when their group ids match. The
denominator for anchor i always runs over every k != i.
"""

from __future__ import annotations

from typing import Literal

import numpy as np

from .tensor import Tensor, as_tensor, log_sum_exp_rows, matmul, mul, transpose, tsum

PositiveCount = Literal["originals", "augmented"]
Reduction = Literal["sum", "mean"]

DEFAULT_TEMPERATURE = 0.1


class ContrastiveInputError(ValueError):
    pass


def _validate(Z: Tensor, ids: np.ndarray, tau: float, check_normalized: bool) -> None:
    if tau <= 0:
        raise ContrastiveInputError(f"temperature must be > 0, got {tau}")
    if Z.ndim != 2:
        raise ContrastiveInputError(f"expected a (2N, D) matrix, got shape {Z.shape}")
    if ids.shape != (Z.shape[0],):
        raise ContrastiveInputError(f"{ids.shape[0]} group ids for {Z.shape[0]} rows")
    _, counts = np.unique(ids, return_counts=True)
    if (counts < 2).any():
        lonely = [v for v, c in zip(*np.unique(ids, return_counts=True)) if c < 2]
        raise ContrastiveInputError(f"anchors without positives for ids {lonely}")
    if check_normalized:
        norms = np.linalg.norm(Z.data, axis=1)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ContrastiveInputError("rows of Z must be unit-norm")


def positive_weights(ids: np.ndarray, positive_count: PositiveCount = "originals") -> np.ndarray:
    """Per-anchor factor 1 / (2 N_v - 1).

    ``originals``: N_v counts source samples sharing the id, i.e. half the
    rows carrying it, so the factor is 1 / (#positives of the anchor).
    ``augmented``: N_v counts rows carrying the id.
    """
    _, inverse, counts = np.unique(ids, return_inverse=True, return_counts=True)
    rows = counts[inverse].astype(np.float64)
    if positive_count == "originals":
        return 1.0 / (rows - 1.0)
    if positive_count == "augmented":
        return 1.0 / (2.0 * rows - 1.0)
    raise ValueError(f"unknown positive_count convention {positive_count!r}")


def _similarities(Z: Tensor, tau: float) -> Tensor:
    return mul(matmul(Z, transpose(Z)), 1.0 / tau)


def multi_positive_loss(
    Z,
    group_ids,
    tau: float = DEFAULT_TEMPERATURE,
    *,
    positive_count: PositiveCount = "originals",
    reduction: Reduction = "sum",
    check_normalized: bool = True,
) -> Tensor:
    Z = as_tensor(Z)
    ids = np.asarray(group_ids)
    _validate(Z, ids, tau, check_normalized)
    n = Z.shape[0]
    off_diag = ~np.eye(n, dtype=bool)
    positives = (ids[:, None] == ids[None, :]) & off_diag
    w = positive_weights(ids, positive_count)

    sim = _similarities(Z, tau)
    log_denom = log_sum_exp_rows(sim, off_diag)
    pos_weight = positives * w[:, None]
    # sum_i w_i sum_{j in P(i)} (log_denom_i - sim_ij)
    loss = tsum(mul(log_denom, w * positives.sum(axis=1))) - tsum(mul(sim, pos_weight))
    if reduction == "mean":
        loss = mul(loss, 1.0 / n)
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return loss


def clmex_loss(Z, view_ids, tau: float = DEFAULT_TEMPERATURE, **kwargs) -> Tensor:
    """Multi-view contrastive loss: positives are rows sharing a view-invariant id."""
    return multi_positive_loss(Z, view_ids, tau, **kwargs)


def supcon_loss(Z, class_labels, tau: float = DEFAULT_TEMPERATURE, **kwargs) -> Tensor:
    """Supervised contrastive loss: the same formula keyed on class labels."""
    return multi_positive_loss(Z, class_labels, tau, **kwargs)


def simclr_loss(
    Z,
    pair_ids,
    tau: float = DEFAULT_TEMPERATURE,
    *,
    reduction: Reduction = "sum",
    check_normalized: bool = True,
) -> Tensor:
    """NT-Xent: each anchor's single positive is the other row with its pair id."""
    Z = as_tensor(Z)
    ids = np.asarray(pair_ids)
    _validate(Z, ids, tau, check_normalized)
    n = Z.shape[0]
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    if n % 2 or (sorted_ids[0::2] != sorted_ids[1::2]).any() or (
        n > 2 and (sorted_ids[2::2] == sorted_ids[1:-1:2]).any()
    ):
        raise ContrastiveInputError("simclr_loss needs every pair id to occur exactly twice")
    partner = np.empty(n, dtype=np.int64)
    partner[order[0::2]] = order[1::2]
    partner[order[1::2]] = order[0::2]

    off_diag = ~np.eye(n, dtype=bool)
    sim = _similarities(Z, tau)
    log_denom = log_sum_exp_rows(sim, off_diag)
    pick = np.zeros((n, n))
    pick[np.arange(n), partner] = 1.0
    loss = tsum(log_denom) - tsum(mul(sim, pick))
    if reduction == "mean":
        loss = mul(loss, 1.0 / n)
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return loss


CONTRASTIVE_LOSSES = {"clmex": clmex_loss, "simclr": simclr_loss, "supcon": supcon_loss}


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-softmax of the true class."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} do not align")
    n_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    n = labels.size
    return mul(tsum(log_sum_exp_rows(logits)) - tsum(mul(logits, onehot)), 1.0 / n)

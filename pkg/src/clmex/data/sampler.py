"""Batch construction for contrastive pre-training and supervised stages."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .augment import AugmentConfig, augment
from .dataset import MultiViewDataset


class SamplerError(ValueError):
    pass


@dataclass
class AugmentedBatch:
    """2N augmented images; rows 2k and 2k+1 are two augmentations of one source image."""

    images: np.ndarray  # (2N, C, H, W)
    view_ids: np.ndarray
    source_indices: np.ndarray
    labels: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.view_ids)


@dataclass(frozen=True)
class SamplerConfig:
    groups_per_batch: int = 8
    views_per_group: Optional[int] = None  # None: every view in the dataset's view set
    # "shuffled": groups in uniformly random order. "by_subject": subjects in random order, each
    # subject's groups kept together, so batches hold several sessions of the same person.
    group_order: str = "shuffled"

    def resolve_views(self, dataset: MultiViewDataset) -> int:
        return self.views_per_group if self.views_per_group is not None else len(dataset.view_set)


def eligible_groups(dataset: MultiViewDataset, views_per_group: int) -> list[int]:
    return sorted(g for g, idx in dataset.groups().items() if len(idx) >= views_per_group)


def check_sampler(dataset: MultiViewDataset, config: SamplerConfig) -> tuple[list[int], int]:
    k = config.resolve_views(dataset)
    if config.groups_per_batch < 1 or k < 1:
        raise SamplerError("groups_per_batch and views_per_group must be >= 1")
    if config.group_order not in ("shuffled", "by_subject"):
        raise SamplerError(f"unknown group_order {config.group_order!r}")
    groups = eligible_groups(dataset, k)
    if len(groups) < config.groups_per_batch:
        raise SamplerError(
            f"need {config.groups_per_batch} view-invariant groups with >= {k} views each, "
            f"dataset has {len(groups)} (short by {config.groups_per_batch - len(groups)})"
        )
    return groups, k


def augment_pairs(
    dataset: MultiViewDataset,
    indices: np.ndarray,
    rng: np.random.Generator,
    augment_config: AugmentConfig = AugmentConfig(),
    with_labels: bool = False,
) -> AugmentedBatch:
    """Augment every source image twice, interleaving the copies."""
    indices = np.asarray(indices, dtype=np.int64)
    src = np.repeat(indices, 2)
    imgs = np.stack([augment(dataset.images[i], rng, augment_config) for i in src])
    return AugmentedBatch(
        images=np.ascontiguousarray(imgs.transpose(0, 3, 1, 2)),
        view_ids=dataset.view_invariant_ids[src].copy(),
        source_indices=src,
        labels=dataset.labels[src].copy() if with_labels else None,
    )


def _pick_views(dataset_groups, group: int, k: int, rng: np.random.Generator) -> np.ndarray:
    members = dataset_groups[group]
    return np.sort(rng.choice(members, size=k, replace=False))


def sample_batch(
    dataset: MultiViewDataset,
    config: SamplerConfig,
    rng: np.random.Generator,
    augment_config: AugmentConfig = AugmentConfig(),
    with_labels: bool = False,
) -> AugmentedBatch:
    """G distinct groups drawn uniformly, K distinct views from each, each view augmented twice."""
    groups, k = check_sampler(dataset, config)
    members = dataset.groups()
    chosen = rng.choice(groups, size=config.groups_per_batch, replace=False)
    idx = np.concatenate([_pick_views(members, g, k, rng) for g in chosen])
    return augment_pairs(dataset, idx, rng, augment_config, with_labels)


def batches_per_epoch(dataset: MultiViewDataset, config: SamplerConfig) -> int:
    groups, _ = check_sampler(dataset, config)
    return -(-len(groups) // config.groups_per_batch)


def _epoch_order(dataset, groups, members, group_order: str, rng: np.random.Generator) -> np.ndarray:
    if group_order == "shuffled":
        return rng.permutation(np.asarray(groups))
    if group_order != "by_subject":
        raise SamplerError(f"unknown group_order {group_order!r}")
    by_subject: dict = {}
    for g in groups:
        by_subject.setdefault(dataset.subject_ids[members[g][0]], []).append(g)
    subjects = sorted(by_subject)
    order = []
    for si in rng.permutation(len(subjects)):
        order.extend(rng.permutation(np.asarray(by_subject[subjects[si]])).tolist())
    return np.asarray(order)


def epoch_batches(
    dataset: MultiViewDataset,
    config: SamplerConfig,
    rng: np.random.Generator,
    augment_config: AugmentConfig = AugmentConfig(),
) -> Iterator[AugmentedBatch]:
    """One pass over all eligible groups in shuffled order, G groups per batch.

    The last batch may hold fewer groups.
    """
    groups, k = check_sampler(dataset, config)
    members = dataset.groups()
    order = _epoch_order(dataset, groups, members, config.group_order, rng)
    for start in range(0, len(order), config.groups_per_batch):
        chunk = order[start : start + config.groups_per_batch]
        idx = np.concatenate([_pick_views(members, g, k, rng) for g in chunk])
        yield augment_pairs(dataset, idx, rng, augment_config)


def labeled_batches(
    dataset: MultiViewDataset,
    batch_size: int,
    rng: np.random.Generator,
    augment_config: Optional[AugmentConfig] = None,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Shuffled (images CHW, labels) minibatches; one augmentation per image when configured."""
    labels = dataset.labels
    order = rng.permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        if augment_config is None:
            imgs = dataset.chw_images(idx)
        else:
            imgs = np.stack([augment(dataset.images[i], rng, augment_config) for i in idx])
            imgs = np.ascontiguousarray(imgs.transpose(0, 3, 1, 2))
        yield imgs, labels[idx]

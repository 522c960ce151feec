from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    subject_id: str
    expression: Optional[int]
    view_angle_deg: int
    session_id: str
    view_invariant_id: int


@dataclass
class MultiViewDataset:
    """Images (n, H, W, C) in [0, 1] with per-image metadata arrays.

    ``view_invariant_ids`` index (subject, session) captures. ``expressions``
    is None for a label-stripped copy; anything that reads labels from such a
    copy fails loudly.
    """

    images: np.ndarray
    subject_ids: np.ndarray
    session_ids: np.ndarray
    view_angles: np.ndarray
    expressions: Optional[np.ndarray]
    expression_vocabulary: list[str]
    view_set: list[int]
    view_invariant_ids: np.ndarray = None

    def __post_init__(self):
        n = len(self.images)
        for name in ("subject_ids", "session_ids", "view_angles"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries for {n} images")
        if self.expressions is not None and len(self.expressions) != n:
            raise ValueError("expressions length does not match images")
        if self.view_invariant_ids is None:
            keys = list(zip(self.subject_ids.tolist(), self.session_ids.tolist()))
            lookup: dict[tuple, int] = {}
            self.view_invariant_ids = np.array([lookup.setdefault(k, len(lookup)) for k in keys], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return len(self.expression_vocabulary)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    @property
    def labels(self) -> np.ndarray:
        if self.expressions is None:
            raise PermissionError("labels were stripped from this dataset")
        return self.expressions

    def without_labels(self) -> "MultiViewDataset":
        return replace(self, expressions=None)

    def subset(self, indices: Sequence[int]) -> "MultiViewDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return MultiViewDataset(
            images=self.images[idx],
            subject_ids=self.subject_ids[idx],
            session_ids=self.session_ids[idx],
            view_angles=self.view_angles[idx],
            expressions=None if self.expressions is None else self.expressions[idx],
            expression_vocabulary=list(self.expression_vocabulary),
            view_set=list(self.view_set),
            view_invariant_ids=self.view_invariant_ids[idx],
        )

    def sample(self, i: int) -> Sample:
        return Sample(
            image=self.images[i],
            subject_id=str(self.subject_ids[i]),
            expression=None if self.expressions is None else int(self.expressions[i]),
            view_angle_deg=int(self.view_angles[i]),
            session_id=str(self.session_ids[i]),
            view_invariant_id=int(self.view_invariant_ids[i]),
        )

    def __iter__(self) -> Iterator[Sample]:
        return (self.sample(i) for i in range(len(self)))

    def groups(self) -> dict[int, np.ndarray]:
        """view_invariant_id -> indices of its images, in dataset order."""
        out: dict[int, list[int]] = {}
        for i, g in enumerate(self.view_invariant_ids.tolist()):
            out.setdefault(g, []).append(i)
        return {g: np.array(v, dtype=np.int64) for g, v in out.items()}

    def chw_images(self, indices=None) -> np.ndarray:
        imgs = self.images if indices is None else self.images[indices]
        return np.ascontiguousarray(imgs.transpose(0, 3, 1, 2))


def split_by_subject(
    dataset: MultiViewDataset, test_fraction: float, rng: np.random.Generator
) -> tuple[MultiViewDataset, MultiViewDataset]:
    """Subject-disjoint train/test split; at least one subject on each side."""
    subjects = sorted(set(dataset.subject_ids.tolist()))
    if len(subjects) < 2:
        raise ValueError("need at least two subjects for a subject-disjoint split")
    order = rng.permutation(len(subjects))
    n_test = min(max(1, int(round(test_fraction * len(subjects)))), len(subjects) - 1)
    test_subjects = {subjects[i] for i in order[:n_test]}
    is_test = np.array([s in test_subjects for s in dataset.subject_ids.tolist()])
    return dataset.subset(np.flatnonzero(~is_test)), dataset.subset(np.flatnonzero(is_test))


def subject_folds(dataset: MultiViewDataset, k: int, rng: np.random.Generator):
    """Yield k subject-disjoint (train, test) pairs."""
    subjects = sorted(set(dataset.subject_ids.tolist()))
    if k < 2 or k > len(subjects):
        raise ValueError(f"k={k} folds impossible with {len(subjects)} subjects")
    perm = [subjects[i] for i in rng.permutation(len(subjects))]
    for fold in range(k):
        held = set(perm[fold::k])
        is_test = np.array([s in held for s in dataset.subject_ids.tolist()])
        yield dataset.subset(np.flatnonzero(~is_test)), dataset.subset(np.flatnonzero(is_test))

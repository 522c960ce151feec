from __future__ import annotations

import numpy as np

from ..data.dataset import MultiViewDataset
from ..tensor import no_grad


def embed(encoder, dataset: MultiViewDataset, batch_size: int = 128) -> np.ndarray:
    """Encoder outputs for every image, no graph recorded."""
    out = []
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            idx = np.arange(start, min(start + batch_size, len(dataset)))
            out.append(encoder(dataset.chw_images(idx)).data)
    return np.concatenate(out)


def invariance_from_embeddings(R: np.ndarray, group_ids: np.ndarray) -> float:
    """Mean cosine similarity within groups (i != j) minus mean across groups."""
    norms = np.linalg.norm(R, axis=1, keepdims=True)
    U = R / np.maximum(norms, 1e-12)
    cos = U @ U.T
    same = group_ids[:, None] == group_ids[None, :]
    np.fill_diagonal(same, False)
    diff = group_ids[:, None] != group_ids[None, :]
    within = cos[same].mean() if same.any() else 0.0
    across = cos[diff].mean() if diff.any() else 0.0
    return float(within - across)


def view_invariance_diagnostic(encoder, dataset: MultiViewDataset) -> float:
    """Higher means views of one capture embed closer than unrelated images."""
    return invariance_from_embeddings(embed(encoder, dataset), dataset.view_invariant_ids)

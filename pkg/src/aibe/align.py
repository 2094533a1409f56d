"""Stage 2: align the semantic embedding with the frozen visual space.

Seen classes pull their semantic row towards the (renormalised) mean student
embedding of the class.  Unseen samples pull their most similar unseen
semantic row towards themselves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agae import EMBED_KINDS, semantic_backward, semantic_forward
from .datakit import Dataset
from .numkit import ShapeError, row_l2_normalize
from .visual_mt import Adam


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class CategoryCenters:
    class_ids: list[int]
    centers: np.ndarray
    counts: list[int]


def category_centers(v_seen: np.ndarray, labels, class_ids: list[int] | None = None) -> CategoryCenters:
    labels = np.asarray(labels, dtype=np.int64)
    if class_ids is None:
        class_ids = sorted(set(labels.tolist()))
    rows, counts = [], []
    for c in class_ids:
        mask = labels == c
        n = int(mask.sum())
        if n == 0:
            raise AlignmentError(f"seen class {c} has no samples")
        rows.append(v_seen[mask].mean(axis=0))
        counts.append(n)
    return CategoryCenters(list(class_ids), row_l2_normalize(np.array(rows)), counts)


def _check_rows(centers: CategoryCenters, s_seen: np.ndarray) -> None:
    if s_seen.shape != centers.centers.shape:
        raise AlignmentError(
            f"semantic rows {s_seen.shape} do not line up with {centers.centers.shape} class centres")


def seen_alignment_loss(centers: CategoryCenters, s_seen: np.ndarray) -> float:
    """Mean squared distance between each class centre and its semantic row.

    ``s_seen`` must be ordered like ``centers.class_ids``.
    """
    _check_rows(centers, s_seen)
    d = centers.centers - s_seen
    return float(np.mean(np.sum(d * d, axis=1)))


def seen_alignment_grad(centers: CategoryCenters, s_seen: np.ndarray) -> np.ndarray:
    _check_rows(centers, s_seen)
    return 2.0 * (s_seen - centers.centers) / s_seen.shape[0]


def unseen_assignments(v_unseen: np.ndarray, s_unseen: np.ndarray) -> np.ndarray:
    """Index of the most cosine-similar semantic row per sample; ties go to the lowest index."""
    if v_unseen.shape[0] == 0:
        raise AlignmentError("no unseen samples")
    if s_unseen.shape[0] == 0:
        raise AlignmentError("no unseen semantic rows")
    if v_unseen.shape[1] != s_unseen.shape[1]:
        raise ShapeError(f"embedding dims differ: {v_unseen.shape[1]} vs {s_unseen.shape[1]}")
    return np.argmax(v_unseen @ s_unseen.T, axis=1)


def unseen_alignment_loss(v_unseen: np.ndarray, s_unseen: np.ndarray) -> float:
    """Mean of ``1 - max_j cos(v_i, s_j)`` over unseen samples (unit-norm inputs)."""
    j = unseen_assignments(v_unseen, s_unseen)
    best = np.sum(v_unseen * s_unseen[j], axis=1)
    return float(np.mean(1.0 - best))


def unseen_alignment_grad(v_unseen: np.ndarray, s_unseen: np.ndarray) -> np.ndarray:
    """Subgradient with respect to ``s_unseen``; only the selected rows receive signal."""
    j = unseen_assignments(v_unseen, s_unseen)
    g = np.zeros_like(s_unseen)
    np.add.at(g, j, -v_unseen / v_unseen.shape[0])
    return g


def semantic_total_loss(l_ssa: float, l_usa: float, omega3: float) -> float:
    return l_ssa + omega3 * l_usa


@dataclass(frozen=True)
class AlignConfig:
    omega3: float = 1.0
    epochs: int = 200
    lr: float = 1e-3
    use_usa: bool = True
    embed_kind: str = "AGAE"
    batch_size: int | None = None  # unseen samples per step; None = full batch

    def __post_init__(self):
        if self.omega3 < 0:
            raise ValueError("omega3 must be >= 0")
        if self.embed_kind not in EMBED_KINDS:
            raise ValueError(f"embed_kind must be one of {EMBED_KINDS}")


def semantic_loss_and_grads(params, ds: Dataset, centers: CategoryCenters, v_unseen: np.ndarray,
                            omega3: float, use_usa: bool):
    """Return ``(l_ssa, l_usa, grads)`` for ``l_ssa + omega3 * l_usa`` (USA term only if ``use_usa``)."""
    s, cache = semantic_forward(params, ds.attributes)
    seen_idx = np.asarray(centers.class_ids)
    unseen_idx = np.asarray(ds.unseen_class_ids)
    g = np.zeros_like(s)
    l_ssa = seen_alignment_loss(centers, s[seen_idx])
    g[seen_idx] += seen_alignment_grad(centers, s[seen_idx])
    l_usa = 0.0
    if len(v_unseen):
        l_usa = unseen_alignment_loss(v_unseen, s[unseen_idx])
        if use_usa and omega3 != 0.0:
            g[unseen_idx] += omega3 * unseen_alignment_grad(v_unseen, s[unseen_idx])
    return l_ssa, l_usa, semantic_backward(params, ds.attributes, cache, g)


def train_semantic_epoch(params, ds: Dataset, centers: CategoryCenters, v_unseen: np.ndarray,
                         cfg: AlignConfig, optimizer: Adam, rng: np.random.Generator | None = None):
    """One epoch of Adam on the alignment objective; only semantic weights change.

    Full batch by default: a single step per epoch.  With ``cfg.batch_size`` the
    unseen samples are split into shuffled batches (``rng`` required).
    """
    named = params.named()
    if cfg.batch_size is None or len(v_unseen) <= cfg.batch_size:
        batches = [v_unseen]
    else:
        order = rng.permutation(len(v_unseen))
        batches = [v_unseen[order[i:i + cfg.batch_size]] for i in range(0, len(v_unseen), cfg.batch_size)]
    l_ssa = l_usa = 0.0
    for vb in batches:
        a, b, grads = semantic_loss_and_grads(params, ds, centers, vb, cfg.omega3, cfg.use_usa)
        optimizer.step(named, grads)
        l_ssa += a / len(batches)
        l_usa += b / len(batches)
    omega3 = cfg.omega3 if cfg.use_usa else 0.0
    return params, {"l_ssa": l_ssa, "l_usa": l_usa, "total": semantic_total_loss(l_ssa, l_usa, omega3)}


def fit_semantic(params, ds: Dataset, centers: CategoryCenters, v_unseen: np.ndarray, cfg: AlignConfig,
                 rng: np.random.Generator | None = None, on_epoch=None):
    opt = Adam(lr=cfg.lr)
    for epoch in range(1, cfg.epochs + 1):
        params, metrics = train_semantic_epoch(params, ds, centers, v_unseen, cfg, opt, rng)
        if on_epoch is not None:
            on_epoch(epoch, metrics)
    return params

"""Spatial-pyramid linear baseline and score fusion.

The pyramid vector concatenates sqrt-of-L1-normalized cell histograms over a
set of c x c levels, with one trailing bias slot of -1; a linear weight vector
over it is trained with the same hinge SGD loop as the parts model, acting as
a single global part.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import FeatureError, TrainingError
from .features import FeatureTensor, region_features_batch
from .training import compute_rates

if TYPE_CHECKING:
    from .training import TrainConfig

__all__ = ["spm_feature", "train_linear", "fuse_scores", "DEFAULT_LEVELS"]

DEFAULT_LEVELS = (1, 2, 3, 4)


def _level_cells(tensor: FeatureTensor, c: int):
    g = tensor.grid
    if (g.s - 1) % c or (g.t - 1) % c:
        raise FeatureError(
            f"{c}x{c} pyramid level needs grid cell counts divisible by {c}, "
            f"got {g.s - 1}x{g.t - 1}"
        )
    sx, sy = (g.s - 1) // c, (g.t - 1) // c
    # row-major: rows (y) outer, columns (x) inner
    return [
        g.location_from_indices(i * sx, j * sy, (i + 1) * sx, (j + 1) * sy)
        for j in range(c)
        for i in range(c)
    ]


def spm_feature(
    tensor: FeatureTensor, cell_grids: Sequence[int] = DEFAULT_LEVELS
) -> np.ndarray:
    """Pyramid vector over c x c levels: per-cell appearance blocks in level
    order then row-major cell order, plus a single trailing -1 bias slot.

    Every cell boundary must land on the tensor's grid, i.e. the grid's cell
    counts must be divisible by each requested c.
    """
    if not cell_grids:
        raise FeatureError("need at least one pyramid level")
    blocks = []
    for c in cell_grids:
        cells = _level_cells(tensor, c)
        feats = region_features_batch(tensor, cells)
        blocks.append(feats[:, :-1].reshape(-1))
    return np.concatenate(blocks + [np.array([-1.0])])


def train_linear(
    vectors: Sequence[np.ndarray], labels: Sequence[int], cfg: "TrainConfig"
) -> np.ndarray:
    """Hinge-loss SGD over whole-image vectors, sharing the parts trainer's
    loop shape: asymmetric class rates, shrinkage by eta*lambda, shuffled
    passes, and one annealing step.  Deterministic given cfg.seed."""
    x = np.asarray(vectors, dtype=np.float64)
    y = np.asarray([int(v) for v in labels])
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise TrainingError("vectors and labels must align")
    m_pos = int((y > 0).sum())
    m_neg = int((y < 0).sum())
    if m_pos == 0 or m_neg == 0:
        raise TrainingError("need at least one example of each class")
    rng = np.random.default_rng(cfg.seed)
    w = np.zeros(x.shape[1])
    eta_base = cfg.eta0
    for iteration in range(1, cfg.outer_iters + 1):
        eta_pos, eta_neg = compute_rates(eta_base, m_pos, m_neg)
        for _ in range(cfg.passes_per_iter):
            for i in rng.permutation(len(y)):
                eta = eta_pos if y[i] > 0 else eta_neg
                violated = y[i] * float(w @ x[i]) < 1.0
                w *= 1.0 - eta * cfg.lam
                if violated:
                    w += y[i] * eta * x[i]
        if iteration == cfg.anneal_at:
            eta_base /= cfg.anneal_factor
    return w


def fuse_scores(a: float, b: float) -> float:
    """Combine two classifier scores for one image by addition."""
    return a + b

"""Stochastic sub-gradient training with part mining and pruning.

The trainer initializes a highly redundant model from random grid-aligned
candidate regions of the positive images, then alternates scoring (greedy
selection with the sample's own source excluded) and hinge sub-gradient
updates over shuffled passes.  Parts never selected during an iteration are
pruned, and the base rate is annealed once part-way through.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import TrainingError
from .features import FeatureTensor, region_features_batch
from .geometry import Grid, PartLocation, sample_candidate_locations
from .metrics import average_precision
from .model import DEFAULT_BETA, EpmModel, Part, Selection, greedy_select, score_greedy
from .model import _mean as _selection_mean

__all__ = [
    "TrainConfig",
    "TrainLog",
    "compute_rates",
    "sgd_step",
    "prune_parts",
    "train_epm",
    "objective_value",
]

# UsageMap: boolean flags aligned with model.parts, true once a part has been
# chosen by any selection in the current outer iteration.
UsageMap = np.ndarray


@dataclass
class TrainConfig:
    """All learning hyperparameters; defaults follow the reference setup."""

    eta0: float = 0.05
    lam: float = 1e-5
    k: int = 100
    n: int = 200
    beta: float = DEFAULT_BETA
    outer_iters: int = 10
    passes_per_iter: int = 5
    anneal_at: int = 5
    anneal_factor: float = 5.0
    seed: int = 0
    unique_sources: bool = True
    min_cells: int = 2

    def __post_init__(self) -> None:
        positive = {
            "eta0": self.eta0,
            "lam": self.lam,
            "k": self.k,
            "n": self.n,
            "outer_iters": self.outer_iters,
            "passes_per_iter": self.passes_per_iter,
            "anneal_at": self.anneal_at,
            "anneal_factor": self.anneal_factor,
            "min_cells": self.min_cells,
        }
        for name, value in positive.items():
            if value <= 0:
                raise TrainingError(f"{name} must be positive, got {value}")
        if not 0.0 < self.beta <= 1.0:
            raise TrainingError(f"beta must be in (0, 1], got {self.beta}")
        if self.anneal_at > self.outer_iters:
            raise TrainingError(
                f"anneal_at {self.anneal_at} exceeds outer_iters {self.outer_iters}"
            )


@dataclass
class TrainLog:
    """Per-outer-iteration trace: objective, surviving part count, train AP."""

    iterations: list[int] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)
    part_counts: list[int] = field(default_factory=list)
    train_aps: list[float] = field(default_factory=list)

    def append(self, iteration: int, objective: float, parts: int, ap: float) -> None:
        self.iterations.append(iteration)
        self.objectives.append(objective)
        self.part_counts.append(parts)
        self.train_aps.append(ap)


def compute_rates(eta0: float, m_pos: int, m_neg: int) -> tuple[float, float]:
    """Per-class rates proportional to the opposite class's share, so that
    eta_pos * m_pos == eta_neg * m_neg."""
    if m_pos < 1 or m_neg < 1:
        raise TrainingError("need at least one example of each class")
    m = m_pos + m_neg
    return eta0 * m_neg / m, eta0 * m_pos / m


def sgd_step(
    stack: np.ndarray,
    sel: Selection,
    features: np.ndarray,
    y: int,
    eta: float,
    lam: float,
) -> np.ndarray:
    """One hinge sub-gradient step on the full template stack, in place.

    Every template shrinks by (1 - eta*lam); when the margin is violated
    (y * score < 1) the chosen parts additionally move along their region
    features, scaled by 1/|chosen| to match the mean in the scoring function.
    `features` holds the chosen parts' region features, row-aligned with
    sel.chosen.
    """
    delta = 1.0 if y * sel.score < 1.0 else 0.0
    stack *= 1.0 - eta * lam
    if delta:
        stack[list(sel.chosen)] += (y * eta / len(sel.chosen)) * features
    return stack


def prune_parts(model: EpmModel, used: UsageMap) -> EpmModel:
    """Keep exactly the parts flagged used, preserving order and sources."""
    used = np.asarray(used, dtype=bool)
    if used.shape != (len(model.parts),):
        raise TrainingError(
            f"usage map length {used.shape} does not match {len(model.parts)} parts"
        )
    kept = [p for p, flag in zip(model.parts, used) if flag]
    if not kept:
        raise TrainingError("pruning would remove every part")
    return EpmModel(parts=kept, grid=model.grid, d=model.d, k=model.k, beta=model.beta)


def _check_tensors(tensors: Sequence[FeatureTensor]) -> tuple[Grid, int]:
    grid, d = tensors[0].grid, tensors[0].d
    for t in tensors[1:]:
        if t.grid != grid or t.d != d:
            raise TrainingError("all feature tensors must share one grid and word count")
    return grid, d


def _regularizer(stack: np.ndarray, lam: float) -> float:
    return 0.5 * lam * float((stack * stack).sum())


class _ScoringCache:
    """Per-image region features for the distinct candidate locations.

    Locations are fixed at initialization, so each (image, location) feature
    is computed once; parts index rows of the per-image matrix.
    """

    def __init__(self, tensors: Sequence[FeatureTensor], locations: list[PartLocation]):
        distinct: dict[PartLocation, int] = {}
        for loc in locations:
            if loc not in distinct:
                distinct[loc] = len(distinct)
        self.row_of = np.array([distinct[loc] for loc in locations], dtype=np.int64)
        ordered = list(distinct)
        self.features = [region_features_batch(t, ordered) for t in tensors]


def _greedy_on_cache(
    cache: _ScoringCache,
    image: int,
    stack: np.ndarray,
    feat_rows: np.ndarray,
    boxes: np.ndarray,
    sources: np.ndarray,
    cfg: TrainConfig,
) -> Selection:
    feats = cache.features[image][feat_rows]
    scores = np.einsum("nd,nd->n", stack, feats)
    chosen, part_scores = greedy_select(
        scores, boxes, sources, cfg.k, cfg.beta,
        excluded_sources={image}, unique_sources=cfg.unique_sources,
    )
    if not chosen:
        raise TrainingError(f"no selectable part for training image {image}")
    return Selection(tuple(chosen), tuple(part_scores), _selection_mean(part_scores))


def train_epm(
    tensors: Sequence[FeatureTensor],
    labels: Sequence[int],
    cfg: TrainConfig,
    prune_hook: Callable[[int, EpmModel, EpmModel], None] | None = None,
    verbose: bool = True,
) -> tuple[EpmModel, TrainLog]:
    """Learn an expanded parts model from per-image feature tensors.

    Candidates are sampled from the positive images (n grid-aligned boxes
    each, degenerate empty regions dropped); training images are scored with
    their own index excluded so a part never scores the image it came from.
    Usage is noted from every selection made during an iteration, including
    the end-of-iteration logging sweep, and unused parts are pruned before the
    next iteration.  One seeded generator drives sampling and shuffling, so
    identical configs give identical models and logs.

    `prune_hook(iteration, model_before, model_after)` runs after each prune.
    Progress goes to stderr when `verbose`.
    """
    if len(tensors) != len(labels):
        raise TrainingError("tensors and labels must have equal length")
    if not tensors:
        raise TrainingError("empty training set")
    labels = [int(y) for y in labels]
    if any(y not in (-1, 1) for y in labels):
        raise TrainingError("labels must be +1 or -1")
    positives = [i for i, y in enumerate(labels) if y > 0]
    m_pos, m_neg = len(positives), len(labels) - len(positives)
    if m_pos == 0 or m_neg == 0:
        raise TrainingError("need at least one positive and one negative example")
    grid, d = _check_tensors(tensors)

    rng = np.random.default_rng(cfg.seed)
    locations: list[PartLocation] = []
    sources: list[int] = []
    for q in positives:
        for loc in sample_candidate_locations(grid, cfg.n, cfg.min_cells, rng):
            locations.append(loc)
            sources.append(q)

    cache = _ScoringCache(tensors, locations)
    alive = [
        i for i in range(len(locations))
        if np.any(cache.features[sources[i]][cache.row_of[i]][:-1])
    ]
    if not alive:
        raise TrainingError("every candidate region was degenerate")
    locations = [locations[i] for i in alive]
    source_arr = np.array([sources[i] for i in alive], dtype=np.int64)
    feat_rows = cache.row_of[alive]
    boxes = np.array([[l.x1, l.y1, l.x2, l.y2] for l in locations])
    # template init: [2*appearance, 1]; feature rows carry bias -1 at the end
    stack = np.empty((len(locations), d + 1))
    for p in range(len(locations)):
        feat = cache.features[source_arr[p]][feat_rows[p]]
        stack[p, :-1] = 2.0 * feat[:-1]
        stack[p, -1] = 1.0

    def build_model() -> EpmModel:
        parts = [
            Part(template=stack[p].copy(), location=locations[p],
                 source_image=int(source_arr[p]))
            for p in range(len(locations))
        ]
        return EpmModel(parts=parts, grid=grid, d=d, k=cfg.k, beta=cfg.beta)

    log = TrainLog()
    eta_base = cfg.eta0
    m = len(labels)
    labels_arr = np.array(labels)
    for iteration in range(1, cfg.outer_iters + 1):
        eta_pos, eta_neg = compute_rates(eta_base, m_pos, m_neg)
        used = np.zeros(len(locations), dtype=bool)
        for _ in range(cfg.passes_per_iter):
            for i in rng.permutation(m):
                sel = _greedy_on_cache(cache, i, stack, feat_rows, boxes, source_arr, cfg)
                used[list(sel.chosen)] = True
                feats = cache.features[i][feat_rows[list(sel.chosen)]]
                eta = eta_pos if labels[i] > 0 else eta_neg
                sgd_step(stack, sel, feats, labels[i], eta, cfg.lam)

        # logging sweep with the end-of-iteration model; its selections also
        # count as usage, which is what makes pruning provably selection-safe
        sweep_scores = np.empty(m)
        hinges = np.empty(m)
        for i in range(m):
            sel = _greedy_on_cache(cache, i, stack, feat_rows, boxes, source_arr, cfg)
            used[list(sel.chosen)] = True
            sweep_scores[i] = sel.score
            hinges[i] = max(0.0, 1.0 - labels[i] * sel.score)

        before = build_model()
        after = prune_parts(before, used)
        if prune_hook is not None:
            prune_hook(iteration, before, after)
        keep = np.flatnonzero(used)
        stack = stack[keep]
        locations = [locations[i] for i in keep]
        source_arr = source_arr[keep]
        feat_rows = feat_rows[keep]
        boxes = boxes[keep]

        objective = _regularizer(stack, cfg.lam) + float(np.mean(hinges))
        train_ap = average_precision(sweep_scores, labels_arr)
        log.append(iteration, objective, len(locations), train_ap)
        if verbose:
            print(
                f"iter {iteration:3d}  objective {objective:.6f}  "
                f"parts {len(locations):6d}  train AP {train_ap:.4f}",
                file=sys.stderr,
            )
        if iteration == cfg.anneal_at:
            eta_base /= cfg.anneal_factor

    return build_model(), log


def objective_value(
    model: EpmModel,
    tensors: Sequence[FeatureTensor],
    labels: Sequence[int],
    lam: float,
    unique_sources: bool = True,
) -> float:
    """Regularized hinge objective with train-time exclusions: each image is
    scored with its own index excluded from the part sources."""
    hinges = np.empty(len(tensors))
    for i, tensor in enumerate(tensors):
        sel = score_greedy(model, tensor, excluded_sources={i},
                           unique_sources=unique_sources)
        hinges[i] = max(0.0, 1.0 - int(labels[i]) * sel.score)
    return _regularizer(model.template_matrix(), lam) + float(np.mean(hinges))

"""The expanded parts model: part templates at scale-space locations, scored
by greedily selecting a sparse non-overlapping subset.

An image's score is the mean template response over a chosen subset of at
most k parts whose locations pairwise overlap (IoU) at most beta.  The greedy
selection repeatedly takes the best-scoring feasible part; an exhaustive
enumerator over small models serves as its correctness oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FeatureError, FileFormatError, EmptyRegionError, SelectionError
from .features import FeatureTensor, region_feature, region_features_batch
from .geometry import Grid, PartLocation, iou_against, pairwise_iou

__all__ = [
    "Part",
    "EpmModel",
    "Selection",
    "init_part",
    "part_score",
    "score_greedy",
    "score_exact",
    "greedy_select",
    "save_model",
    "load_model",
    "DEFAULT_BETA",
]

# two parts may be co-selected only while their IoU stays at or below this
DEFAULT_BETA = 1.0 / 3.0


@dataclass
class Part:
    """One discriminative template: d appearance weights plus a bias weight,
    tied to a fixed grid-aligned location and the training image it came from."""

    template: np.ndarray
    location: PartLocation
    source_image: int


@dataclass
class EpmModel:
    parts: list[Part]
    grid: Grid
    d: int
    k: int
    beta: float = DEFAULT_BETA

    def __post_init__(self) -> None:
        if self.k < 1:
            raise SelectionError(f"selection budget k must be >= 1, got {self.k}")
        if not 0.0 < self.beta <= 1.0:
            raise SelectionError(f"beta must be in (0, 1], got {self.beta}")
        for p in self.parts:
            if p.template.shape != (self.d + 1,):
                raise FeatureError(
                    f"template shape {p.template.shape} != ({self.d + 1},)"
                )

    def template_matrix(self) -> np.ndarray:
        """(N, d+1) stack of part templates."""
        if not self.parts:
            return np.empty((0, self.d + 1))
        return np.stack([p.template for p in self.parts])

    def location_boxes(self) -> np.ndarray:
        """(N, 4) array of [x1, y1, x2, y2] fractional boxes."""
        return np.array(
            [[p.location.x1, p.location.y1, p.location.x2, p.location.y2]
             for p in self.parts]
        ).reshape(len(self.parts), 4)

    def sources(self) -> np.ndarray:
        return np.array([p.source_image for p in self.parts], dtype=np.int64)


@dataclass(frozen=True)
class Selection:
    """Support of the selection coefficients: chosen part indices in pick
    order, their individual scores, and the mean aggregate score."""

    chosen: tuple[int, ...]
    part_scores: tuple[float, ...]
    score: float


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def init_part(tensor: FeatureTensor, loc: PartLocation, source: int) -> Part:
    """Template [2 * appearance, 1] so the part scores exactly 1 on its own
    source region and -1 on an orthogonal one."""
    rf = region_feature(tensor, loc)
    if not np.any(rf.appearance):
        raise EmptyRegionError(f"region {loc} contains no descriptors")
    template = np.append(2.0 * rf.appearance, 1.0)
    return Part(template=template, location=loc, source_image=source)


def part_score(part: Part, tensor: FeatureTensor) -> float:
    """Template response on the part's own location: w . [appearance, -1]."""
    feat = region_feature(tensor, part.location).as_vector()
    if feat.shape != part.template.shape:
        raise FeatureError(
            f"feature dimension {feat.shape[0]} != template dimension "
            f"{part.template.shape[0]}"
        )
    return float(part.template @ feat)


def greedy_select(
    scores: np.ndarray,
    boxes: np.ndarray,
    sources: np.ndarray,
    k: int,
    beta: float,
    excluded_sources: frozenset[int] | set[int] = frozenset(),
    unique_sources: bool = False,
) -> tuple[list[int], list[float]]:
    """Greedy core shared by public scoring and the trainer.

    Repeatedly picks the highest-scoring feasible part (ties to the lowest
    index), masking parts that overlap a chosen one beyond beta, share a
    chosen part's source (when unique_sources), or come from an excluded
    source.  Stops at k picks or when nothing is feasible.
    """
    n = len(scores)
    feasible = np.ones(n, dtype=bool)
    if excluded_sources:
        feasible &= ~np.isin(sources, list(excluded_sources))
    chosen: list[int] = []
    chosen_scores: list[float] = []
    while len(chosen) < k and feasible.any():
        masked = np.where(feasible, scores, -np.inf)
        best = int(masked.argmax())
        chosen.append(best)
        chosen_scores.append(float(scores[best]))
        loc = PartLocation(*boxes[best])
        feasible &= iou_against(loc, boxes) <= beta
        feasible[best] = False
        if unique_sources:
            feasible &= sources != sources[best]
    return chosen, chosen_scores


def score_greedy(
    model: EpmModel,
    tensor: FeatureTensor,
    excluded_sources: frozenset[int] | set[int] = frozenset(),
    unique_sources: bool = False,
) -> Selection:
    """Score an image by greedy sparse part selection.

    Raises SelectionError when every part is excluded or the model is empty.
    The aggregate score is the mean over chosen parts, whatever their count.
    """
    if not model.parts:
        raise SelectionError("cannot score with an empty model")
    feats = region_features_batch(tensor, [p.location for p in model.parts])
    scores = np.einsum("nd,nd->n", model.template_matrix(), feats)
    chosen, part_scores = greedy_select(
        scores,
        model.location_boxes(),
        model.sources(),
        model.k,
        model.beta,
        excluded_sources,
        unique_sources,
    )
    if not chosen:
        raise SelectionError("no part selectable: all excluded or infeasible")
    return Selection(
        chosen=tuple(chosen),
        part_scores=tuple(part_scores),
        score=_mean(part_scores),
    )


_ENUMERATION_LIMIT = 20


def score_exact(model: EpmModel, tensor: FeatureTensor, cardinality: int) -> Selection:
    """Exhaustive oracle: best mean score over all feasible subsets of
    exactly `cardinality` parts (pairwise IoU <= beta; no source constraints).

    Ties between subsets break toward the lexicographically smallest index
    tuple.  Guarded to models of at most 20 parts.
    """
    n = len(model.parts)
    if n > _ENUMERATION_LIMIT:
        raise SelectionError(f"{n} parts exceed the {_ENUMERATION_LIMIT}-part enumeration guard")
    if not 1 <= cardinality <= n:
        raise SelectionError(f"no subset of cardinality {cardinality} in {n} parts")
    feats = region_features_batch(tensor, [p.location for p in model.parts])
    scores = np.einsum("nd,nd->n", model.template_matrix(), feats)
    overlap = pairwise_iou([p.location for p in model.parts])
    best: tuple[int, ...] | None = None
    best_score = -np.inf
    for subset in combinations(range(n), cardinality):
        if any(overlap[a, b] > model.beta for a, b in combinations(subset, 2)):
            continue
        mean = _mean([float(scores[i]) for i in subset])
        if mean > best_score:
            best, best_score = subset, mean
    if best is None:
        raise SelectionError(f"no feasible subset of cardinality {cardinality}")
    return Selection(
        chosen=best,
        part_scores=tuple(float(scores[i]) for i in best),
        score=best_score,
    )


# ---------------------------------------------------------------------------
# model file format

_MODEL_MAGIC = "EPMMD"
_MODEL_VERSION = 1


def save_model(model: EpmModel, path: str | Path) -> None:
    """Text format: header ``EPMMD 1 <N> <d> <s> <t> <k> <beta>``, then per
    part one location/source line and one template line (17 significant
    digits, lossless for float64)."""
    g = model.grid
    lines = [
        f"{_MODEL_MAGIC} {_MODEL_VERSION} {len(model.parts)} {model.d} "
        f"{g.s} {g.t} {model.k} {model.beta:.17g}"
    ]
    for p in model.parts:
        loc = p.location
        lines.append(
            f"{loc.x1:.17g} {loc.y1:.17g} {loc.x2:.17g} {loc.y2:.17g} {p.source_image}"
        )
        lines.append(" ".join(f"{v:.17g}" for v in p.template))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_model(path: str | Path) -> EpmModel:
    try:
        lines = Path(path).read_text(encoding="ascii").splitlines()
    except OSError as exc:
        raise FileFormatError(f"unreadable model {path}: {exc}") from None
    if not lines:
        raise FileFormatError(f"empty model file {path}")
    header = lines[0].split()
    if not header or header[0] != _MODEL_MAGIC:
        raise FileFormatError(f"unknown model format in {path}")
    if len(header) != 8:
        raise FileFormatError(f"corrupt model header in {path}")
    if header[1] != str(_MODEL_VERSION):
        raise FileFormatError(f"unsupported model version {header[1]} in {path}")
    n, d, s, t, k = (int(v) for v in header[2:7])
    beta = float(header[7])
    if len(lines) < 1 + 2 * n:
        raise FileFormatError(f"corrupt model {path}: expected {2 * n} part lines")
    grid = Grid(s=s, t=t)
    parts = []
    for p in range(n):
        loc_fields = lines[1 + 2 * p].split()
        if len(loc_fields) != 5:
            raise FileFormatError(f"corrupt model {path}: bad location line {p}")
        x1, y1, x2, y2 = (float(v) for v in loc_fields[:4])
        source = int(loc_fields[4])
        template = np.array([float(v) for v in lines[2 + 2 * p].split()])
        if template.shape != (d + 1,):
            raise FileFormatError(f"corrupt model {path}: bad template line {p}")
        location = PartLocation(x1, y1, x2, y2)
        grid.location_indices(location)  # must be grid-aligned
        parts.append(Part(template=template, location=location, source_image=source))
    return EpmModel(parts=parts, grid=grid, d=d, k=k, beta=beta)

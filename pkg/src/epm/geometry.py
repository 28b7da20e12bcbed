"""Fractional scale-space part locations on a regular grid.

A part location is a box in [0,1]^4 given as fractions of image width and
height.  A grid carries s x t lattice points (uniformly spaced, endpoints
included), so an s-point axis has s-1 cells.  Part locations used with
integral feature tensors must have all four coordinates on the lattice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError

__all__ = [
    "PartLocation",
    "Grid",
    "iou",
    "align_to_grid",
    "sample_candidate_locations",
]

# Tolerance when matching a fractional coordinate to a lattice point.  Lattice
# fractions are reproduced exactly by the model file round trip, so this only
# has to absorb no-op float noise, never to bridge adjacent lattice points.
_LATTICE_TOL = 1e-9


@dataclass(frozen=True)
class PartLocation:
    """Fractional box: 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if any(c < 0.0 or c > 1.0 for c in coords):
            raise GeometryError(f"coordinates outside [0,1]: {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise GeometryError(f"degenerate box: {coords}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class Grid:
    """Uniform lattice with s points along x and t along y (both >= 2)."""

    s: int = 17
    t: int = 17

    def __post_init__(self) -> None:
        if self.s < 2 or self.t < 2:
            raise GeometryError(f"grid needs at least 2 lattice points per axis, got {self.s}x{self.t}")

    def x_fraction(self, i: int) -> float:
        return i / (self.s - 1)

    def y_fraction(self, j: int) -> float:
        return j / (self.t - 1)

    def x_index(self, frac: float) -> int:
        """Exact lattice index of an x fraction; raises if off-lattice."""
        i = int(round(frac * (self.s - 1)))
        if not 0 <= i <= self.s - 1 or abs(frac - self.x_fraction(i)) > _LATTICE_TOL:
            raise GeometryError(f"x coordinate {frac} is not on the {self.s}-point lattice")
        return i

    def y_index(self, frac: float) -> int:
        j = int(round(frac * (self.t - 1)))
        if not 0 <= j <= self.t - 1 or abs(frac - self.y_fraction(j)) > _LATTICE_TOL:
            raise GeometryError(f"y coordinate {frac} is not on the {self.t}-point lattice")
        return j

    def location_indices(self, loc: PartLocation) -> tuple[int, int, int, int]:
        """Lattice indices (i, j, k, l) of a grid-aligned location."""
        return (
            self.x_index(loc.x1),
            self.y_index(loc.y1),
            self.x_index(loc.x2),
            self.y_index(loc.y2),
        )

    def location_from_indices(self, i: int, j: int, k: int, l: int) -> PartLocation:
        return PartLocation(
            self.x_fraction(i), self.y_fraction(j), self.x_fraction(k), self.y_fraction(l)
        )


def iou(a: PartLocation, b: PartLocation) -> float:
    """Intersection over union of two fractional boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def pairwise_iou(locations: list[PartLocation]) -> np.ndarray:
    """Dense IoU matrix over a location list (used by scoring and oracles)."""
    n = len(locations)
    out = np.zeros((n, n))
    for i in range(n):
        out[i, i] = 1.0
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = iou(locations[i], locations[j])
    return out


def iou_against(loc: PartLocation, boxes: np.ndarray) -> np.ndarray:
    """IoU of `loc` against an (n, 4) array of [x1, y1, x2, y2] rows."""
    ix = np.minimum(loc.x2, boxes[:, 2]) - np.maximum(loc.x1, boxes[:, 0])
    iy = np.minimum(loc.y2, boxes[:, 3]) - np.maximum(loc.y1, boxes[:, 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    return inter / (loc.area + areas - inter)


def _snap(frac: float, points: int) -> int:
    # nearest lattice index, halves rounding up
    return min(points - 1, int(np.floor(frac * (points - 1) + 0.5)))


def align_to_grid(loc: PartLocation, g: Grid) -> PartLocation:
    """Snap each coordinate to the nearest lattice point, keeping a span of
    at least one cell per axis.

    If snapping collapses an axis, the box is expanded one lattice step toward
    the higher index, or toward the lower index when already at the top edge.
    Idempotent: aligned locations come back unchanged.
    """
    i, k = _snap(loc.x1, g.s), _snap(loc.x2, g.s)
    j, l = _snap(loc.y1, g.t), _snap(loc.y2, g.t)
    if i == k:
        if k < g.s - 1:
            k += 1
        else:
            i -= 1
    if j == l:
        if l < g.t - 1:
            l += 1
        else:
            j -= 1
    return g.location_from_indices(i, j, k, l)


def _valid_spans(points: int, min_cells: int) -> list[tuple[int, int]]:
    return [
        (a, b)
        for a in range(points)
        for b in range(a + min_cells, points)
    ]


def sample_candidate_locations(
    g: Grid,
    n: int,
    min_cells: int = 2,
    rng: np.random.Generator | int | None = 0,
) -> list[PartLocation]:
    """Draw n grid-aligned boxes uniformly over valid lattice index tuples.

    Each box spans at least `min_cells` cells in each dimension.  ``rng`` may
    be a seed or a Generator; passing a Generator lets a caller drive several
    sampling steps from one reproducible stream.
    """
    if n < 1:
        raise GeometryError(f"need n >= 1 candidates, got {n}")
    if min_cells < 1:
        raise GeometryError(f"need min_cells >= 1, got {min_cells}")
    x_pairs = _valid_spans(g.s, min_cells)
    y_pairs = _valid_spans(g.t, min_cells)
    if not x_pairs or not y_pairs:
        raise GeometryError(
            f"grid {g.s}x{g.t} cannot host a {min_cells}-cell span"
        )
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    xi = gen.integers(0, len(x_pairs), size=n)
    yi = gen.integers(0, len(y_pairs), size=n)
    out = []
    for a, b in zip(xi, yi):
        (i, k), (j, l) = x_pairs[a], y_pairs[b]
        out.append(g.location_from_indices(i, j, k, l))
    return out

"""Dense appearance descriptors, codebook learning, and integral
bag-of-features tensors.

The descriptor is a 128-d gradient orientation histogram (4x4 spatial cells x
8 orientation bins, hard binning, 0.2 component clamp).  Descriptors are
quantized against a k-means codebook; per-image word counts are accumulated
into a tensor of 2D prefix sums over a regular grid, so any grid-aligned
region's histogram costs four lookups.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FeatureError, FileFormatError
from .geometry import Grid, PartLocation
from .image_io import GrayImage

__all__ = [
    "DenseDescriptor",
    "Codebook",
    "FeatureTensor",
    "RegionFeature",
    "extract_dense_descriptors",
    "learn_codebook",
    "quantize",
    "quantize_batch",
    "build_feature_tensor",
    "region_feature",
    "region_features_batch",
    "save_codebook",
    "load_codebook",
    "save_tensor",
    "load_tensor",
]

DESCRIPTOR_DIM = 128
_N_CELLS = 4
_N_BINS = 8
_CLAMP = 0.2


@dataclass(frozen=True)
class DenseDescriptor:
    """One local descriptor: unit L2 norm, or all zeros for a uniform patch."""

    cx: float
    cy: float
    patch_size: int
    vector: np.ndarray


@dataclass(frozen=True)
class Codebook:
    """k-means centroids; a visual word is an index into `centroids`."""

    centroids: np.ndarray

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class FeatureTensor:
    """Cumulative word counts: values[i, j, w] counts word w in the region
    from (0, 0) to lattice point (i, j).  Shape (grid.s, grid.t, d)."""

    grid: Grid
    d: int
    values: np.ndarray


@dataclass(frozen=True)
class RegionFeature:
    """Sqrt-of-L1-normalized region histogram plus the constant bias slot."""

    appearance: np.ndarray
    bias_slot: float = -1.0

    def as_vector(self) -> np.ndarray:
        return np.append(self.appearance, self.bias_slot)


def _orientation_integrals(pixels: np.ndarray) -> np.ndarray:
    """Zero-padded 2D prefix sums of gradient magnitude, one plane per
    orientation bin.  Shape (H+1, W+1, 8)."""
    gy, gx = np.gradient(pixels)
    mag = np.hypot(gx, gy)
    theta = np.arctan2(gy, gx)
    bins = np.floor((theta + np.pi) / (2 * np.pi / _N_BINS)).astype(np.int64) % _N_BINS
    h, w = pixels.shape
    planes = np.zeros((h, w, _N_BINS))
    for b in range(_N_BINS):
        planes[:, :, b] = np.where(bins == b, mag, 0.0)
    integral = np.zeros((h + 1, w + 1, _N_BINS))
    integral[1:, 1:, :] = planes.cumsum(axis=0).cumsum(axis=1)
    return integral


def _cell_offsets(patch_size: int) -> list[int]:
    # boundaries at round(q * P / 4), q = 0..4
    return [int(q * patch_size / _N_CELLS + 0.5) for q in range(_N_CELLS + 1)]


def _dense_vectors(
    img: GrayImage, step: int, patch_sizes: Sequence[int]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Descriptor centers and vectors for every patch size, each size scanned
    row-major over the step lattice.  Returns (cx, cy, vectors)."""
    if step < 1:
        raise FeatureError(f"step must be >= 1, got {step}")
    if not patch_sizes:
        raise FeatureError("need at least one patch size")
    smallest = min(img.width, img.height)
    for p in patch_sizes:
        if p < 1 or p > smallest:
            raise FeatureError(
                f"patch size {p} does not fit a {img.width}x{img.height} image"
            )
    integral = _orientation_integrals(img.pixels)
    all_cx, all_cy, all_vec = [], [], []
    for p in patch_sizes:
        x0 = np.arange(0, img.width - p + 1, step)
        y0 = np.arange(0, img.height - p + 1, step)
        off = _cell_offsets(p)
        cells = np.empty((len(y0), len(x0), _N_CELLS, _N_CELLS, _N_BINS))
        for r in range(_N_CELLS):
            for c in range(_N_CELLS):
                ys, ye = y0 + off[r], y0 + off[r + 1]
                xs, xe = x0 + off[c], x0 + off[c + 1]
                cells[:, :, r, c, :] = (
                    integral[np.ix_(ye, xe)]
                    - integral[np.ix_(ys, xe)]
                    - integral[np.ix_(ye, xs)]
                    + integral[np.ix_(ys, xs)]
                )
        vec = cells.reshape(-1, DESCRIPTOR_DIM)
        norms = np.linalg.norm(vec, axis=1)
        live = norms > 0.0
        vec[live] /= norms[live, None]
        np.clip(vec, None, _CLAMP, out=vec)
        renorm = np.linalg.norm(vec[live], axis=1)
        vec[live] /= renorm[:, None]
        all_cx.append(np.tile(x0 + p / 2.0, len(y0)))
        all_cy.append(np.repeat(y0 + p / 2.0, len(x0)))
        all_vec.append(vec)
    return np.concatenate(all_cx), np.concatenate(all_cy), np.vstack(all_vec)


def extract_dense_descriptors(
    img: GrayImage, step: int, patch_sizes: Sequence[int]
) -> list[DenseDescriptor]:
    """Densely extract gradient-histogram descriptors.

    For each patch size, one descriptor per step-lattice position whose patch
    lies fully inside the image.  Gradients are central differences; each
    patch is split into 4x4 cells of 8 hard orientation bins of gradient
    magnitude, L2-normalized, clamped at 0.2, and renormalized.  Uniform
    patches give the zero vector.
    """
    cx, cy, vec = _dense_vectors(img, step, patch_sizes)
    sizes = np.concatenate(
        [
            np.full(
                (len(np.arange(0, img.height - p + 1, step)) *
                 len(np.arange(0, img.width - p + 1, step)),),
                p,
                dtype=np.int64,
            )
            for p in patch_sizes
        ]
    )
    return [
        DenseDescriptor(cx=float(cx[i]), cy=float(cy[i]), patch_size=int(sizes[i]),
                        vector=vec[i])
        for i in range(len(cx))
    ]


def _as_matrix(descriptors) -> np.ndarray:
    if isinstance(descriptors, np.ndarray):
        return np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
    rows = [d.vector if isinstance(d, DenseDescriptor) else d for d in descriptors]
    if not rows:
        return np.empty((0, DESCRIPTOR_DIM))
    return np.asarray(rows, dtype=np.float64)


def _expanded_sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # |x|^2 - 2 x.c + |c|^2, clipped at 0; fast path for Lloyd iterations
    d2 = (
        (x * x).sum(axis=1)[:, None]
        - 2.0 * (x @ centroids.T)
        + (centroids * centroids).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0, out=d2)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centroids[j] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def learn_codebook(
    descriptors, k: int, max_iters: int = 25, seed: int = 0
) -> Codebook:
    """Lloyd's k-means from k-means++ seeding, deterministic given `seed`.

    Stops after `max_iters` iterations or as soon as assignments repeat.  An
    empty cluster is re-seeded to the point currently farthest from its
    assigned centroid (ties and repeats leave duplicate centroids, which
    quantization handles by lowest-index tie-breaking).
    """
    x = _as_matrix(descriptors)
    if x.shape[0] == 0:
        raise FeatureError("cannot learn a codebook from zero descriptors")
    if k < 1:
        raise FeatureError(f"codebook size must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    prev = None
    for _ in range(max_iters):
        d2 = _expanded_sq_dists(x, centroids)
        assign = d2.argmin(axis=1)
        if prev is not None and np.array_equal(assign, prev):
            break
        prev = assign
        counts = np.bincount(assign, minlength=k)
        sums = np.stack(
            [np.bincount(assign, weights=x[:, j], minlength=k) for j in range(x.shape[1])],
            axis=1,
        )
        live = counts > 0
        centroids = centroids.copy()
        centroids[live] = sums[live] / counts[live, None]
        if not live.all():
            worst = d2[np.arange(x.shape[0]), assign].copy()
            for c in np.flatnonzero(~live):
                idx = int(worst.argmax())
                centroids[c] = x[idx]
                worst[idx] = -1.0
    return Codebook(centroids=centroids)


# distance gaps below this get re-checked with exact arithmetic; it is many
# orders above the expanded form's rounding error for unit-scale vectors
_NEAR_TIE = 1e-6


def _exact_argmin(rows: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = rows[:, None, :] - centroids[None, :, :]
    d2 = np.einsum("nkd,nkd->nk", diff, diff)
    return d2.argmin(axis=1)


def quantize_batch(vectors: np.ndarray, codebook: Codebook, chunk: int = 4096) -> np.ndarray:
    """Nearest-centroid word index for each row; ties go to the lowest index.

    The bulk pass uses the expanded quadratic form; any row whose two best
    distances fall within a near-tie band is re-resolved with exact squared
    differences, so results agree bit-for-bit with a brute-force scan.
    """
    v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if v.shape[1] != codebook.dim:
        raise FeatureError(
            f"vector dimension {v.shape[1]} != codebook dimension {codebook.dim}"
        )
    c = codebook.centroids
    out = np.empty(v.shape[0], dtype=np.int64)
    for start in range(0, v.shape[0], chunk):
        block = v[start : start + chunk]
        d2 = _expanded_sq_dists(block, c)
        out[start : start + chunk] = d2.argmin(axis=1)
        if c.shape[0] > 1:
            two_best = np.partition(d2, 1, axis=1)[:, :2]
            close = np.flatnonzero(two_best[:, 1] - two_best[:, 0] < _NEAR_TIE)
            if close.size:
                out[start + close] = _exact_argmin(block[close], c)
    return out


def quantize(vector: np.ndarray, codebook: Codebook) -> int:
    """Word index of a single descriptor vector."""
    return int(quantize_batch(np.asarray(vector)[None, :], codebook)[0])


def _cell_index(fracs: np.ndarray, lattice: np.ndarray) -> np.ndarray:
    # a boundary descriptor belongs to the higher-index cell
    idx = np.searchsorted(lattice, fracs, side="right") - 1
    return np.clip(idx, 0, len(lattice) - 2)


def build_feature_tensor(
    img: GrayImage,
    codebook: Codebook,
    grid: Grid,
    step: int,
    patch_sizes: Sequence[int],
) -> FeatureTensor:
    """Quantize every dense descriptor and accumulate per-word counts into
    2D prefix sums over the grid.

    Each descriptor lands in the cell containing its center (fractional image
    coordinates); a center exactly on a cell boundary belongs to the
    higher-index cell.
    """
    cx, cy, vec = _dense_vectors(img, step, patch_sizes)
    words = quantize_batch(vec, codebook)
    xs = np.array([grid.x_fraction(i) for i in range(grid.s)])
    ys = np.array([grid.y_fraction(j) for j in range(grid.t)])
    ix = _cell_index(cx / img.width, xs)
    iy = _cell_index(cy / img.height, ys)
    counts = np.zeros((grid.s - 1, grid.t - 1, codebook.k))
    np.add.at(counts, (ix, iy, words), 1.0)
    values = np.zeros((grid.s, grid.t, codebook.k))
    values[1:, 1:, :] = counts.cumsum(axis=0).cumsum(axis=1)
    return FeatureTensor(grid=grid, d=codebook.k, values=values)


def region_features_batch(
    tensor: FeatureTensor, locations: Sequence[PartLocation]
) -> np.ndarray:
    """Stacked region features, one row [appearance, -1] per location.

    The raw histogram comes from four-corner inclusion-exclusion on the
    prefix sums; it is then L1-normalized and square-rooted dimension-wise
    (unit L2 norm), or left all-zero for an empty region.  Raises if a
    location is off the tensor's lattice.
    """
    g = tensor.grid
    idx = np.array([g.location_indices(loc) for loc in locations], dtype=np.int64)
    i, j, k, l = idx[:, 0], idx[:, 1], idx[:, 2], idx[:, 3]
    v = tensor.values
    raw = v[k, l] + v[i, j] - v[i, l] - v[k, j]
    totals = raw.sum(axis=1)
    out = np.zeros((len(locations), tensor.d + 1))
    out[:, -1] = -1.0
    live = totals > 0.0
    out[live, :-1] = np.sqrt(raw[live] / totals[live, None])
    return out


def region_feature(tensor: FeatureTensor, loc: PartLocation) -> RegionFeature:
    """Region feature of a single grid-aligned location."""
    row = region_features_batch(tensor, [loc])[0]
    return RegionFeature(appearance=row[:-1], bias_slot=row[-1])


# ---------------------------------------------------------------------------
# file formats


def save_codebook(codebook: Codebook, path: str | Path) -> None:
    """Text format: header ``EPMCB 1 <K> <dim>``, then one centroid per line."""
    lines = [f"EPMCB 1 {codebook.k} {codebook.dim}"]
    for row in codebook.centroids:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_codebook(path: str | Path) -> Codebook:
    try:
        lines = Path(path).read_text(encoding="ascii").splitlines()
    except OSError as exc:
        raise FileFormatError(f"unreadable codebook {path}: {exc}") from None
    if not lines:
        raise FileFormatError(f"empty codebook file {path}")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "EPMCB":
        raise FileFormatError(f"unknown codebook format in {path}")
    if header[1] != "1":
        raise FileFormatError(f"unsupported codebook version {header[1]}")
    k, dim = int(header[2]), int(header[3])
    if len(lines) < 1 + k:
        raise FileFormatError(f"corrupt codebook {path}: expected {k} centroid lines")
    rows = []
    for line in lines[1 : 1 + k]:
        values = [float(f) for f in line.split()]
        if len(values) != dim:
            raise FileFormatError(f"corrupt codebook {path}: bad centroid width")
        rows.append(values)
    return Codebook(centroids=np.asarray(rows))


_TENSOR_MAGIC = b"EPMFT1"


def save_tensor(tensor: FeatureTensor, path: str | Path) -> None:
    """Binary cache: magic EPMFT1, little-endian int32 s, t, d, then
    s*t*d little-endian float64 values in (x, y, word) order."""
    g = tensor.grid
    header = _TENSOR_MAGIC + struct.pack("<iii", g.s, g.t, tensor.d)
    payload = np.ascontiguousarray(tensor.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def load_tensor(path: str | Path) -> FeatureTensor:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FileFormatError(f"unreadable tensor {path}: {exc}") from None
    if data[:6] != _TENSOR_MAGIC:
        raise FileFormatError(f"unknown tensor format in {path}")
    if len(data) < 6 + 12:
        raise FileFormatError(f"corrupt tensor {path}: truncated header")
    s, t, d = struct.unpack("<iii", data[6:18])
    need = s * t * d * 8
    if len(data) != 18 + need:
        raise FileFormatError(f"corrupt tensor {path}: expected {need} payload bytes")
    values = np.frombuffer(data[18:], dtype="<f8").reshape(s, t, d).copy()
    return FeatureTensor(grid=Grid(s=s, t=t), d=d, values=values)

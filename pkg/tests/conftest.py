"""Shared construction helpers for the test suite."""

import numpy as np
import pytest

from epm.features import FeatureTensor
from epm.geometry import Grid, PartLocation
from epm.image_io import GrayImage
from epm.model import EpmModel, Part


def tensor_from_counts(counts: np.ndarray) -> FeatureTensor:
    """Build a FeatureTensor from per-cell word counts of shape (s-1, t-1, d)."""
    counts = np.asarray(counts, dtype=np.float64)
    sx, sy, d = counts.shape
    values = np.zeros((sx + 1, sy + 1, d))
    values[1:, 1:, :] = counts.cumsum(axis=0).cumsum(axis=1)
    return FeatureTensor(grid=Grid(s=sx + 1, t=sy + 1), d=d, values=values)


def ones_tensor(s: int = 5, t: int = 5, d: int = 1) -> FeatureTensor:
    """One word-0 count in every cell: any non-empty region feature is
    [1, 0, ..., 0, -1], so a template [v + 1, 0, ..., 0, 1] scores exactly v."""
    counts = np.zeros((s - 1, t - 1, d))
    counts[:, :, 0] = 1.0
    return tensor_from_counts(counts)


def model_with_scores(
    locations,
    scores,
    k,
    d: int = 1,
    beta: float = 1.0 / 3.0,
    sources=None,
    grid: Grid | None = None,
) -> EpmModel:
    """Model whose part p scores exactly scores[p] on ones_tensor(d=d)."""
    grid = grid or Grid(s=5, t=5)
    if sources is None:
        sources = list(range(len(locations)))
    parts = []
    for loc, value, src in zip(locations, scores, sources):
        template = np.zeros(d + 1)
        template[0] = value + 1.0
        template[-1] = 1.0
        parts.append(Part(template=template, location=loc, source_image=src))
    return EpmModel(parts=parts, grid=grid, d=d, k=k, beta=beta)


def random_image(rng: np.random.Generator, width: int = 32, height: int = 32) -> GrayImage:
    return GrayImage(width=width, height=height,
                     pixels=rng.random((height, width)))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_pipeline(tmp_path_factory):
    """Small end-to-end fixture: synthetic data, codebook, and tensors."""
    from epm.features import build_feature_tensor, extract_dense_descriptors, learn_codebook
    from epm.image_io import load_image
    from epm.synthetic import SynthConfig, generate_synthetic

    out = tmp_path_factory.mktemp("tiny_synth")
    cfg = SynthConfig(image_size=64, num_train=5, num_test=5, signal_patch_size=12,
                      signal_jitter=2, noise_level=0.05, distractor_count=1,
                      border_margin=8, seed=11)
    train, test = generate_synthetic(cfg, out)
    step, sizes = 4, (8,)
    train_imgs = [load_image(out / e.path) for e in train.entries]
    test_imgs = [load_image(out / e.path) for e in test.entries]
    pool = np.vstack([
        np.stack([d.vector for d in extract_dense_descriptors(im, step, sizes)])
        for im in train_imgs
    ])
    codebook = learn_codebook(pool, 24, max_iters=10, seed=0)
    grid = Grid(9, 9)
    return {
        "dir": out,
        "train_manifest": train,
        "test_manifest": test,
        "codebook": codebook,
        "grid": grid,
        "step": step,
        "patch_sizes": sizes,
        "train_tensors": [build_feature_tensor(im, codebook, grid, step, sizes)
                          for im in train_imgs],
        "test_tensors": [build_feature_tensor(im, codebook, grid, step, sizes)
                         for im in test_imgs],
        "train_labels": [e.label for e in train.entries],
        "test_labels": [e.label for e in test.entries],
    }


# locations reused across model tests: four disjoint quadrant boxes on a 5x5
# lattice, plus a wide box overlapping two of them
LOC_Q1 = PartLocation(0.0, 0.0, 0.5, 0.5)
LOC_Q2 = PartLocation(0.5, 0.0, 1.0, 0.5)
LOC_Q3 = PartLocation(0.0, 0.5, 0.5, 1.0)
LOC_Q4 = PartLocation(0.5, 0.5, 1.0, 1.0)
LOC_TOP = PartLocation(0.0, 0.0, 1.0, 0.5)

"""Deterministic desk-scale datasets with a spatially localized class signal.

Positives carry a diagonal-stripe patch at a (jittered) canonical location;
negatives carry the identical patch somewhere else plus the same number of
mirror-orientation distractors, so global word histograms are close to
class-uninformative while the canonical region separates the classes
perfectly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SyntheticError
from .image_io import DatasetManifest, GrayImage, ManifestEntry, save_image, write_manifest

__all__ = ["SynthConfig", "generate_synthetic"]

_STRIPE_PERIOD = 6.0
_STRIPE_AMP = 0.35
_BACKGROUND = 0.5
_PLACEMENT_TRIES = 1000


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 128
    num_train: int = 100
    num_test: int = 100
    signal_patch_size: int = 24
    signal_jitter: int = 4
    noise_level: float = 0.05
    distractor_count: int = 2
    border_margin: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.image_size < 8 or self.signal_patch_size < 4:
            raise SyntheticError("image and signal patch sizes are too small")
        if not 0.0 <= self.noise_level <= 1.0:
            raise SyntheticError(f"noise_level must be in [0, 1], got {self.noise_level}")
        if self.num_train < 1 or self.num_test < 1:
            raise SyntheticError("need at least one train and one test image per class")
        if self.signal_jitter < 0 or self.distractor_count < 0 or self.border_margin < 0:
            raise SyntheticError("jitter, distractors, and margin must be non-negative")
        tl = self._canonical_tl()
        if tl - self.signal_jitter < self.border_margin or (
            tl + self.signal_patch_size + self.signal_jitter
            > self.image_size - self.border_margin
        ):
            raise SyntheticError(
                "signal patch does not fit inside the border margin under maximal jitter"
            )

    def _canonical_tl(self) -> int:
        return (self.image_size - self.signal_patch_size) // 2


def _stripe_patch(size: int, diag: int) -> np.ndarray:
    """Diagonal sinusoidal stripes in patch-local coordinates; diag +1 and -1
    give mirror orientations with identical gradient energy."""
    u = np.arange(size)
    phase = u[None, :] + diag * u[:, None]
    return _BACKGROUND + _STRIPE_AMP * np.sin(2.0 * np.pi * phase / _STRIPE_PERIOD)


def _overlaps(box: tuple[int, int, int, int], others: list[tuple[int, int, int, int]]) -> bool:
    x1, y1, x2, y2 = box
    return any(x1 < ox2 and ox1 < x2 and y1 < oy2 and oy1 < y2
               for ox1, oy1, ox2, oy2 in others)


def _place(
    rng: np.random.Generator,
    size: int,
    patch: int,
    margin: int,
    taken: list[tuple[int, int, int, int]],
) -> tuple[int, int]:
    lo, hi = margin, size - patch - margin
    if hi < lo:
        raise SyntheticError(
            f"infeasible geometry: {patch}px patch cannot respect a "
            f"{margin}px margin in a {size}px image"
        )
    for _ in range(_PLACEMENT_TRIES):
        x = int(rng.integers(lo, hi + 1))
        y = int(rng.integers(lo, hi + 1))
        box = (x, y, x + patch, y + patch)
        if not _overlaps(box, taken):
            taken.append(box)
            return x, y
    raise SyntheticError(
        f"infeasible geometry: cannot place a {patch}px patch in {size}px image"
    )


def _render(cfg: SynthConfig, rng: np.random.Generator, positive: bool) -> np.ndarray:
    size, patch = cfg.image_size, cfg.signal_patch_size
    tl = cfg._canonical_tl()
    signal = _stripe_patch(patch, +1)
    distractor = _stripe_patch(patch, -1)
    canvas = np.full((size, size), _BACKGROUND)
    # the reserved canonical region (jitter margin included) holds the signal
    # in positives and stays texture-free in negatives; every patch keeps
    # border_margin pixels of clearance so local-descriptor coverage does not
    # depend on where a patch landed
    reserved = (tl - cfg.signal_jitter, tl - cfg.signal_jitter,
                tl + patch + cfg.signal_jitter, tl + patch + cfg.signal_jitter)
    taken = [reserved]
    if positive:
        jx = int(rng.integers(-cfg.signal_jitter, cfg.signal_jitter + 1))
        jy = int(rng.integers(-cfg.signal_jitter, cfg.signal_jitter + 1))
        canvas[tl + jy : tl + jy + patch, tl + jx : tl + jx + patch] = signal
    else:
        x, y = _place(rng, size, patch, cfg.border_margin, taken)
        canvas[y : y + patch, x : x + patch] = signal
    for _ in range(cfg.distractor_count):
        x, y = _place(rng, size, patch, cfg.border_margin, taken)
        canvas[y : y + patch, x : x + patch] = distractor
    if cfg.noise_level > 0.0:
        canvas = canvas + cfg.noise_level * (rng.random((size, size)) - 0.5)
    return np.clip(canvas, 0.0, 1.0)


def generate_synthetic(
    cfg: SynthConfig, out_dir: str | Path
) -> tuple[DatasetManifest, DatasetManifest]:
    """Write the dataset under `out_dir` and return its manifests.

    Produces P5 images named <split>_<pos|neg>_<index>.pgm plus
    train.manifest and test.manifest (paths relative to out_dir).  Byte
    deterministic given cfg.seed.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SyntheticError(f"cannot create output directory {out}: {exc}") from None
    rng = np.random.default_rng(cfg.seed)
    manifests = []
    for split, count in (("train", cfg.num_train), ("test", cfg.num_test)):
        entries = []
        for positive in (True, False):
            tag = "pos" if positive else "neg"
            for index in range(count):
                name = f"{split}_{tag}_{index:04d}.pgm"
                pixels = _render(cfg, rng, positive)
                img = GrayImage(width=cfg.image_size, height=cfg.image_size,
                                pixels=pixels)
                save_image(img, out / name)
                entries.append(ManifestEntry(path=name, label=1 if positive else -1))
        manifest = DatasetManifest(entries=entries, class_name="signal")
        write_manifest(manifest, out / f"{split}.manifest")
        manifests.append(manifest)
    return manifests[0], manifests[1]

"""Flat ``key = value`` run configuration shared by all CLI subcommands.

Every key has a typed default; unknown keys are rejected.  A config file sets
keys in bulk, and any key can be overridden on the command line as
``--key value``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError
from .geometry import Grid
from .synthetic import SynthConfig
from .training import TrainConfig

__all__ = ["RunConfig", "KEYS"]


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    items = [t for t in text.replace(",", " ").split() if t]
    if not items:
        raise ValueError("empty list")
    return tuple(int(t) for t in items)


@dataclass(frozen=True)
class _Key:
    default: Any
    parse: Callable[[str], Any]
    doc: str


def _path(doc: str) -> _Key:
    return _Key("", str, doc)


KEYS: dict[str, _Key] = {
    # paths and naming
    "manifest": _path("input manifest (train set for train/baseline)"),
    "eval_manifest": _path("held-out manifest for baseline evaluation"),
    "image": _path("single image for score/visualize"),
    "out_dir": _path("output directory for synth"),
    "tensor_dir": _path("directory of cached feature tensors (.ft)"),
    "codebook": _path("codebook file (output of codebook, input elsewhere)"),
    "model": _path("model file (output of train, input elsewhere)"),
    "train_log": _path("training log CSV (default: <model>.log.csv)"),
    "report": _path("evaluation report CSV (default: stdout)"),
    "scores": _path("score dump to write (path,score lines)"),
    "add_scores": _path("score dump whose values are added before ranking"),
    "composite": _path("composite image output for visualize"),
    "class_name": _Key("positive", str, "class label used in reports"),
    # feature pipeline
    "step": _Key(4, int, "dense sampling step in pixels"),
    "patch_sizes": _Key((8, 16, 24, 32, 40), _parse_int_list,
                        "comma-separated square patch sizes in pixels"),
    "grid_s": _Key(13, int, "lattice points along x (grid_s-1 cells)"),
    "grid_t": _Key(13, int, "lattice points along y"),
    "codebook_size": _Key(1000, int, "number of visual words"),
    "codebook_sample": _Key(200000, int, "descriptor subsample cap for k-means"),
    "codebook_iters": _Key(25, int, "maximum k-means iterations"),
    "codebook_seed": _Key(0, int, "k-means seed"),
    "box_expand": _Key(0.5, float, "person-box expansion fraction per side pair"),
    # training
    "eta0": _Key(0.05, float, "base learning rate"),
    "lambda": _Key(1e-5, float, "regularization constant"),
    "k": _Key(100, int, "parts used to score an image"),
    "n": _Key(200, int, "candidate parts sampled per positive image"),
    "beta": _Key(1.0 / 3.0, float, "maximum IoU between co-selected parts"),
    "outer_iters": _Key(10, int, "outer training iterations"),
    "passes_per_iter": _Key(5, int, "shuffled passes per outer iteration"),
    "anneal_at": _Key(5, int, "iteration after which the rate is annealed"),
    "anneal_factor": _Key(5.0, float, "rate division factor at annealing"),
    "seed": _Key(0, int, "training seed (sampling and shuffling)"),
    "unique_sources": _Key(True, _parse_bool,
                           "at most one co-selected part per source image"),
    "min_cells": _Key(2, int, "minimum candidate span in grid cells"),
    # synthetic data
    "image_size": _Key(128, int, "synthetic image side in pixels"),
    "num_train": _Key(100, int, "train images per class"),
    "num_test": _Key(100, int, "test images per class"),
    "signal_patch_size": _Key(24, int, "signal patch side in pixels"),
    "signal_jitter": _Key(4, int, "max canonical-location jitter in pixels"),
    "noise_level": _Key(0.05, float, "additive uniform noise amplitude"),
    "distractor_count": _Key(2, int, "mirror-texture distractors per image"),
    "border_margin": _Key(16, int, "texture clearance from image borders"),
    "synth_seed": _Key(0, int, "synthetic generation seed"),
    # baseline and reporting
    "spm_levels": _Key((1, 2, 3, 4), _parse_int_list,
                       "pyramid levels c (c x c cells each)"),
    "figures": _Key(True, _parse_bool, "render figures next to CSV reports"),
}


class RunConfig:
    """Typed key-value store behind the CLI; starts from defaults."""

    def __init__(self) -> None:
        self._values: dict[str, Any] = {k: spec.default for k, spec in KEYS.items()}

    def __getitem__(self, key: str) -> Any:
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]

    def set(self, key: str, text: str) -> None:
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            self._values[key] = KEYS[key].parse(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None

    def load_file(self, path: str | Path) -> None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"unreadable config {path}: {exc}") from None
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            self.set(key.strip(), value.strip())

    def require(self, key: str) -> Any:
        value = self[key]
        if value == "":
            raise ConfigError(f"missing required setting {key!r}")
        return value

    def grid(self) -> Grid:
        return Grid(s=self["grid_s"], t=self["grid_t"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            eta0=self["eta0"],
            lam=self["lambda"],
            k=self["k"],
            n=self["n"],
            beta=self["beta"],
            outer_iters=self["outer_iters"],
            passes_per_iter=self["passes_per_iter"],
            anneal_at=self["anneal_at"],
            anneal_factor=self["anneal_factor"],
            seed=self["seed"],
            unique_sources=self["unique_sources"],
            min_cells=self["min_cells"],
        )

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            image_size=self["image_size"],
            num_train=self["num_train"],
            num_test=self["num_test"],
            signal_patch_size=self["signal_patch_size"],
            signal_jitter=self["signal_jitter"],
            noise_level=self["noise_level"],
            distractor_count=self["distractor_count"],
            border_margin=self["border_margin"],
            seed=self["synth_seed"],
        )

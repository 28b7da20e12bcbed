"""Delimited reports, their companion figures, and scoring composites.

Training and evaluation write small CSV files; next to each one the CLI also
renders a matplotlib figure (convergence panels for training, an AP bar chart
for evaluation).  Composites black out everything outside the chosen part
rectangles, showing which regions scored an image.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import EvaluationError, SelectionError
from .image_io import GrayImage
from .metrics import mean_ap
from .model import EpmModel, Selection
from .training import TrainLog

__all__ = [
    "write_train_log",
    "render_train_log_figure",
    "write_eval_report",
    "render_eval_figure",
    "write_scores",
    "read_scores",
    "visualize_selection",
]


def write_train_log(log: TrainLog, path: str | Path) -> None:
    """CSV with header ``iter,objective,num_parts,train_ap``, one row per
    outer iteration.  17-significant-digit floats keep identical runs
    byte-identical."""
    lines = ["iter,objective,num_parts,train_ap"]
    for i in range(len(log.iterations)):
        lines.append(
            f"{log.iterations[i]},{log.objectives[i]:.17g},"
            f"{log.part_counts[i]},{log.train_aps[i]:.17g}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def render_train_log_figure(log: TrainLog, path: str | Path) -> None:
    """Three convergence panels: objective, model size, and training AP."""
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    panels = (
        (log.objectives, "objective"),
        (log.part_counts, "model parts"),
        (log.train_aps, "train AP"),
    )
    for ax, (series, label) in zip(axes, panels):
        ax.plot(log.iterations, series, marker="o")
        ax.set_xlabel("iteration")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_eval_report(rows: list[tuple[str, float]], path: str | Path) -> None:
    """``class,ap`` rows followed by a mAP footer row."""
    if not rows:
        raise EvaluationError("evaluation report needs at least one class row")
    lines = [f"{name},{ap:.6f}" for name, ap in rows]
    lines.append(f"mAP,{mean_ap([ap for _, ap in rows]):.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def render_eval_figure(rows: list[tuple[str, float]], path: str | Path) -> None:
    """Per-class AP bars with the mAP drawn as a horizontal line."""
    names = [name for name, _ in rows]
    values = [ap for _, ap in rows]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(rows) + 2.0), 3.5))
    ax.bar(range(len(rows)), values, color="tab:blue")
    ax.axhline(mean_ap(values), color="tab:red", linestyle="--",
               label=f"mAP {mean_ap(values):.3f}")
    ax.set_xticks(range(len(rows)), names, rotation=30, ha="right")
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("average precision")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_scores(pairs: list[tuple[str, float]], path: str | Path) -> None:
    """Score dump: one ``image_path,score`` line per image, no header."""
    lines = [f"{p},{s:.17g}" for p, s in pairs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scores(path: str | Path) -> dict[str, float]:
    scores: dict[str, float] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.rpartition(",")
        if not key:
            raise EvaluationError(f"bad score line in {path}: {line!r}")
        scores[key] = float(value)
    return scores


def visualize_selection(img: GrayImage, sel: Selection, model: EpmModel) -> GrayImage:
    """Composite of the chosen part rectangles over black.

    Each covered pixel is the mean of the original intensities over all
    chosen rectangles containing it; since every rectangle samples the same
    image, that mean is exactly the original value, and uncovered pixels
    stay black.
    """
    if not sel.chosen:
        raise SelectionError("cannot visualize an empty selection")
    coverage = np.zeros((img.height, img.width), dtype=np.int64)
    for idx in sel.chosen:
        loc = model.parts[idx].location
        x1 = int(round(loc.x1 * img.width))
        x2 = int(round(loc.x2 * img.width))
        y1 = int(round(loc.y1 * img.height))
        y2 = int(round(loc.y2 * img.height))
        coverage[y1:y2, x1:x2] += 1
    pixels = np.where(coverage > 0, img.pixels, 0.0)
    return GrayImage(width=img.width, height=img.height, pixels=pixels)

"""Grayscale image loading, person crops, and dataset manifests.

Images are NetPBM only (P2/P5 grayscale, P3/P6 color reduced to luma), which
keeps the reader free of codec dependencies.  Pixels are stored row-major as
float64 intensities in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GeometryError, ImageFormatError, ManifestError

__all__ = [
    "GrayImage",
    "PixelBox",
    "ManifestEntry",
    "DatasetManifest",
    "load_image",
    "save_image",
    "crop_expand",
    "read_manifest",
    "write_manifest",
]


@dataclass
class GrayImage:
    """A grayscale raster: ``pixels`` has shape (height, width), values in [0, 1]."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.width <= 0 or self.height <= 0:
            raise ImageFormatError("image dimensions must be positive")
        if self.pixels.shape != (self.height, self.width):
            raise ImageFormatError(
                f"pixel buffer shape {self.pixels.shape} does not match "
                f"{self.height}x{self.width}"
            )
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ImageFormatError("intensities must lie in [0, 1]")


@dataclass(frozen=True)
class PixelBox:
    """Integer pixel rectangle, half-open on neither side: x1 < x2, y1 < y2."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self) -> None:
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ManifestError(f"degenerate pixel box {self}")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    box: PixelBox | None = None


@dataclass
class DatasetManifest:
    """Ordered image entries with +/-1 labels and optional person boxes."""

    entries: list[ManifestEntry] = field(default_factory=list)
    class_name: str = ""


def _tokenize_header(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Return the first `count` whitespace-separated header tokens and the
    offset one byte past the final token's trailing whitespace character.

    ``#`` starts a comment running to end of line, as NetPBM allows anywhere
    in the header.
    """
    tokens: list[bytes] = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i] == ord("#"):
            while i < n and data[i] not in (0x0A, 0x0D):
                i += 1
            continue
        if i >= n:
            raise ImageFormatError("malformed header: ran out of data")
        start = i
        while i < n and not data[i : i + 1].isspace() and data[i] != ord("#"):
            i += 1
        tokens.append(data[start:i])
        if len(tokens) == count:
            # binary rasters begin exactly one whitespace byte after maxval
            if i < n and data[i : i + 1].isspace():
                i += 1
    return tokens, i


def _parse_dims(tokens: list[bytes]) -> tuple[int, int, int]:
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError(f"malformed header: non-numeric field {exc}") from None
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"malformed header: bad dimensions {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise ImageFormatError(f"malformed header: maxval {maxval} out of range")
    return width, height, maxval


def load_image(path: str | Path) -> GrayImage:
    """Load a NetPBM file as a GrayImage.

    P2/P5 are read directly; P3/P6 are converted to luma as the unweighted
    channel mean.  Sample values are scaled by 1/maxval into [0, 1].  Binary
    rasters with maxval > 255 use two big-endian bytes per sample.
    """
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"missing file: {p} ({exc})") from None
    if len(data) < 2:
        raise ImageFormatError(f"malformed header: {p} is not NetPBM")
    magic = data[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ImageFormatError(f"malformed header: unknown magic {magic!r}")
    channels = 3 if magic in (b"P3", b"P6") else 1
    binary = magic in (b"P5", b"P6")

    tokens, offset = _tokenize_header(data[2:], 3)
    width, height, maxval = _parse_dims(tokens)
    nsamples = width * height * channels

    if binary:
        raster = data[2 + offset :]
        bytes_per = 2 if maxval > 255 else 1
        need = nsamples * bytes_per
        if len(raster) < need:
            raise ImageFormatError(
                f"truncated pixel data: need {need} bytes, have {len(raster)}"
            )
        dtype = ">u2" if bytes_per == 2 else np.uint8
        samples = np.frombuffer(raster[:need], dtype=dtype).astype(np.float64)
    else:
        fields = data[2 + offset :].split()
        if len(fields) < nsamples:
            raise ImageFormatError(
                f"truncated pixel data: need {nsamples} values, have {len(fields)}"
            )
        try:
            samples = np.array([int(f) for f in fields[:nsamples]], dtype=np.float64)
        except ValueError:
            raise ImageFormatError("truncated pixel data: non-numeric sample") from None
    if samples.size and samples.max() > maxval:
        raise ImageFormatError(f"sample value exceeds maxval {maxval}")

    samples /= float(maxval)
    if channels == 3:
        samples = samples.reshape(height, width, 3).mean(axis=2)
    else:
        samples = samples.reshape(height, width)
    return GrayImage(width=width, height=height, pixels=samples)


def save_image(img: GrayImage, path: str | Path, maxval: int = 255) -> None:
    """Write a GrayImage as binary P5 with the given maxval (<= 255)."""
    if not 1 <= maxval <= 255:
        raise ImageFormatError(f"writer supports maxval in [1, 255], got {maxval}")
    quantized = np.rint(img.pixels * maxval).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + quantized.tobytes())


def crop_expand(img: GrayImage, box: PixelBox, expand_frac: float = 0.0) -> GrayImage:
    """Crop `box` out of `img`, first widening it by `expand_frac` of its own
    width and height (centered), then clipping to the image bounds.

    The expansion adds expand_frac * width in total (half on each side) and
    likewise for height; fractional margins round outward so the crop never
    shrinks below what was requested.
    """
    if expand_frac < 0:
        raise GeometryError(f"expand_frac must be >= 0, got {expand_frac}")
    if box.x1 >= img.width or box.y1 >= img.height or box.x2 <= 0 or box.y2 <= 0:
        raise GeometryError(f"box {box} lies outside a {img.width}x{img.height} image")
    mx = expand_frac * (box.x2 - box.x1) / 2.0
    my = expand_frac * (box.y2 - box.y1) / 2.0
    x1 = max(0, math.floor(box.x1 - mx))
    y1 = max(0, math.floor(box.y1 - my))
    x2 = min(img.width, math.ceil(box.x2 + mx))
    y2 = min(img.height, math.ceil(box.y2 + my))
    region = img.pixels[y1:y2, x1:x2].copy()
    return GrayImage(width=x2 - x1, height=y2 - y1, pixels=region)


def read_manifest(path: str | Path, class_name: str = "") -> DatasetManifest:
    """Parse a line-oriented manifest: ``relative/path,label[,x1,y1,x2,y2]``.

    Blank lines and lines starting with ``#`` are skipped.  Labels must be
    +1 or -1.  CRLF endings are accepted.
    """
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"unreadable manifest {p}: {exc}") from None
    entries: list[ManifestEntry] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) not in (2, 6):
            raise ManifestError(f"{p}:{lineno}: expected 2 or 6 fields, got {len(fields)}")
        rel, label_text = fields[0], fields[1]
        if not rel:
            raise ManifestError(f"{p}:{lineno}: empty image path")
        if label_text in ("1", "+1"):
            label = 1
        elif label_text == "-1":
            label = -1
        else:
            raise ManifestError(f"{p}:{lineno}: invalid label {label_text!r}")
        box = None
        if len(fields) == 6:
            try:
                coords = [int(f) for f in fields[2:]]
            except ValueError:
                raise ManifestError(f"{p}:{lineno}: malformed box {fields[2:]}") from None
            try:
                box = PixelBox(*coords)
            except ManifestError:
                raise ManifestError(f"{p}:{lineno}: malformed box {coords}") from None
        entries.append(ManifestEntry(path=rel, label=label, box=box))
    return DatasetManifest(entries=entries, class_name=class_name or p.stem)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    lines = []
    for e in manifest.entries:
        if e.box is None:
            lines.append(f"{e.path},{e.label:+d}")
        else:
            b = e.box
            lines.append(f"{e.path},{e.label:+d},{b.x1},{b.y1},{b.x2},{b.y2}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

"""Exception hierarchy shared across the package.

Every error raised on a documented failure path derives from ``EpmError`` so
that callers (notably the CLI) can separate expected runtime failures from
bugs.
"""


class EpmError(Exception):
    """Base class for all errors raised by this package."""


class ImageFormatError(EpmError):
    """Missing, malformed, or truncated NetPBM file."""


class ManifestError(EpmError):
    """Bad dataset manifest line (label, box, or file problem)."""


class GeometryError(EpmError):
    """Invalid box/grid arguments, e.g. an impossible candidate span."""


class FeatureError(EpmError):
    """Descriptor/codebook/tensor contract violation."""


class EmptyRegionError(FeatureError):
    """A region needed a non-degenerate appearance but contained no words."""


class FileFormatError(EpmError):
    """Unknown magic, unsupported version, or corrupt artifact file
    (model, codebook, or cached tensor)."""


class SelectionError(EpmError):
    """Scoring could not select any part (all excluded or infeasible)."""


class TrainingError(EpmError):
    """Training preconditions violated (empty class, n=0, no usable parts)."""


class EvaluationError(EpmError):
    """Ranking metrics asked for something undefined (e.g. AP without
    positives)."""


class SyntheticError(EpmError):
    """Synthetic dataset generation failed (geometry or output directory)."""


class ConfigError(EpmError):
    """Unknown key, bad value, or unreadable run-configuration file."""

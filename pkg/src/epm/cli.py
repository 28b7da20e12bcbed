"""Command-line driver for the full pipeline.

Subcommands: synth, codebook, features, train, score, eval, baseline,
visualize.  Every setting is a config key; ``--config file`` loads a
``key = value`` file and any ``--key value`` flag overrides it.  Exit codes:
0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from .baseline import spm_feature, train_linear
from .config import KEYS, RunConfig
from .errors import ConfigError, EpmError, EvaluationError
from .features import (
    Codebook,
    FeatureTensor,
    build_feature_tensor,
    extract_dense_descriptors,
    learn_codebook,
    load_codebook,
    load_tensor,
    save_codebook,
    save_tensor,
)
from .image_io import (
    DatasetManifest,
    GrayImage,
    ManifestEntry,
    crop_expand,
    load_image,
    read_manifest,
    save_image,
)
from .metrics import average_precision
from .model import load_model, save_model, score_greedy
from .report import (
    render_eval_figure,
    render_train_log_figure,
    read_scores,
    visualize_selection,
    write_eval_report,
    write_scores,
    write_train_log,
)
from .synthetic import generate_synthetic
from .training import train_epm

__all__ = ["main"]

_USAGE = """usage: epm <subcommand> [--config FILE] [--key value ...]

subcommands:
  synth      generate the synthetic localized-signal dataset
  codebook   learn a visual codebook from a manifest's images
  features   cache feature tensors (.ft) for a manifest
  train      train an expanded parts model
  score      score one image or a manifest with a model
  eval       rank a manifest with a model and report AP
  baseline   train/evaluate the spatial-pyramid linear baseline
  visualize  write the scoring composite for one image

Run `epm help` to list every config key and its default.
"""


def _print_keys() -> None:
    print(_USAGE)
    print("config keys (key = default):")
    for name, spec in KEYS.items():
        default = spec.default if spec.default != "" else "<unset>"
        print(f"  {name:18} = {default!s:20} {spec.doc}")


def _progress(message: str) -> None:
    print(message, file=sys.stderr)


def _load_manifest(cfg: RunConfig, key: str) -> tuple[DatasetManifest, Path]:
    path = Path(cfg.require(key))
    manifest = read_manifest(path, class_name=cfg["class_name"])
    return manifest, path.parent


def _entry_image(entry: ManifestEntry, base: Path, cfg: RunConfig,
                 use_box: bool = True) -> GrayImage:
    img = load_image(base / entry.path)
    if use_box and entry.box is not None:
        img = crop_expand(img, entry.box, cfg["box_expand"])
    return img


def _cache_name(rel_path: str) -> str:
    return rel_path.replace("/", "__").replace("\\", "__") + ".ft"


def _entry_tensor(
    entry: ManifestEntry,
    base: Path,
    cfg: RunConfig,
    codebook: Codebook,
    use_box: bool = True,
) -> FeatureTensor:
    tensor_dir = cfg["tensor_dir"]
    if tensor_dir:
        cached = Path(tensor_dir) / _cache_name(entry.path)
        if cached.exists():
            return load_tensor(cached)
    img = _entry_image(entry, base, cfg, use_box=use_box)
    return build_feature_tensor(img, codebook, cfg.grid(), cfg["step"],
                                cfg["patch_sizes"])


def _manifest_tensors(
    manifest: DatasetManifest, base: Path, cfg: RunConfig, codebook: Codebook,
    use_box: bool = True, what: str = "tensors",
) -> list[FeatureTensor]:
    tensors = []
    for i, entry in enumerate(manifest.entries):
        tensors.append(_entry_tensor(entry, base, cfg, codebook, use_box=use_box))
        if (i + 1) % 50 == 0:
            _progress(f"{what}: {i + 1}/{len(manifest.entries)} images")
    return tensors


def cmd_synth(cfg: RunConfig) -> int:
    out_dir = cfg.require("out_dir")
    train, test = generate_synthetic(cfg.synth_config(), out_dir)
    print(f"wrote {len(train.entries)} train / {len(test.entries)} test images to {out_dir}")
    return 0


def cmd_codebook(cfg: RunConfig) -> int:
    manifest, base = _load_manifest(cfg, "manifest")
    out_path = cfg.require("codebook")
    pool = []
    for i, entry in enumerate(manifest.entries):
        img = _entry_image(entry, base, cfg)
        descs = extract_dense_descriptors(img, cfg["step"], cfg["patch_sizes"])
        pool.append(np.stack([d.vector for d in descs]))
        if (i + 1) % 50 == 0:
            _progress(f"descriptors: {i + 1}/{len(manifest.entries)} images")
    stacked = np.vstack(pool)
    cap = cfg["codebook_sample"]
    if stacked.shape[0] > cap:
        rng = np.random.default_rng(cfg["codebook_seed"])
        stacked = stacked[rng.choice(stacked.shape[0], size=cap, replace=False)]
    _progress(f"k-means: {stacked.shape[0]} descriptors, k={cfg['codebook_size']}")
    codebook = learn_codebook(stacked, cfg["codebook_size"],
                              cfg["codebook_iters"], cfg["codebook_seed"])
    save_codebook(codebook, out_path)
    print(f"wrote codebook {out_path}")
    return 0


def cmd_features(cfg: RunConfig) -> int:
    manifest, base = _load_manifest(cfg, "manifest")
    codebook = load_codebook(cfg.require("codebook"))
    tensor_dir = Path(cfg.require("tensor_dir"))
    tensor_dir.mkdir(parents=True, exist_ok=True)
    for i, entry in enumerate(manifest.entries):
        img = _entry_image(entry, base, cfg)
        tensor = build_feature_tensor(img, codebook, cfg.grid(), cfg["step"],
                                      cfg["patch_sizes"])
        save_tensor(tensor, tensor_dir / _cache_name(entry.path))
        if (i + 1) % 50 == 0:
            _progress(f"features: {i + 1}/{len(manifest.entries)} images")
    print(f"wrote {len(manifest.entries)} tensors to {tensor_dir}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    manifest, base = _load_manifest(cfg, "manifest")
    codebook = load_codebook(cfg.require("codebook"))
    model_path = cfg.require("model")
    tensors = _manifest_tensors(manifest, base, cfg, codebook)
    labels = [e.label for e in manifest.entries]
    model, log = train_epm(tensors, labels, cfg.train_config(), verbose=True)
    save_model(model, model_path)
    log_path = cfg["train_log"] or f"{model_path}.log.csv"
    write_train_log(log, log_path)
    if cfg["figures"]:
        render_train_log_figure(log, f"{log_path}.png")
    print(f"wrote model {model_path} ({len(model.parts)} parts) and log {log_path}")
    return 0


def _score_tensor(model, tensor) -> float:
    return score_greedy(model, tensor).score


def cmd_score(cfg: RunConfig) -> int:
    model = load_model(cfg.require("model"))
    codebook = load_codebook(cfg.require("codebook"))
    pairs: list[tuple[str, float]] = []
    if cfg["image"]:
        img = load_image(cfg["image"])
        tensor = build_feature_tensor(img, codebook, cfg.grid(), cfg["step"],
                                      cfg["patch_sizes"])
        pairs.append((cfg["image"], _score_tensor(model, tensor)))
    elif cfg["manifest"]:
        manifest, base = _load_manifest(cfg, "manifest")
        for entry in manifest.entries:
            tensor = _entry_tensor(entry, base, cfg, codebook)
            pairs.append((entry.path, _score_tensor(model, tensor)))
    else:
        raise ConfigError("score needs either 'image' or 'manifest'")
    for path, score in pairs:
        print(f"{path},{score:.17g}")
    if cfg["scores"]:
        write_scores(pairs, cfg["scores"])
    return 0


def _fuse(pairs: list[tuple[str, float]], cfg: RunConfig) -> list[tuple[str, float]]:
    if not cfg["add_scores"]:
        return pairs
    extra = read_scores(cfg["add_scores"])
    fused = []
    for path, score in pairs:
        if path not in extra:
            raise EvaluationError(f"{cfg['add_scores']} has no score for {path}")
        fused.append((path, score + extra[path]))
    return fused


def _finish_eval(cfg: RunConfig, pairs: list[tuple[str, float]],
                 labels: list[int]) -> int:
    pairs = _fuse(pairs, cfg)
    if cfg["scores"]:
        write_scores(pairs, cfg["scores"])
    ap = average_precision([s for _, s in pairs], labels)
    rows = [(cfg["class_name"], ap)]
    if cfg["report"]:
        write_eval_report(rows, cfg["report"])
        if cfg["figures"]:
            render_eval_figure(rows, f"{cfg['report']}.png")
        print(f"wrote report {cfg['report']} (AP {ap:.4f})")
    else:
        print(f"{cfg['class_name']},{ap:.6f}")
        print(f"mAP,{ap:.6f}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    model = load_model(cfg.require("model"))
    codebook = load_codebook(cfg.require("codebook"))
    manifest, base = _load_manifest(cfg, "manifest")
    pairs = []
    for i, entry in enumerate(manifest.entries):
        tensor = _entry_tensor(entry, base, cfg, codebook)
        pairs.append((entry.path, _score_tensor(model, tensor)))
        if (i + 1) % 50 == 0:
            _progress(f"eval: {i + 1}/{len(manifest.entries)} images")
    return _finish_eval(cfg, pairs, [e.label for e in manifest.entries])


def cmd_baseline(cfg: RunConfig) -> int:
    codebook = load_codebook(cfg.require("codebook"))
    train_manifest, train_base = _load_manifest(cfg, "manifest")
    test_manifest, test_base = _load_manifest(cfg, "eval_manifest")
    levels = cfg["spm_levels"]

    def vectors(manifest, base, what):
        tensors = _manifest_tensors(manifest, base, cfg, codebook,
                                    use_box=False, what=what)
        return [spm_feature(t, levels) for t in tensors]

    train_x = vectors(train_manifest, train_base, "baseline train")
    test_x = vectors(test_manifest, test_base, "baseline test")
    weights = train_linear(train_x, [e.label for e in train_manifest.entries],
                           cfg.train_config())
    pairs = [
        (entry.path, float(weights @ x))
        for entry, x in zip(test_manifest.entries, test_x)
    ]
    return _finish_eval(cfg, pairs, [e.label for e in test_manifest.entries])


def cmd_visualize(cfg: RunConfig) -> int:
    model = load_model(cfg.require("model"))
    codebook = load_codebook(cfg.require("codebook"))
    out_path = cfg.require("composite")
    img = load_image(cfg.require("image"))
    tensor = build_feature_tensor(img, codebook, cfg.grid(), cfg["step"],
                                  cfg["patch_sizes"])
    sel = score_greedy(model, tensor)
    composite = visualize_selection(img, sel, model)
    save_image(composite, out_path)
    print(f"wrote composite {out_path} (score {sel.score:.4f}, "
          f"{len(sel.chosen)} parts)")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "codebook": cmd_codebook,
    "features": cmd_features,
    "train": cmd_train,
    "score": cmd_score,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "visualize": cmd_visualize,
}


def _parse_flags(cfg: RunConfig, args: list[str]) -> None:
    # --config files apply first, then --key value overrides in order
    overrides: list[tuple[str, str]] = []
    i = 0
    while i < len(args):
        flag = args[i]
        if not flag.startswith("--"):
            raise ConfigError(f"expected --key, got {flag!r}")
        if i + 1 >= len(args):
            raise ConfigError(f"flag {flag} is missing its value")
        key, value = flag[2:], args[i + 1]
        if key == "config":
            cfg.load_file(value)
        else:
            overrides.append((key, value))
        i += 2
    for key, value in overrides:
        cfg.set(key, value)


def main(argv: list[str] | None = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    if not args:
        print(_USAGE, file=sys.stderr)
        return 2
    command = args[0]
    if command in ("help", "-h", "--help"):
        _print_keys()
        return 0
    if command not in _COMMANDS:
        print(f"unknown subcommand: {command}", file=sys.stderr)
        print(_USAGE, file=sys.stderr)
        return 2
    cfg = RunConfig()
    try:
        _parse_flags(cfg, args[1:])
        return _COMMANDS[command](cfg)
    except ConfigError as exc:
        print(f"epm {command}: {exc}", file=sys.stderr)
        return 2
    except EpmError as exc:
        print(f"epm {command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

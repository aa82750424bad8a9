"""Command-line entry point.

    landseg prepare|stats|train|eval|infer|colorize|synth --config <file> [--set k=v]

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
Every failure prints a single line naming the stage that broke.
"""

from __future__ import annotations

import argparse
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from PIL import Image

from . import CLASS_NAMES, __version__
from .autodiff import AutodiffError
from .classmap import ClassMapError, apply_class_map, load_class_map
from .config import ConfigError, PipelineConfig, load_config
from .features import (FeatureCollection, FeatureError, buffer_polylines,
                       parse_feature_collection)
from .infer import sliding_infer
from .metrics import (MetricsError, confusion_csv, evaluate_pairs, format_report)
from .model import ModelError, Segmenter, normalize_image
from .palette import PaletteError, colorize, decolorize
from .rasterize import GridSpec, RasterError, load_image_raster, rasterize
from .report import (plot_class_histogram, plot_confusion_matrix, plot_iou,
                     plot_loss_curve)
from .synthetic import write_fixture
from .tiler import (TileRecord, TilerError, class_stats, compute_weights,
                    cut_tiles, filter_tiles, read_split, write_dataset)
from .train import TrainError, train

USAGE_ERRORS = (ConfigError, TrainError)
DATA_ERRORS = (FeatureError, ClassMapError, RasterError, TilerError,
               MetricsError, PaletteError, ModelError, FileNotFoundError,
               NotADirectoryError, PermissionError, IsADirectoryError, OSError)
NUMERIC_ERRORS = (AutodiffError,)


class StageFailure(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str):
    try:
        yield
    except StageFailure:
        raise
    except Exception as e:
        raise StageFailure(name, e) from e


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, NUMERIC_ERRORS):
        return 3
    if isinstance(exc, USAGE_ERRORS):
        return 1
    if isinstance(exc, DATA_ERRORS):
        return 2
    return 2


def cmd_synth(cfg: PipelineConfig, args) -> int:
    with stage("synth"):
        paths = write_fixture(cfg.synth, cfg.out_dir)
    for name, path in paths.items():
        print(f"wrote {name}: {path}")
    return 0


def cmd_prepare(cfg: PipelineConfig, args) -> int:
    with stage("parse"):
        if not cfg.vectors:
            raise ConfigError("config is missing [paths] vectors")
        features = []
        for path in cfg.vectors:
            fc = parse_feature_collection(Path(path).read_bytes())
            features.extend(fc.features)
        fc = FeatureCollection(features)
        print(f"parsed {len(fc)} features from {len(cfg.vectors)} file(s)")

    with stage("classmap"):
        cmap = load_class_map(cfg.require("classmap"), cfg.unknown_policy)
        fc = apply_class_map(fc, cmap)

    with stage("buffer"):
        fc = buffer_polylines(fc)

    with stage("rasterize"):
        ortho = load_image_raster(cfg.require("ortho"))
        labels = rasterize(fc, ortho.grid, cfg.priority)

    with stage("tiles"):
        tiles = cut_tiles(ortho, labels, cfg.tile_px)

    with stage("filter"):
        kept = filter_tiles(tiles, cfg.max_nodata)
        kept_ids = {id(t) for t in kept}
        dropped = [t for t in tiles if id(t) not in kept_ids]
        print(f"tiles: {len(kept)} kept, {len(dropped)} dropped "
              f"(nodata > {cfg.max_nodata:.0%})")
        for t in dropped:
            print(f"  dropped {t.tile_id} (nodata {t.nodata_fraction:.1%})")

    with stage("weights"):
        hist = class_stats(kept)
        weights = compute_weights(hist, cfg.weight_scheme, cfg.manual_weights)

    with stage("write"):
        root = cfg.require("dataset_root")
        lines = write_dataset(kept, (cfg.train_fraction, 1.0 - cfg.train_fraction),
                              root, seed=cfg.split_seed, weights=weights)
        n_train = sum(1 for ln in lines if ln.startswith("training\t"))
        n_val = sum(1 for ln in lines if ln.startswith("validation\t"))
        print(f"wrote {n_train} training + {n_val} validation tiles under {root}")
    return 0


def cmd_stats(cfg: PipelineConfig, args) -> int:
    with stage("read"):
        root = cfg.require("dataset_root")
        records = []
        for split in ("training", "validation"):
            records.extend(read_split(root, split))
        if not records:
            raise TilerError(f"{root}: no tiles found")

    with stage("stats"):
        fake_georef = GridSpec(0.0, 0.0, 1.0, 1, 1)
        tiles = [TileRecord(tid, img, lab, 0.0, fake_georef)
                 for tid, img, lab in records]
        hist = class_stats(tiles)
        weights = compute_weights(hist, cfg.weight_scheme, cfg.manual_weights)

    with stage("report"):
        total = max(hist.total, 1)
        print(f"{'class':<16}{'pixels':>12}{'freq':>9}{'weight':>10}")
        for cid, name in enumerate(CLASS_NAMES):
            print(f"{name:<16}{hist.counts[cid]:>12}"
                  f"{hist.counts[cid] / total:>9.4f}{weights.w[cid]:>10.5f}")
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        stats_path = cfg.out_dir / "class_stats.txt"
        with open(stats_path, "w", encoding="utf-8") as fh:
            for cid, name in enumerate(CLASS_NAMES):
                fh.write(f"{name}\t{int(hist.counts[cid])}\t{weights.w[cid]!r}\n")
        plot_class_histogram(hist, weights.w, cfg.out_dir / "class_histogram.png")
        print(f"wrote {stats_path} and class_histogram.png")
    return 0


def cmd_train(cfg: PipelineConfig, args) -> int:
    with stage("train"):
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint = cfg.checkpoint or cfg.out_dir / "model.swseg"
        log_path = cfg.out_dir / "loss_log.txt"
        result = train(cfg.require("dataset_root"), cfg.train, cfg.swin,
                       checkpoint_path=checkpoint, log_path=log_path,
                       progress=True)
    with stage("report"):
        plot_loss_curve(result.history, cfg.out_dir / "loss_curve.png")
        print(f"checkpoint: {checkpoint}")
        print(f"loss log: {log_path} (+ loss_curve.png)")
    return 0


def _load_model(cfg: PipelineConfig) -> Segmenter:
    return Segmenter.load(cfg.require("checkpoint"))


def cmd_eval(cfg: PipelineConfig, args) -> int:
    with stage("load"):
        model = _load_model(cfg)
        records = read_split(cfg.require("dataset_root"), "validation")
        if not records:
            raise TilerError("validation split is empty")

    with stage("evaluate"):
        def predict(image_u8):
            return sliding_infer(model.predict_logits, normalize_image(image_u8),
                                 cfg.infer_window, cfg.infer_stride)

        pairs = ((img, lab) for _, img, lab in records)
        iou, miou, cm = evaluate_pairs(pairs, predict)

    with stage("report"):
        text = format_report(iou, miou, cm)
        print(text)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        (cfg.out_dir / "eval_report.txt").write_text(text + "\n", encoding="utf-8")
        (cfg.out_dir / "confusion_matrix.csv").write_text(confusion_csv(cm),
                                                          encoding="utf-8")
        plot_confusion_matrix(cm, cfg.out_dir / "confusion_matrix.png")
        plot_iou(iou, miou, cfg.out_dir / "iou_per_class.png")
        print(f"wrote eval_report.txt, confusion_matrix.csv/.png, "
              f"iou_per_class.png under {cfg.out_dir}")
    return 0


def cmd_infer(cfg: PipelineConfig, args) -> int:
    with stage("load"):
        model = _load_model(cfg)
        input_path = Path(args.input) if args.input else cfg.infer_input
        if input_path is None:
            raise ConfigError("infer needs --input or [infer] input")
        image = np.asarray(Image.open(input_path).convert("RGB"), dtype=np.uint8)

    with stage("infer"):
        labels = sliding_infer(model.predict_logits, normalize_image(image),
                               cfg.infer_window, cfg.infer_stride)

    with stage("write"):
        out = Path(args.output) if args.output else cfg.infer_output
        if out is None:
            out = cfg.out_dir / (input_path.stem + "_labels.png")
        out.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(labels, mode="L").save(out)
        print(f"wrote {out}")
    return 0


def cmd_colorize(cfg: PipelineConfig, args) -> int:
    with stage("load"):
        if not args.input:
            raise ConfigError("colorize needs --input (a label PNG)")
        labels = np.asarray(Image.open(args.input).convert("L"), dtype=np.uint8)

    with stage("colorize"):
        rgb = colorize(labels, cfg.palette)

    with stage("write"):
        out = Path(args.output) if args.output else (
            cfg.out_dir / (Path(args.input).stem + "_rgb.png"))
        out.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(rgb, mode="RGB").save(out)
        print(f"wrote {out}")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "stats": cmd_stats,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "colorize": cmd_colorize,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="landseg",
        description="six-class land-cover segmentation pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("prepare", "vectors + ortho -> tiled dataset tree"),
            ("stats", "class histogram and loss weights of a dataset"),
            ("train", "fit the segmenter on the training split"),
            ("eval", "score the validation split (IoU, mIoU, confusion)"),
            ("infer", "segment an image with a trained checkpoint"),
            ("colorize", "map a label PNG to palette colors"),
            ("synth", "generate the synthetic demo fixture")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--set", action="append", default=[], metavar="SEC.KEY=VAL",
                       help="override a config value (repeatable)")
        if name in ("infer", "colorize"):
            p.add_argument("--input", default=None)
            p.add_argument("--output", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    command = args.command
    try:
        cfg = load_config(args.config, args.set)
        return COMMANDS[command](cfg, args)
    except StageFailure as e:
        print(f"landseg {command}: {e}", file=sys.stderr)
        return _exit_code(e.cause)
    except Exception as e:  # config load happens before any stage
        print(f"landseg {command}: [config] {e}", file=sys.stderr)
        return _exit_code(e)


if __name__ == "__main__":
    sys.exit(main())

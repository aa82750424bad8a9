"""Declarative pipeline configuration: INI-style sections, CLI overrides.

Precedence, highest first: ``--set section.key=value`` flags, then the
config file, then built-in defaults. Paths are resolved relative to the
config file's directory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .model import SwinConfig
from .palette import DEFAULT_COLORS, DEFAULT_NODATA_COLOR, Palette
from .synthetic import SyntheticSpec
from .tiler import REFERENCE_WEIGHTS
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    base_dir: Path = field(default_factory=Path)
    # [paths]
    vectors: list[Path] = field(default_factory=list)
    ortho: Path | None = None
    classmap: Path | None = None
    dataset_root: Path | None = None
    checkpoint: Path | None = None
    out_dir: Path = field(default_factory=lambda: Path("out"))
    # [tiler]
    tile_px: int = 256
    max_nodata: float = 0.5
    train_fraction: float = 0.75
    split_seed: int = 0
    priority: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    unknown_policy: str = "error"
    # [weights]
    weight_scheme: str = "manual"
    manual_weights: tuple[float, ...] = REFERENCE_WEIGHTS
    # [infer]
    infer_window: int = 64
    infer_stride: int = 32
    infer_input: Path | None = None
    infer_output: Path | None = None
    # sub-configs
    swin: SwinConfig = field(default_factory=SwinConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    palette: Palette = field(default_factory=Palette)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def require(self, name: str) -> Path:
        value = getattr(self, name)
        if value is None:
            raise ConfigError(f"config is missing a required path: {name}")
        return value


def _parse_floats(raw: str, n: int, what: str) -> tuple[float, ...]:
    parts = [p for p in raw.replace(",", " ").split() if p]
    if len(parts) != n:
        raise ConfigError(f"{what} needs {n} values, got {len(parts)}")
    return tuple(float(p) for p in parts)


def _parse_ints(raw: str, n: int, what: str) -> tuple[int, ...]:
    parts = [p for p in raw.replace(",", " ").split() if p]
    if len(parts) != n:
        raise ConfigError(f"{what} needs {n} values, got {len(parts)}")
    return tuple(int(p) for p in parts)


def _parse_color(raw: str) -> tuple[int, int, int]:
    return tuple(_parse_ints(raw, 3, "color"))  # type: ignore[return-value]


def load_config(path=None, overrides: list[str] | None = None) -> PipelineConfig:
    """Read a config file (optional) and apply ``section.key=value`` overrides."""
    parser = configparser.ConfigParser()
    base_dir = Path()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser.read(path, encoding="utf-8")
        base_dir = path.parent
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"override {item!r} is not section.key=value")
        section, option = key.split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, option, value)
    return _build(parser, base_dir)


def _build(parser: configparser.ConfigParser, base_dir: Path) -> PipelineConfig:
    cfg = PipelineConfig(base_dir=base_dir)

    def get(section, option, default=None):
        if parser.has_option(section, option):
            return parser.get(section, option)
        return default

    try:
        if (raw := get("paths", "vectors")) is not None:
            cfg.vectors = [cfg.resolve(p.strip()) for p in raw.split(",") if p.strip()]
        for name in ("ortho", "classmap", "dataset_root", "checkpoint"):
            if (raw := get("paths", name)) is not None:
                setattr(cfg, name, cfg.resolve(raw))
        if (raw := get("paths", "out_dir")) is not None:
            cfg.out_dir = cfg.resolve(raw)
        else:
            cfg.out_dir = cfg.resolve(cfg.out_dir)

        cfg.tile_px = int(get("tiler", "tile_px", cfg.tile_px))
        cfg.max_nodata = float(get("tiler", "max_nodata", cfg.max_nodata))
        cfg.train_fraction = float(get("tiler", "train_fraction", cfg.train_fraction))
        cfg.split_seed = int(get("tiler", "split_seed", cfg.split_seed))
        cfg.unknown_policy = get("tiler", "unknown_policy", cfg.unknown_policy)
        if (raw := get("tiler", "priority")) is not None:
            cfg.priority = _parse_ints(raw, 6, "priority")

        cfg.weight_scheme = get("weights", "scheme", cfg.weight_scheme)
        if (raw := get("weights", "manual")) is not None:
            cfg.manual_weights = _parse_floats(raw, 6, "manual weights")

        swin_kwargs = {}
        for name in ("patch_size", "window_size", "embed_dim", "mlp_ratio",
                     "num_classes", "decoder_channels"):
            if (raw := get("model", name)) is not None:
                swin_kwargs[name] = int(raw)
        for name in ("depths", "num_heads"):
            if (raw := get("model", name)) is not None:
                swin_kwargs[name] = _parse_ints(raw, 4, name)
        if swin_kwargs:
            cfg.swin = SwinConfig(**{**_swin_defaults(), **swin_kwargs})

        train_kwargs = {}
        for name, cast in (("crop_size", int), ("max_steps", int), ("seed", int),
                           ("batch_size", int), ("log_every", int),
                           ("base_lr", float), ("weight_decay", float),
                           ("poly_power", float)):
            if (raw := get("train", name)) is not None:
                train_kwargs[name] = cast(raw)
        if train_kwargs:
            cfg.train = TrainConfig(**train_kwargs)
        cfg.train.weights = cfg.manual_weights if cfg.weight_scheme == "manual" else cfg.train.weights

        cfg.infer_window = int(get("infer", "window", cfg.infer_window))
        cfg.infer_stride = int(get("infer", "stride", cfg.infer_stride))
        if (raw := get("infer", "input")) is not None:
            cfg.infer_input = cfg.resolve(raw)
        if (raw := get("infer", "output")) is not None:
            cfg.infer_output = cfg.resolve(raw)

        colors = list(DEFAULT_COLORS)
        nodata_color = DEFAULT_NODATA_COLOR
        if parser.has_section("palette"):
            for cid in range(6):
                if (raw := get("palette", f"class{cid}")) is not None:
                    colors[cid] = _parse_color(raw)
            if (raw := get("palette", "nodata")) is not None:
                nodata_color = _parse_color(raw)
        cfg.palette = Palette(tuple(colors), nodata_color)

        synth_kwargs = {}
        for name, cast in (("tiles_x", int), ("tiles_y", int), ("tile_px", int),
                           ("seed", int), ("uncovered_tiles", int),
                           ("pixel_size", float), ("origin_x", float),
                           ("origin_y", float), ("noise", float)):
            if (raw := get("synth", name)) is not None:
                synth_kwargs[name] = cast(raw)
        if synth_kwargs:
            cfg.synth = SyntheticSpec(**synth_kwargs)
    except (ValueError, TypeError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from None
    return cfg


def _swin_defaults() -> dict:
    d = SwinConfig()
    return {"patch_size": d.patch_size, "window_size": d.window_size,
            "embed_dim": d.embed_dim, "depths": d.depths,
            "num_heads": d.num_heads, "mlp_ratio": d.mlp_ratio,
            "num_classes": d.num_classes, "decoder_channels": 0}

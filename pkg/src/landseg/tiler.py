"""Tile cutting, nodata filtering, class statistics, weights, dataset layout.

The dataset tree written here is::

    root/
      annotations/training/<id>.png    annotations/validation/<id>.png
      images/training/<id>.png         images/validation/<id>.png
      manifest.txt

Label tiles store raw class ids (255 = nodata) in single-channel PNGs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import NODATA, NUM_CLASSES
from .rasterize import GridSpec, ImageRaster, LabelRaster

# Per-class weights actually used for the reference six-class training run
# (dense forest, sparse forest, moor, herbaceous formation, building, road).
REFERENCE_WEIGHTS = (0.5, 1.31237, 1.38874, 1.39761, 1.5, 1.47807)

SPLITS = ("training", "validation")


class TilerError(ValueError):
    """Mismatched rasters or invalid tiling/weighting parameters."""


@dataclass(eq=False)
class TileRecord:
    tile_id: str
    image: np.ndarray  # (tile, tile, 3) u8
    labels: np.ndarray  # (tile, tile) u8
    nodata_fraction: float
    georef: GridSpec


@dataclass(eq=False)
class ClassHistogram:
    counts: np.ndarray  # (6,) int64, nodata excluded

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (NUM_CLASSES,) or (self.counts < 0).any():
            raise TilerError("histogram needs 6 non-negative counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(eq=False)
class WeightVector:
    w: np.ndarray  # (6,) positive finite floats

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.shape != (NUM_CLASSES,):
            raise TilerError("weight vector needs 6 entries")
        if not np.isfinite(self.w).all() or (self.w <= 0).any():
            raise TilerError("weights must be positive and finite")


def _format_km(meters: float) -> str:
    """Kilometer coordinate as a zero-padded id component ('0935', '0935.5')."""
    km = meters / 1000.0
    if km == int(km):
        return f"{int(km):04d}"
    frac = f"{km:.3f}".rstrip("0")
    whole, _, dec = frac.partition(".")
    return f"{int(whole):04d}.{dec}"


def tile_id_for(georef: GridSpec) -> str:
    return f"{_format_km(georef.origin_x)}_{_format_km(georef.origin_y)}"


def cut_tiles(image_raster: ImageRaster, label_raster: LabelRaster,
              tile_px: int = 1000) -> list[TileRecord]:
    """Cut aligned rasters into non-overlapping grid tiles.

    Partial tiles at the right/bottom edges are discarded. Each tile's georef
    origin follows from its pixel offset (row 0 is north, so origin_y
    decreases with the row offset).
    """
    if tile_px <= 0:
        raise TilerError("tile_px must be > 0")
    gi, gl = image_raster.grid, label_raster.grid
    if (gi.width, gi.height) != (gl.width, gl.height):
        raise TilerError("image and label rasters have mismatched dimensions")
    if gi.pixel_size != gl.pixel_size or (gi.origin_x, gi.origin_y) != (gl.origin_x, gl.origin_y):
        raise TilerError("image and label rasters have mismatched georeferencing")
    if gi.width < tile_px or gi.height < tile_px:
        raise TilerError("raster smaller than one tile")

    tiles = []
    ps = gi.pixel_size
    for row_off in range(0, gi.height - tile_px + 1, tile_px):
        for col_off in range(0, gi.width - tile_px + 1, tile_px):
            labels = label_raster.data[row_off:row_off + tile_px,
                                       col_off:col_off + tile_px].copy()
            image = image_raster.data[row_off:row_off + tile_px,
                                      col_off:col_off + tile_px].copy()
            georef = GridSpec(origin_x=gi.origin_x + col_off * ps,
                              origin_y=gi.origin_y - row_off * ps,
                              pixel_size=ps, width=tile_px, height=tile_px)
            nodata = float(np.count_nonzero(labels == NODATA)) / (tile_px * tile_px)
            tiles.append(TileRecord(tile_id=tile_id_for(georef), image=image,
                                    labels=labels, nodata_fraction=nodata,
                                    georef=georef))
    return tiles


def filter_tiles(tiles, max_nodata: float = 0.5) -> list[TileRecord]:
    """Keep tiles whose nodata fraction does not exceed the cutoff.

    The cutoff is inclusive: a tile at exactly ``max_nodata`` is kept, one
    strictly above it is dropped. Order is preserved.
    """
    if not (0.0 <= max_nodata <= 1.0):
        raise TilerError("max_nodata must be within [0, 1]")
    return [t for t in tiles if t.nodata_fraction <= max_nodata]


def class_stats(tiles) -> ClassHistogram:
    """Pixel counts per class over all tiles, nodata excluded."""
    tiles = list(tiles)
    if not tiles:
        raise TilerError("class_stats needs at least one tile")
    counts = np.zeros(NUM_CLASSES, dtype=np.int64)
    for t in tiles:
        binned = np.bincount(t.labels.reshape(-1), minlength=256)
        counts += binned[:NUM_CLASSES]
    return ClassHistogram(counts)


def compute_weights(hist: ClassHistogram, scheme: str = "manual",
                    manual_values=REFERENCE_WEIGHTS) -> WeightVector:
    """Per-class loss weights.

    manual: return ``manual_values`` verbatim.
    inverse_frequency: w[c] = total / (6 * counts[c]).
    median_frequency: w[c] = median(freq) / freq[c] with freq[c] = counts[c]/total.
    """
    if scheme == "manual":
        if manual_values is None or len(manual_values) != NUM_CLASSES:
            raise TilerError("manual scheme needs 6 weight values")
        return WeightVector(np.asarray(manual_values, dtype=np.float64))

    counts = hist.counts.astype(np.float64)
    total = float(hist.total)
    if total <= 0 or (hist.counts == 0).any():
        raise TilerError(f"{scheme} weighting needs a nonzero count for every class")
    if scheme == "inverse_frequency":
        w = total / (NUM_CLASSES * counts)
    elif scheme == "median_frequency":
        freq = counts / total
        w = np.median(freq) / freq
    else:
        raise TilerError(f"unknown weighting scheme {scheme!r}")
    return WeightVector(w)


def write_dataset(tiles, fractions: tuple[float, float], root_dir,
                  seed: int = 0, weights: WeightVector | None = None) -> list[str]:
    """Write the tile tree plus ``manifest.txt``; returns the manifest lines.

    ``fractions`` is (training, validation) and must sum to 1. The split is a
    seeded shuffle, so reruns with the same seed produce the same tree. The
    manifest lists one ``split<TAB>tile_id<TAB>nodata_fraction`` line per tile
    plus a final ``weights`` line.
    """
    tiles = list(tiles)
    if not tiles:
        raise TilerError("no tiles to write")
    f_train, f_val = fractions
    if abs(f_train + f_val - 1.0) > 1e-9 or f_train < 0 or f_val < 0:
        raise TilerError("split fractions must be non-negative and sum to 1")
    ids = [t.tile_id for t in tiles]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise TilerError(f"duplicate tile ids: {', '.join(dupes)}")
    if weights is None:
        weights = WeightVector(np.asarray(REFERENCE_WEIGHTS))

    order = np.random.default_rng(seed).permutation(len(tiles))
    n_train = int(round(len(tiles) * f_train))
    assignment = {}
    for pos, idx in enumerate(order):
        assignment[int(idx)] = "training" if pos < n_train else "validation"

    root = Path(root_dir)
    for split in SPLITS:
        (root / "annotations" / split).mkdir(parents=True, exist_ok=True)
        (root / "images" / split).mkdir(parents=True, exist_ok=True)

    lines = []
    for idx, tile in enumerate(tiles):
        split = assignment[idx]
        Image.fromarray(tile.image, mode="RGB").save(
            root / "images" / split / f"{tile.tile_id}.png")
        Image.fromarray(tile.labels, mode="L").save(
            root / "annotations" / split / f"{tile.tile_id}.png")
        lines.append(f"{split}\t{tile.tile_id}\t{tile.nodata_fraction:.6f}")
    lines.append("weights\t" + "\t".join(repr(float(v)) for v in weights.w))

    with open(root / "manifest.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return lines


def read_split(root_dir, split: str) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Load (tile_id, image, labels) triples of one dataset split."""
    if split not in SPLITS:
        raise TilerError(f"unknown split {split!r}")
    root = Path(root_dir)
    img_dir = root / "images" / split
    ann_dir = root / "annotations" / split
    if not img_dir.is_dir() or not ann_dir.is_dir():
        raise TilerError(f"{root_dir} does not look like a dataset root")
    out = []
    for img_path in sorted(img_dir.glob("*.png")):
        tile_id = img_path.stem
        ann_path = ann_dir / f"{tile_id}.png"
        if not ann_path.exists():
            raise TilerError(f"missing annotation for tile {tile_id}")
        image = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.uint8)
        labels = np.asarray(Image.open(ann_path).convert("L"), dtype=np.uint8)
        out.append((tile_id, image, labels))
    return out


def read_manifest_weights(root_dir) -> WeightVector | None:
    path = Path(root_dir) / "manifest.txt"
    if not path.exists():
        return None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if parts and parts[0] == "weights" and len(parts) == 1 + NUM_CLASSES:
                return WeightVector(np.asarray([float(v) for v in parts[1:]]))
    return None

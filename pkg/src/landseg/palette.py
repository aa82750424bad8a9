"""Label-map colorization and its exact inverse."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import NODATA, NUM_CLASSES

DEFAULT_COLORS = (
    (0, 100, 0),      # dense forest: dark green
    (144, 238, 144),  # sparse forest: light green
    (184, 134, 11),   # moor: orange-brown
    (154, 205, 50),   # herbaceous: yellow-green
    (200, 30, 30),    # building: red
    (128, 128, 128),  # road: gray
)
DEFAULT_NODATA_COLOR = (0, 0, 0)


class PaletteError(ValueError):
    pass


@dataclass
class Palette:
    colors: tuple = DEFAULT_COLORS
    nodata_color: tuple = DEFAULT_NODATA_COLOR

    def __post_init__(self):
        if len(self.colors) != NUM_CLASSES:
            raise PaletteError("palette needs 6 class colors")
        everything = [tuple(c) for c in self.colors] + [tuple(self.nodata_color)]
        if len(set(everything)) != NUM_CLASSES + 1:
            raise PaletteError("palette colors must be distinct")
        self.colors = tuple(tuple(int(v) for v in c) for c in self.colors)
        self.nodata_color = tuple(int(v) for v in self.nodata_color)


def colorize(labels: np.ndarray, palette: Palette | None = None) -> np.ndarray:
    """Class-id map (H, W) u8 -> RGB image (H, W, 3) u8."""
    palette = palette or Palette()
    labels = np.asarray(labels, dtype=np.uint8)
    lut = np.zeros((256, 3), dtype=np.uint8)
    for cid, color in enumerate(palette.colors):
        lut[cid] = color
    lut[NODATA] = palette.nodata_color
    known = (labels < NUM_CLASSES) | (labels == NODATA)
    if not known.all():
        bad = int(labels[~known][0])
        raise PaletteError(f"label {bad} outside 0..5/255")
    return lut[labels]


def decolorize(rgb: np.ndarray, palette: Palette | None = None) -> np.ndarray:
    """Exact inverse of :func:`colorize`; unknown colors are an error."""
    palette = palette or Palette()
    rgb = np.asarray(rgb, dtype=np.uint8)
    out = np.full(rgb.shape[:2], 254, dtype=np.uint8)
    for cid, color in enumerate(palette.colors):
        out[(rgb == np.asarray(color, dtype=np.uint8)).all(axis=-1)] = cid
    out[(rgb == np.asarray(palette.nodata_color, dtype=np.uint8)).all(axis=-1)] = NODATA
    if (out == 254).any():
        ij = np.argwhere(out == 254)[0]
        raise PaletteError(f"pixel {tuple(int(v) for v in ij)} has a color "
                           "outside the palette")
    return out

"""Priority rasterization of class-resolved polygons onto a label grid.

Pixel rule: a pixel is painted iff its center lies inside the polygon under
an even-odd crossing test that is half-open in both axes, so centers exactly
on a top or left boundary are inside while bottom/right boundary centers are
not. Classes are painted lowest priority first; later classes overwrite.

Grid axis convention: row 0 is the northernmost row, the georeferenced
origin is the top-left corner, and y decreases as rows increase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import NODATA, NUM_CLASSES
from .features import FeatureCollection

DEFAULT_PRIORITY = (0, 1, 2, 3, 4, 5)


class RasterError(ValueError):
    """Bad grid or feature input to rasterization."""


@dataclass(frozen=True)
class GridSpec:
    origin_x: float
    origin_y: float
    pixel_size: float = 0.5
    width: int = 0
    height: int = 0

    def __post_init__(self):
        if not (self.pixel_size > 0):
            raise RasterError("pixel_size must be > 0")
        if self.width <= 0 or self.height <= 0:
            raise RasterError("grid width and height must be > 0")

    def to_pixel(self, x: float, y: float) -> tuple[float, float]:
        """World meters -> fractional pixel coordinates (col, row), row down."""
        return ((x - self.origin_x) / self.pixel_size,
                (self.origin_y - y) / self.pixel_size)


@dataclass(eq=False)
class LabelRaster:
    grid: GridSpec
    data: np.ndarray  # (height, width) u8 in {0..5, 255}

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.shape != (self.grid.height, self.grid.width):
            raise RasterError("label data does not match grid dimensions")


@dataclass(eq=False)
class ImageRaster:
    grid: GridSpec
    data: np.ndarray  # (height, width, 3) u8

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.shape != (self.grid.height, self.grid.width, 3):
            raise RasterError("image data does not match grid dimensions")


def _ring_to_pixel(ring, grid: GridSpec) -> np.ndarray:
    pts = np.empty((len(ring), 2), dtype=np.float64)
    for i, (x, y) in enumerate(ring):
        pts[i, 0] = (x - grid.origin_x) / grid.pixel_size
        pts[i, 1] = (grid.origin_y - y) / grid.pixel_size
    return pts


def _edges_of_rings(pixel_rings) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Non-horizontal edges of all rings as (x1, y1, x2, y2) arrays."""
    xs1, ys1, xs2, ys2 = [], [], [], []
    for pts in pixel_rings:
        for i in range(len(pts) - 1):
            x1, y1 = pts[i]
            x2, y2 = pts[i + 1]
            if y1 == y2:
                continue
            xs1.append(x1)
            ys1.append(y1)
            xs2.append(x2)
            ys2.append(y2)
    return (np.asarray(xs1), np.asarray(ys1), np.asarray(xs2), np.asarray(ys2))


def _paint_polygon(out: np.ndarray, pixel_rings, class_id: int) -> None:
    """Scanline fill of one polygon part (all its rings, even-odd)."""
    height, width = out.shape
    x1, y1, x2, y2 = _edges_of_rings(pixel_rings)
    if x1.size == 0:
        return
    ylo = np.minimum(y1, y2)
    yhi = np.maximum(y1, y2)
    row_min = max(0, int(math.floor(ylo.min() - 0.5)))
    row_max = min(height - 1, int(math.ceil(yhi.max())))
    for row in range(row_min, row_max + 1):
        py = row + 0.5
        active = (ylo <= py) & (py < yhi)
        if not active.any():
            continue
        xv = x1[active] + (py - y1[active]) * (x2[active] - x1[active]) / (y2[active] - y1[active])
        xv.sort()
        for k in range(0, xv.size - 1, 2):
            # pixels with center strictly to the left of the exit crossing and
            # at or right of the entry crossing, i.e. center in [x_in, x_out)
            c0 = int(math.ceil(xv[k] - 0.5))
            c1 = int(math.ceil(xv[k + 1] - 0.5))
            c0 = max(c0, 0)
            c1 = min(c1, width)
            if c0 < c1:
                out[row, c0:c1] = class_id


def rasterize(features: FeatureCollection, grid: GridSpec,
              priority=DEFAULT_PRIORITY) -> LabelRaster:
    """Burn class-resolved polygon features into a label raster.

    ``priority`` is a permutation of 0..5 giving the painting order; classes
    listed later overwrite earlier ones. Features mapped to nodata and
    features entirely outside the grid are skipped. Untouched pixels stay 255.
    """
    prio = tuple(priority)
    if sorted(prio) != list(range(NUM_CLASSES)):
        raise RasterError("priority must be a permutation of 0..5")
    out = np.full((grid.height, grid.width), NODATA, dtype=np.uint8)

    by_class: dict[int, list] = {c: [] for c in prio}
    for idx, f in enumerate(features):
        if f.class_id is None:
            raise RasterError(f"feature {idx} is not class-resolved")
        if f.class_id == NODATA:
            continue
        if f.geometry.kind == "polyline":
            raise RasterError(f"feature {idx} is a polyline; buffer it before rasterizing")
        by_class[f.class_id].append(f)

    for class_id in prio:
        for f in by_class[class_id]:
            for part in f.geometry.polygons():
                pixel_rings = [_ring_to_pixel(r, grid) for r in part]
                _paint_polygon(out, pixel_rings, class_id)
    return LabelRaster(grid=grid, data=out)


def point_in_polygon_oracle(features: FeatureCollection, grid: GridSpec,
                            priority=DEFAULT_PRIORITY) -> LabelRaster:
    """Independent per-pixel-center rasterization oracle.

    Evaluates the identical crossing predicate (half-open in y, strict
    ``x_cross > x_center``) at every pixel center instead of scanline runs.
    Intended for verification; O(pixels x edges).
    """
    prio = tuple(priority)
    if sorted(prio) != list(range(NUM_CLASSES)):
        raise RasterError("priority must be a permutation of 0..5")
    out = np.full((grid.height, grid.width), NODATA, dtype=np.uint8)
    px = np.arange(grid.width, dtype=np.float64) + 0.5
    py = np.arange(grid.height, dtype=np.float64) + 0.5

    by_class: dict[int, list] = {c: [] for c in prio}
    for f in features:
        if f.class_id is not None and f.class_id != NODATA:
            by_class[f.class_id].append(f)

    for class_id in prio:
        for f in by_class[class_id]:
            for part in f.geometry.polygons():
                pixel_rings = [_ring_to_pixel(r, grid) for r in part]
                x1, y1, x2, y2 = _edges_of_rings(pixel_rings)
                if x1.size == 0:
                    continue
                ylo = np.minimum(y1, y2)
                yhi = np.maximum(y1, y2)
                counts = np.zeros((grid.height, grid.width), dtype=np.int64)
                for e in range(x1.size):
                    rows = (ylo[e] <= py) & (py < yhi[e])
                    if not rows.any():
                        continue
                    xv = x1[e] + (py[rows] - y1[e]) * (x2[e] - x1[e]) / (y2[e] - y1[e])
                    counts[rows] += xv[:, None] > px[None, :]
                out[counts % 2 == 1] = class_id
    return LabelRaster(grid=grid, data=out)


def save_label_raster(raster: LabelRaster, path) -> None:
    """Write a single-channel 8-bit PNG plus a ``<path>.georef`` sidecar."""
    Image.fromarray(raster.data, mode="L").save(path)
    _write_georef(raster.grid, str(path) + ".georef")


def load_label_raster(path) -> LabelRaster:
    data = np.asarray(Image.open(path).convert("L"), dtype=np.uint8)
    grid = _read_georef(str(path) + ".georef", data.shape[1], data.shape[0])
    return LabelRaster(grid=grid, data=data)


def save_image_raster(raster: ImageRaster, path) -> None:
    Image.fromarray(raster.data, mode="RGB").save(path)
    _write_georef(raster.grid, str(path) + ".georef")


def load_image_raster(path) -> ImageRaster:
    data = np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)
    grid = _read_georef(str(path) + ".georef", data.shape[1], data.shape[0])
    return ImageRaster(grid=grid, data=data)


def _write_georef(grid: GridSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{grid.origin_x!r} {grid.origin_y!r} {grid.pixel_size!r}\n")


def _read_georef(path, width: int, height: int) -> GridSpec:
    with open(path, "r", encoding="utf-8") as fh:
        parts = fh.readline().split()
    if len(parts) != 3:
        raise RasterError(f"{path}: expected 'origin_x origin_y pixel_size'")
    ox, oy, ps = (float(p) for p in parts)
    return GridSpec(origin_x=ox, origin_y=oy, pixel_size=ps, width=width, height=height)

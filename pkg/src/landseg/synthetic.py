"""Synthetic geodata fixture: geometric shapes per class over a tiled grid.

Real orthophoto/vector archives cannot be redistributed here, so demos and
tests build a stand-in scene: per tile, rectangles of the vegetation classes
on a herbaceous background, a building block, and two road centerlines.
The fake orthophoto is painted from the rasterized labels with one distinct
base color per class plus seeded noise, which makes the scene separable by
construction. Optionally, some tiles are left mostly uncovered to exercise
the nodata filter.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import NODATA
from .classmap import ClassMap, save_class_map
from .features import Feature, FeatureCollection, Geometry, serialize_feature_collection
from .rasterize import GridSpec, ImageRaster, LabelRaster, rasterize, save_image_raster

SOURCE_CLASSES = {
    0: "Foret fermee de feuillus",
    1: "Foret ouverte",
    2: "Lande",
    3: "Formation herbacee",
    4: "Batiment",
    5: "Route",
}

# Photo-ish base colors per class; nodata stays black.
ORTHO_COLORS = np.array([
    (25, 70, 25),
    (95, 150, 80),
    (150, 110, 60),
    (165, 190, 95),
    (185, 70, 55),
    (110, 110, 118),
], dtype=np.int16)


@dataclass
class SyntheticSpec:
    tiles_x: int = 2
    tiles_y: int = 2
    tile_px: int = 256
    pixel_size: float = 0.5
    origin_x: float = 935000.0
    origin_y: float = 6390000.0
    seed: int = 7
    noise: float = 8.0
    uncovered_tiles: int = 0  # trailing tiles left >50% nodata

    @property
    def grid(self) -> GridSpec:
        return GridSpec(origin_x=self.origin_x, origin_y=self.origin_y,
                        pixel_size=self.pixel_size,
                        width=self.tiles_x * self.tile_px,
                        height=self.tiles_y * self.tile_px)


def _rect(x0: float, y0: float, x1: float, y1: float) -> Geometry:
    ring = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]
    return Geometry("polygon", [ring])


def _polygon_feature(cid: int, geom: Geometry) -> Feature:
    return Feature(geometry=geom, source_class=SOURCE_CLASSES[cid], class_id=cid)


def build_features(spec: SyntheticSpec) -> FeatureCollection:
    """Class-resolved features for the synthetic scene."""
    rng = np.random.default_rng(spec.seed)
    tile_m = spec.tile_px * spec.pixel_size
    features: list[Feature] = []
    n_tiles = spec.tiles_x * spec.tiles_y
    covered = n_tiles - spec.uncovered_tiles

    index = 0
    for ty in range(spec.tiles_y):
        for tx in range(spec.tiles_x):
            x0 = spec.origin_x + tx * tile_m
            y1 = spec.origin_y - ty * tile_m  # tile top
            y0 = y1 - tile_m

            def box(fx0, fy0, fx1, fy1, jitter=0.03):
                jx = float(rng.uniform(-jitter, jitter)) * tile_m
                jy = float(rng.uniform(-jitter, jitter)) * tile_m
                return _rect(x0 + fx0 * tile_m + jx, y0 + fy0 * tile_m + jy,
                             x0 + fx1 * tile_m + jx, y0 + fy1 * tile_m + jy)

            if index >= covered:
                # sliver of data only: the tile fails the 50% nodata cut
                features.append(_polygon_feature(0, box(0.0, 0.0, 1.0, 0.15, jitter=0.0)))
                index += 1
                continue

            # dense forest background first: the default paint priority
            # (0..5) lets every later class overwrite it
            features.append(_polygon_feature(0, _rect(x0, y0, x0 + tile_m, y0 + tile_m)))
            features.append(_polygon_feature(1, box(0.06, 0.56, 0.44, 0.94)))
            features.append(_polygon_feature(2, box(0.56, 0.56, 0.94, 0.94)))
            features.append(_polygon_feature(3, box(0.06, 0.06, 0.44, 0.44)))
            features.append(_polygon_feature(4, box(0.62, 0.14, 0.80, 0.32)))
            index += 1

    # roads: one horizontal and one vertical centerline per tile row/column
    road_width = 0.08 * tile_m
    width_m = spec.tiles_x * tile_m
    height_m = spec.tiles_y * tile_m
    for ty in range(spec.tiles_y):
        y = spec.origin_y - (ty + 0.5) * tile_m
        line = Geometry("polyline", [[(spec.origin_x, y), (spec.origin_x + width_m, y)]],
                        width_m=road_width)
        features.append(Feature(geometry=line, source_class=SOURCE_CLASSES[5], class_id=5))
    for tx in range(spec.tiles_x):
        x = spec.origin_x + (tx + 0.5) * tile_m
        line = Geometry("polyline", [[(x, spec.origin_y), (x, spec.origin_y - height_m)]],
                        width_m=road_width)
        features.append(Feature(geometry=line, source_class=SOURCE_CLASSES[5], class_id=5))
    return FeatureCollection(features)


def class_map(spec: SyntheticSpec | None = None) -> ClassMap:
    return ClassMap({name: cid for cid, name in SOURCE_CLASSES.items()})


def render_ortho(labels: LabelRaster, seed: int, noise: float) -> ImageRaster:
    """Fake orthophoto: per-class base color plus noise; nodata is black."""
    rng = np.random.default_rng(seed + 1)
    data = labels.data
    img = np.zeros(data.shape + (3,), dtype=np.int16)
    for cid in range(len(ORTHO_COLORS)):
        img[data == cid] = ORTHO_COLORS[cid]
    jitter = rng.normal(0.0, noise, size=img.shape)
    img = np.clip(img + jitter, 0, 255).astype(np.uint8)
    img[data == NODATA] = 0
    return ImageRaster(grid=labels.grid, data=img)


def generate(spec: SyntheticSpec) -> tuple[FeatureCollection, LabelRaster, ImageRaster]:
    """Features, rasterized labels, and a matching fake orthophoto."""
    from .features import buffer_polylines

    fc = build_features(spec)
    labels = rasterize(buffer_polylines(fc), spec.grid)
    ortho = render_ortho(labels, spec.seed, spec.noise)
    return fc, labels, ortho


def write_fixture(spec: SyntheticSpec, out_dir) -> dict[str, Path]:
    """Write features.geojson, ortho.png (+georef) and classmap.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fc, _, ortho = generate(spec)
    paths = {
        "features": out / "features.geojson",
        "ortho": out / "ortho.png",
        "classmap": out / "classmap.txt",
    }
    paths["features"].write_bytes(serialize_feature_collection(fc))
    save_image_raster(ortho, paths["ortho"])
    save_class_map(class_map(spec), paths["classmap"])
    return paths

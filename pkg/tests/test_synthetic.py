import numpy as np

from landseg.classmap import apply_class_map
from landseg.features import parse_feature_collection
from landseg.rasterize import load_image_raster
from landseg.synthetic import (SOURCE_CLASSES, SyntheticSpec, class_map,
                               generate, write_fixture)
from landseg.tiler import cut_tiles, filter_tiles


def test_all_six_classes_present_per_tile():
    spec = SyntheticSpec(tiles_x=2, tiles_y=2, tile_px=128)
    _, labels, _ = generate(spec)
    tiles = cut_tiles_from(labels, spec)
    for tile in tiles:
        present = set(np.unique(tile))
        assert set(range(6)) <= present


def cut_tiles_from(labels, spec):
    t = spec.tile_px
    return [labels.data[r:r + t, c:c + t]
            for r in range(0, labels.grid.height, t)
            for c in range(0, labels.grid.width, t)]


def test_ortho_matches_labels():
    spec = SyntheticSpec(tiles_x=1, tiles_y=1, tile_px=128)
    _, labels, ortho = generate(spec)
    # nodata pixels are pure black; class pixels are near their base color
    assert (ortho.data[labels.data == 255] == 0).all()
    dense = ortho.data[labels.data == 0]
    assert abs(int(dense[:, 1].mean()) - 70) < 10  # green channel of class 0


def test_deterministic():
    spec = SyntheticSpec(tiles_x=2, tiles_y=1, tile_px=64)
    _, l1, o1 = generate(spec)
    _, l2, o2 = generate(spec)
    assert (l1.data == l2.data).all()
    assert (o1.data == o2.data).all()


def test_uncovered_tiles_fail_the_nodata_cut():
    spec = SyntheticSpec(tiles_x=2, tiles_y=2, tile_px=64, uncovered_tiles=1)
    _, labels, ortho = generate(spec)
    from landseg.tiler import cut_tiles as ct
    tiles = ct(ortho, labels, spec.tile_px)
    kept = filter_tiles(tiles)
    assert len(tiles) == 4
    assert len(kept) == 3
    dropped = [t for t in tiles if t.nodata_fraction > 0.5]
    assert len(dropped) == 1


def test_fixture_files_parse_back(tmp_path):
    spec = SyntheticSpec(tiles_x=1, tiles_y=1, tile_px=64)
    paths = write_fixture(spec, tmp_path)
    fc = parse_feature_collection(paths["features"].read_bytes())
    assert len(fc) > 0
    assert {f.source_class for f in fc} == set(SOURCE_CLASSES.values())
    resolved = apply_class_map(fc, class_map(spec))
    assert all(f.class_id in range(6) for f in resolved)
    ortho = load_image_raster(paths["ortho"])
    assert ortho.grid.width == 64
    assert paths["classmap"].read_text().count("\t") >= 6

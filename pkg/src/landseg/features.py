"""Vector feature model: geometries, GeoJSON-subset parsing, polyline buffering.

Coordinates are meters in a projected CRS throughout; no reprojection is
performed. The supported interchange subset is FeatureCollection documents
whose features carry Polygon, MultiPolygon or LineString geometries.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from shapely.geometry import LineString
from shapely.geometry import MultiPolygon as ShapelyMultiPolygon
from shapely.geometry import Polygon as ShapelyPolygon

DEFAULT_LINE_WIDTH_M = 4.0

Ring = list[tuple[float, float]]


class FeatureError(ValueError):
    """Malformed or unsupported vector input."""


@dataclass
class Geometry:
    """A polygon (outer ring + holes), multipolygon, or width-tagged polyline.

    ``rings`` holds closed rings for polygon kinds (first ring of each part is
    the outer boundary) and the single open path for polylines. ``parts``
    gives, for multipolygons, the ring count of each part.
    """

    kind: str  # "polygon" | "multipolygon" | "polyline"
    rings: list[Ring]
    parts: list[int] | None = None
    width_m: float | None = None

    def validate(self) -> None:
        if self.kind not in ("polygon", "multipolygon", "polyline"):
            raise FeatureError(f"unsupported geometry kind {self.kind!r}")
        if not self.rings:
            raise FeatureError("geometry has no coordinates")
        for ring in self.rings:
            for x, y in ring:
                if not (math.isfinite(x) and math.isfinite(y)):
                    raise FeatureError("non-finite coordinate")
        if self.kind == "polyline":
            if len(self.rings) != 1 or len(self.rings[0]) < 2:
                raise FeatureError("polyline needs a single path of >= 2 points")
            if self.width_m is None or not (self.width_m > 0):
                raise FeatureError("polyline width_m must be > 0")
        else:
            for ring in self.rings:
                if len(ring) < 4:
                    raise FeatureError("ring has fewer than 4 points")
                if ring[0] != ring[-1]:
                    raise FeatureError("unclosed ring")
            if self.kind == "multipolygon":
                if not self.parts or sum(self.parts) != len(self.rings):
                    raise FeatureError("multipolygon part sizes inconsistent")

    def polygons(self) -> list[list[Ring]]:
        """Ring groups, one per polygon part."""
        if self.kind == "polygon":
            return [self.rings]
        if self.kind == "multipolygon":
            out, i = [], 0
            for n in self.parts or []:
                out.append(self.rings[i : i + n])
                i += n
            return out
        raise FeatureError("polyline has no polygon parts; buffer it first")


@dataclass
class Feature:
    geometry: Geometry
    source_class: str
    attributes: dict[str, str] = field(default_factory=dict)
    class_id: int | None = None


@dataclass
class FeatureCollection:
    features: list[Feature]

    def __len__(self) -> int:
        return len(self.features)

    def __iter__(self):
        return iter(self.features)


def _coerce_ring(raw, feature_idx: int) -> Ring:
    try:
        ring = [(float(p[0]), float(p[1])) for p in raw]
    except (TypeError, ValueError, IndexError):
        raise FeatureError(f"feature {feature_idx}: malformed coordinates") from None
    return ring


def _geometry_from_geojson(geom: dict, props: dict, feature_idx: int) -> Geometry:
    gtype = geom.get("type")
    coords = geom.get("coordinates")
    if coords is None:
        raise FeatureError(f"feature {feature_idx}: geometry has no coordinates")

    if gtype == "Polygon":
        rings = [_coerce_ring(r, feature_idx) for r in coords]
        g = Geometry("polygon", rings)
    elif gtype == "MultiPolygon":
        rings, parts = [], []
        for part in coords:
            part_rings = [_coerce_ring(r, feature_idx) for r in part]
            rings.extend(part_rings)
            parts.append(len(part_rings))
        g = Geometry("multipolygon", rings, parts=parts)
    elif gtype == "LineString":
        path = _coerce_ring(coords, feature_idx)
        width = props.get("width_m", DEFAULT_LINE_WIDTH_M)
        try:
            width = float(width)
        except (TypeError, ValueError):
            raise FeatureError(f"feature {feature_idx}: bad width_m {width!r}") from None
        g = Geometry("polyline", [path], width_m=width)
    else:
        raise FeatureError(f"feature {feature_idx}: unsupported geometry kind {gtype!r}")

    try:
        g.validate()
    except FeatureError as e:
        raise FeatureError(f"feature {feature_idx}: {e}") from None
    return g


def parse_feature_collection(raw: bytes | str, format: str = "geojson",
                             class_property: str = "class") -> FeatureCollection:
    """Parse a FeatureCollection document into validated features.

    Each feature's ``source_class`` is read from ``class_property`` in its
    properties; all other property values are kept as strings. Feature order
    is preserved. Errors name the offending feature index.
    """
    if format != "geojson":
        raise FeatureError(f"unsupported format {format!r}")
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise FeatureError(f"malformed document: {e}") from None
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise FeatureError("document is not a FeatureCollection")

    features = []
    for idx, fj in enumerate(doc.get("features", [])):
        geom = fj.get("geometry")
        if not isinstance(geom, dict):
            raise FeatureError(f"feature {idx}: missing geometry")
        props = fj.get("properties") or {}
        source_class = props.get(class_property)
        if not source_class or not isinstance(source_class, str):
            raise FeatureError(
                f"feature {idx}: missing or empty {class_property!r} property")
        g = _geometry_from_geojson(geom, props, idx)
        attributes = {k: str(v) for k, v in props.items() if k != class_property}
        features.append(Feature(geometry=g, source_class=source_class,
                                attributes=attributes))
    return FeatureCollection(features)


def serialize_feature_collection(fc: FeatureCollection,
                                 class_property: str = "class") -> bytes:
    """Inverse of :func:`parse_feature_collection`; coordinates survive exactly."""
    out = []
    for f in fc:
        g = f.geometry
        if g.kind == "polygon":
            geom = {"type": "Polygon", "coordinates": [[list(p) for p in r] for r in g.rings]}
        elif g.kind == "multipolygon":
            coords, i = [], 0
            for n in g.parts or []:
                coords.append([[list(p) for p in r] for r in g.rings[i : i + n]])
                i += n
            geom = {"type": "MultiPolygon", "coordinates": coords}
        else:
            geom = {"type": "LineString", "coordinates": [list(p) for p in g.rings[0]]}
        props = dict(f.attributes)
        props[class_property] = f.source_class
        if g.kind == "polyline":
            props["width_m"] = g.width_m
        out.append({"type": "Feature", "geometry": geom, "properties": props})
    doc = {"type": "FeatureCollection", "features": out}
    return json.dumps(doc).encode("utf-8")


def _shapely_to_geometry(shape) -> Geometry:
    if isinstance(shape, ShapelyPolygon):
        rings = [list(shape.exterior.coords)]
        rings += [list(i.coords) for i in shape.interiors]
        return Geometry("polygon", rings)
    if isinstance(shape, ShapelyMultiPolygon):
        rings, parts = [], []
        for poly in shape.geoms:
            part = [list(poly.exterior.coords)] + [list(i.coords) for i in poly.interiors]
            rings.extend(part)
            parts.append(len(part))
        return Geometry("multipolygon", rings, parts=parts)
    raise FeatureError(f"buffer produced unsupported geometry {shape.geom_type}")


def buffer_polyline(line: Geometry, width_m: float | None = None) -> Geometry:
    """Expand a centerline to a polygon of the given total width.

    Offsets the path by width/2 on each side with flat end caps and round
    joins at interior vertices. Straight single-segment lines buffer to an
    exact rectangle.
    """
    if line.kind != "polyline":
        raise FeatureError("buffer_polyline expects a polyline geometry")
    width = float(width_m if width_m is not None else line.width_m or 0.0)
    if not (width > 0):
        raise FeatureError("width_m must be > 0")
    path = line.rings[0]
    if len(set(path)) < 2:
        raise FeatureError("degenerate line (< 2 distinct points)")
    shape = LineString(path).buffer(width / 2.0, cap_style="flat", join_style="round")
    if shape.is_empty:
        raise FeatureError("buffer produced an empty polygon")
    return _shapely_to_geometry(shape)


def buffer_polylines(fc: FeatureCollection) -> FeatureCollection:
    """Replace every polyline feature by its buffered polygon; order kept."""
    out = []
    for f in fc:
        if f.geometry.kind == "polyline":
            g = buffer_polyline(f.geometry)
            out.append(Feature(geometry=g, source_class=f.source_class,
                               attributes=dict(f.attributes), class_id=f.class_id))
        else:
            out.append(f)
    return FeatureCollection(out)

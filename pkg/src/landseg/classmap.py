"""Source-class to target-class mapping.

Target ids: 0=dense forest, 1=sparse forest, 2=moor, 3=herbaceous formation,
4=building, 5=road; 255 marks nodata. The shipped default table is
illustrative only and meant to be replaced by a user-provided file.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import NODATA, NUM_CLASSES
from .features import Feature, FeatureCollection

VALID_IDS = frozenset(range(NUM_CLASSES)) | {NODATA}


class ClassMapError(ValueError):
    """Unknown source class or malformed class-map file."""


@dataclass
class ClassMap:
    entries: dict[str, int] = field(default_factory=dict)
    unknown_policy: str = "error"  # "error" | "nodata"

    def __post_init__(self):
        if not self.entries:
            raise ClassMapError("class map has no entries")
        if self.unknown_policy not in ("error", "nodata"):
            raise ClassMapError(f"unknown_policy {self.unknown_policy!r}")
        for src, cid in self.entries.items():
            if cid not in VALID_IDS:
                raise ClassMapError(f"class id {cid} for {src!r} not in 0..5 or 255")

    def resolve(self, source_class: str) -> int:
        if source_class in self.entries:
            return self.entries[source_class]
        if self.unknown_policy == "nodata":
            return NODATA
        raise ClassMapError(f"unknown source class {source_class!r}")


# Illustrative defaults loosely following French national vegetation /
# topography vocabularies; real projects supply their own table.
DEFAULT_ENTRIES = {
    "Foret fermee de feuillus": 0,
    "Foret fermee de coniferes": 0,
    "Foret fermee mixte": 0,
    "Foret ouverte": 1,
    "Lande": 2,
    "Formation herbacee": 3,
    "Batiment": 4,
    "Route": 5,
}


def default_class_map(unknown_policy: str = "error") -> ClassMap:
    return ClassMap(dict(DEFAULT_ENTRIES), unknown_policy)


def load_class_map(path, unknown_policy: str = "error") -> ClassMap:
    """Read a two-column ``source_class<TAB>target_id`` file; ``#`` comments."""
    entries: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ClassMapError(f"{path}:{lineno}: expected source<TAB>id")
            src, raw_id = parts[0], parts[1].strip()
            try:
                cid = int(raw_id)
            except ValueError:
                raise ClassMapError(f"{path}:{lineno}: bad class id {raw_id!r}") from None
            if cid not in VALID_IDS:
                raise ClassMapError(f"{path}:{lineno}: class id {cid} out of range")
            entries[src] = cid
    return ClassMap(entries, unknown_policy)


def save_class_map(cmap: ClassMap, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# source_class<TAB>target_id\n")
        for src, cid in cmap.entries.items():
            fh.write(f"{src}\t{cid}\n")


def apply_class_map(fc: FeatureCollection, cmap: ClassMap) -> FeatureCollection:
    """Annotate every feature with its resolved class id; order preserved."""
    out = []
    for f in fc:
        try:
            cid = cmap.resolve(f.source_class)
        except ClassMapError as e:
            raise ClassMapError(str(e)) from None
        out.append(Feature(geometry=f.geometry, source_class=f.source_class,
                           attributes=dict(f.attributes), class_id=cid))
    return FeatureCollection(out)

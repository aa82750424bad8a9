"""Land-cover segmentation toolkit.

Builds six-class segmentation datasets from vector layers plus orthophotos,
and trains/evaluates a small shifted-window transformer segmenter with a
UPerNet-style decoder on CPU.
"""

__version__ = "0.1.0"

CLASS_NAMES = (
    "dense_forest",
    "sparse_forest",
    "moor",
    "herbaceous",
    "building",
    "road",
)

NUM_CLASSES = len(CLASS_NAMES)
NODATA = 255

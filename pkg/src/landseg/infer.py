"""Sliding-window inference for images larger than the training crop."""

from __future__ import annotations

import numpy as np


def _starts(full: int, window: int, stride: int) -> list[int]:
    if full <= window:
        return [0]
    out = list(range(0, full - window + 1, stride))
    if out[-1] != full - window:
        out.append(full - window)
    return out


def sliding_infer(logits_fn, image: np.ndarray, window: int,
                  stride: int | None = None) -> np.ndarray:
    """Average overlapping window logits per pixel, then argmax.

    ``logits_fn(patch) -> (h, w, num_classes)`` is called on every window of
    the (H, W, 3) image; windows are clamped to the image edge so coverage is
    complete. Images smaller than the window are zero-padded and cropped
    back. Deterministic: ties in the argmax resolve to the lowest class id.
    """
    stride = window if stride is None else stride
    if stride <= 0 or stride > window:
        raise ValueError("stride must be in 1..window")
    height, width = image.shape[:2]

    pad_h = max(0, window - height)
    pad_w = max(0, window - width)
    if pad_h or pad_w:
        image = np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)))
    full_h, full_w = image.shape[:2]

    acc = None
    hits = np.zeros((full_h, full_w, 1), dtype=np.float64)
    for top in _starts(full_h, window, stride):
        for left in _starts(full_w, window, stride):
            patch = image[top:top + window, left:left + window]
            logits = np.asarray(logits_fn(patch), dtype=np.float64)
            if acc is None:
                acc = np.zeros((full_h, full_w, logits.shape[-1]), dtype=np.float64)
            acc[top:top + window, left:left + window] += logits
            hits[top:top + window, left:left + window] += 1.0
    acc /= hits
    labels = np.argmax(acc, axis=-1).astype(np.uint8)
    return labels[:height, :width]

"""Pyramid-pooling decode head with top-down lateral fusion.

Works on the backbone's four feature maps (strides 4..32). The deepest level
goes through adaptive average pools at scales 1, 2, 3 and 6; pooled context
is fused back, laterals are merged top-down, and the concatenated pyramid is
convolved and bilinearly upsampled to the input resolution with one logit
channel per class.

Convolutions use replicate (edge) padding so constant feature maps stay
constant all the way to the logits, and GELU activations keep the head as
smooth as the backbone (finite-difference checks need a kink-free loss).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

POOL_SCALES = (1, 2, 3, 6)


@dataclass
class ConvParams:
    weight: Tensor  # (k*k*Cin, Cout)
    bias: Tensor  # (Cout,)
    kernel: int


@dataclass
class HeadParams:
    ppm: list[ConvParams]  # 1x1 after each pooling scale
    bottleneck: ConvParams  # 3x3 over deepest level + pooled context
    laterals: list[ConvParams]  # 1x1 on the three shallower levels
    fpn: list[ConvParams]  # 3x3 after top-down fusion
    fuse: ConvParams  # 3x3 over the concatenated pyramid
    classifier: ConvParams  # 1x1 -> num_classes


@lru_cache(maxsize=None)
def _im2col_index(height: int, width: int, kernel: int) -> np.ndarray:
    """(H*W, k*k) gather indices with edge-clamped (replicate) padding."""
    half = kernel // 2
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    taps = []
    for dr in range(-half, half + 1):
        for dc in range(-half, half + 1):
            rr = np.clip(rows + dr, 0, height - 1)
            cc = np.clip(cols + dc, 0, width - 1)
            taps.append(rr * width + cc)
    idx = np.stack(taps, axis=-1).reshape(height * width, kernel * kernel)
    idx.setflags(write=False)
    return idx


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    """Same-size convolution via im2col; odd kernel, replicate padding."""
    height, width, cin = x.shape
    k = params.kernel
    flat = ad.reshape(x, (height * width, cin))
    if k == 1:
        out = ad.add(ad.matmul(flat, params.weight), params.bias)
    else:
        cols = ad.gather(flat, _im2col_index(height, width, k))
        cols = ad.reshape(cols, (height * width, k * k * cin))
        out = ad.add(ad.matmul(cols, params.weight), params.bias)
    return ad.reshape(out, (height, width, params.weight.shape[1]))


@lru_cache(maxsize=None)
def _pool_matrix(n_in: int, n_out: int, dtype_name: str) -> np.ndarray:
    """Adaptive average pooling as a dense (n_out, n_in) row-stochastic matrix."""
    mat = np.zeros((n_out, n_in), dtype=np.dtype(dtype_name))
    for i in range(n_out):
        start = (i * n_in) // n_out
        end = -(-((i + 1) * n_in) // n_out)  # ceil division
        mat[i, start:end] = 1.0 / (end - start)
    mat.setflags(write=False)
    return mat


@lru_cache(maxsize=None)
def _bilinear_matrix(n_in: int, n_out: int, dtype_name: str) -> np.ndarray:
    """Half-pixel-centered bilinear interpolation as a (n_out, n_in) matrix."""
    mat = np.zeros((n_out, n_in), dtype=np.dtype(dtype_name))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        lo = int(np.floor(src))
        t = src - lo
        mat[i, min(max(lo, 0), n_in - 1)] += 1.0 - t
        mat[i, min(max(lo + 1, 0), n_in - 1)] += t
    mat.setflags(write=False)
    return mat


def _apply_separable(x: Tensor, row_mat: np.ndarray, col_mat: np.ndarray) -> Tensor:
    """out[i, j, c] = sum_{h, w} row_mat[i, h] * col_mat[j, w] * x[h, w, c]."""
    height, width, channels = x.shape
    out_h, out_w = row_mat.shape[0], col_mat.shape[0]
    rows = ad.constant(row_mat, dtype=x.dtype)
    cols = ad.constant(col_mat, dtype=x.dtype)
    y = ad.matmul(rows, ad.reshape(x, (height, width * channels)))
    y = ad.transpose(ad.reshape(y, (out_h, width, channels)), (1, 0, 2))
    y = ad.matmul(cols, ad.reshape(y, (width, out_h * channels)))
    return ad.transpose(ad.reshape(y, (out_w, out_h, channels)), (1, 0, 2))


def adaptive_avg_pool(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    height, width, _ = x.shape
    name = x.dtype.name
    return _apply_separable(x, _pool_matrix(height, out_hw[0], name),
                            _pool_matrix(width, out_hw[1], name))


def bilinear_resize(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    height, width, _ = x.shape
    if (height, width) == tuple(out_hw):
        return x
    name = x.dtype.name
    return _apply_separable(x, _bilinear_matrix(height, out_hw[0], name),
                            _bilinear_matrix(width, out_hw[1], name))


def upernet_head(pyramid: list[Tensor], params: HeadParams,
                 out_hw: tuple[int, int]) -> Tensor:
    """Four-level pyramid -> per-pixel class logits at ``out_hw`` resolution."""
    if len(pyramid) != 4:
        raise ValueError("expected a 4-level feature pyramid")
    deepest = pyramid[-1]
    dh, dw, _ = deepest.shape

    pooled = [deepest]
    for scale, conv in zip(POOL_SCALES, params.ppm):
        p = adaptive_avg_pool(deepest, (scale, scale))
        p = ad.gelu(conv2d(p, conv))
        pooled.append(bilinear_resize(p, (dh, dw)))
    top = ad.gelu(conv2d(ad.concat(pooled, axis=-1), params.bottleneck))

    laterals = [ad.gelu(conv2d(level, conv))
                for level, conv in zip(pyramid[:3], params.laterals)]
    laterals.append(top)
    for i in range(2, -1, -1):
        up = bilinear_resize(laterals[i + 1], laterals[i].shape[:2])
        laterals[i] = ad.add(laterals[i], up)

    outs = [ad.gelu(conv2d(laterals[i], params.fpn[i])) for i in range(3)]
    outs.append(laterals[3])
    target = outs[0].shape[:2]
    outs = [bilinear_resize(o, target) for o in outs]
    fused = ad.gelu(conv2d(ad.concat(outs, axis=-1), params.fuse))
    logits = conv2d(fused, params.classifier)
    return bilinear_resize(logits, out_hw)

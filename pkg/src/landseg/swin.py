"""Shifted-window transformer backbone.

Feature maps are (H, W, C) tensors. Self-attention runs inside
non-overlapping M x M windows; every second block displaces the window grid
by M//2 through a cyclic shift and masks attention between tokens whose
pre-shift positions fall in different wrap-around regions, which lets
information cross window boundaries without growing the attention cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MASK_VALUE = -1e4  # effectively -inf under softmax, without NaN hazards


class ShapeError(ValueError):
    pass


# -- index plumbing (cached, read-only) ---------------------------------------

def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def _window_index(height: int, width: int, m: int) -> np.ndarray:
    idx = np.arange(height * width, dtype=np.int64).reshape(height, width)
    idx = idx.reshape(height // m, m, width // m, m).transpose(0, 2, 1, 3)
    return _frozen(idx.reshape(-1, m * m))


@lru_cache(maxsize=None)
def _window_inverse_index(height: int, width: int, m: int) -> np.ndarray:
    forward = _window_index(height, width, m).reshape(-1)
    inverse = np.empty_like(forward)
    inverse[forward] = np.arange(forward.size, dtype=np.int64)
    return _frozen(inverse.reshape(height, width))


@lru_cache(maxsize=None)
def _shift_index(height: int, width: int, s: int) -> np.ndarray:
    rows = (np.arange(height, dtype=np.int64) + s) % height
    cols = (np.arange(width, dtype=np.int64) + s) % width
    return _frozen(rows[:, None] * width + cols[None, :])


@lru_cache(maxsize=None)
def _patch_index(height: int, width: int, p: int) -> np.ndarray:
    idx = np.arange(height * width, dtype=np.int64).reshape(height, width)
    idx = idx.reshape(height // p, p, width // p, p).transpose(0, 2, 1, 3)
    return _frozen(idx.reshape(-1, p * p))


@lru_cache(maxsize=None)
def _merge_index(height: int, width: int) -> np.ndarray:
    return _patch_index(height, width, 2)


# -- window operations ---------------------------------------------------------

def window_partition(x: Tensor, m: int) -> Tensor:
    """(H, W, C) -> (nW, M*M, C), windows row-major, tokens row-major."""
    height, width, channels = x.shape
    if height % m or width % m:
        raise ShapeError(f"({height}, {width}) not divisible by window {m}")
    flat = ad.reshape(x, (height * width, channels))
    return ad.gather(flat, _window_index(height, width, m))


def window_reverse(windows: Tensor, m: int, height: int, width: int) -> Tensor:
    """Exact inverse of :func:`window_partition`."""
    n_windows, tokens, channels = windows.shape
    if tokens != m * m or n_windows * tokens != height * width:
        raise ShapeError("window tensor does not match the target shape")
    flat = ad.reshape(windows, (height * width, channels))
    return ad.gather(flat, _window_inverse_index(height, width, m))


def cyclic_shift(x: Tensor, s: int) -> Tensor:
    """Toroidal roll: out[i][j] = x[(i+s) mod H][(j+s) mod W]."""
    height, width, channels = x.shape
    if s % height == 0 and s % width == 0:
        return x
    flat = ad.reshape(x, (height * width, channels))
    return ad.gather(flat, _shift_index(height, width, s % (height * width)))


@lru_cache(maxsize=None)
def shift_region_labels(height: int, width: int, m: int, s: int) -> np.ndarray:
    """Region id of every pre-shift position under the 3x3 decomposition.

    After a cyclic shift by ``s``, rows below height-(M-s) and the wrapped
    first ``s`` rows share windows; tokens may only attend within their own
    region (likewise for columns).
    """
    def bands(n: int) -> np.ndarray:
        band = np.zeros(n, dtype=np.int64)
        band[np.arange(n) < s] = 2
        band[np.arange(n) >= n - (m - s)] = 1
        return band

    return _frozen(bands(height)[:, None] * 3 + bands(width)[None, :])


@lru_cache(maxsize=None)
def shift_attention_mask(height: int, width: int, m: int, s: int) -> np.ndarray:
    """(nW, M*M, M*M) additive mask: 0 within a region, -1e4 across regions."""
    if height % m or width % m:
        raise ShapeError(f"({height}, {width}) not divisible by window {m}")
    if s not in (0, m // 2):
        raise ShapeError(f"shift {s} invalid for window {m} (use 0 or {m // 2})")
    n_windows = (height // m) * (width // m)
    if s == 0:
        return _frozen(np.zeros((n_windows, m * m, m * m), dtype=np.float32))
    labels = shift_region_labels(height, width, m, s)
    shifted = labels.reshape(-1)[_shift_index(height, width, s)]
    windows = shifted.reshape(-1)[_window_index(height, width, m)]  # (nW, M*M)
    differs = windows[:, :, None] != windows[:, None, :]
    return _frozen(np.where(differs, np.float32(MASK_VALUE), np.float32(0.0)))


@lru_cache(maxsize=None)
def relative_position_index(m: int) -> np.ndarray:
    """(M*M, M*M) bijective index of (drow, dcol) into a (2M-1)^2 bias table."""
    coords = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :] + (m - 1)
    return _frozen((rel[0] * (2 * m - 1) + rel[1]).astype(np.int64))


# -- parameter views -----------------------------------------------------------

@dataclass
class AttentionParams:
    qkv_w: Tensor
    qkv_b: Tensor
    proj_w: Tensor
    proj_b: Tensor
    rel_bias: Tensor  # ((2M-1)^2, heads)
    num_heads: int


@dataclass
class BlockParams:
    norm1_g: Tensor
    norm1_b: Tensor
    attn: AttentionParams
    norm2_g: Tensor
    norm2_b: Tensor
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor


@dataclass
class StageParams:
    blocks: list[BlockParams]
    out_norm_g: Tensor
    out_norm_b: Tensor
    merge_w: Tensor | None  # (4C, 2C), absent on the last stage


@dataclass
class BackboneParams:
    patch_w: Tensor  # (patch^2 * 3, C)
    patch_b: Tensor
    embed_norm_g: Tensor
    embed_norm_b: Tensor
    stages: list[StageParams]


# -- forward pieces ------------------------------------------------------------

def patch_embed(image: Tensor, weight: Tensor, bias: Tensor, patch: int = 4) -> Tensor:
    """Linear embedding of non-overlapping patch pixels: (H, W, 3) -> (H/p, W/p, C)."""
    height, width, channels = image.shape
    if height % patch or width % patch:
        raise ShapeError(f"({height}, {width}) not divisible by patch {patch}")
    idx = _patch_index(height, width, patch)
    cols = ad.gather(ad.reshape(image, (height * width, channels)), idx)
    cols = ad.reshape(cols, (idx.shape[0], patch * patch * channels))
    out = ad.add(ad.matmul(cols, weight), bias)
    return ad.reshape(out, (height // patch, width // patch, weight.shape[1]))


def patch_merging(x: Tensor, weight: Tensor) -> Tensor:
    """Concatenate 2x2 neighborhoods (row-major) and reduce 4C -> 2C, no bias."""
    height, width, channels = x.shape
    if height % 2 or width % 2:
        raise ShapeError(f"({height}, {width}) must be even for patch merging")
    idx = _merge_index(height, width)
    cols = ad.gather(ad.reshape(x, (height * width, channels)), idx)
    cols = ad.reshape(cols, (idx.shape[0], 4 * channels))
    out = ad.matmul(cols, weight)
    return ad.reshape(out, (height // 2, width // 2, weight.shape[1]))


def window_attention(x_windows: Tensor, params: AttentionParams,
                     mask: np.ndarray | None = None, return_attn: bool = False):
    """Multi-head self-attention inside each window.

    Per head: softmax(Q K^T / sqrt(d) + relative-position bias + mask) V,
    heads re-concatenated and linearly projected.
    """
    n_windows, tokens, channels = x_windows.shape
    heads = params.num_heads
    if channels % heads:
        raise ShapeError(f"{heads} heads do not divide {channels} channels")
    head_dim = channels // heads
    m = int(math.isqrt(tokens))
    if m * m != tokens:
        raise ShapeError("window token count is not a square")

    qkv = ad.add(ad.matmul(x_windows, params.qkv_w), params.qkv_b)
    qkv = ad.reshape(qkv, (n_windows, tokens, 3, heads, head_dim))
    qkv = ad.transpose(qkv, (2, 0, 3, 1, 4))  # (3, nW, heads, T, d)
    q = ad.reshape(ad.narrow(qkv, 0, 0, 1), (n_windows, heads, tokens, head_dim))
    k = ad.reshape(ad.narrow(qkv, 0, 1, 1), (n_windows, heads, tokens, head_dim))
    v = ad.reshape(ad.narrow(qkv, 0, 2, 1), (n_windows, heads, tokens, head_dim))

    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(head_dim))
    bias = ad.gather(params.rel_bias, relative_position_index(m))  # (T, T, heads)
    scores = ad.add(scores, ad.transpose(bias, (2, 0, 1)))
    if mask is not None:
        scores = ad.add(scores, ad.constant(mask[:, None, :, :], dtype=scores.dtype))
    attn = ad.softmax(scores, axis=-1)

    out = ad.matmul(attn, v)  # (nW, heads, T, d)
    out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (n_windows, tokens, channels))
    out = ad.add(ad.matmul(out, params.proj_w), params.proj_b)
    ad.assert_finite(out, "window_attention")
    if return_attn:
        return out, attn
    return out


def swin_block(x: Tensor, params: BlockParams, window: int, shifted: bool) -> Tensor:
    """Pre-norm transformer block: x + WMSA(LN(x)), then + MLP(LN(.)).

    The attention branch zero-pads bottom/right to a window multiple and
    crops back, so any (H, W) is accepted.
    """
    height, width, _ = x.shape
    s = window // 2 if shifted else 0

    h = ad.layer_norm(x, params.norm1_g, params.norm1_b)
    pad_h = (window - height % window) % window
    pad_w = (window - width % window) % window
    h = ad.pad_hw(h, pad_h, pad_w)
    hp, wp = height + pad_h, width + pad_w
    if s:
        h = cyclic_shift(h, s)
    windows = window_partition(h, window)
    mask = shift_attention_mask(hp, wp, window, s) if s else None
    attended = window_attention(windows, params.attn, mask)
    h = window_reverse(attended, window, hp, wp)
    if s:
        h = cyclic_shift(h, -s)
    h = ad.crop_hw(h, height, width)
    x = ad.add(x, h)

    m = ad.layer_norm(x, params.norm2_g, params.norm2_b)
    m = ad.gelu(ad.add(ad.matmul(m, params.fc1_w), params.fc1_b))
    m = ad.add(ad.matmul(m, params.fc2_w), params.fc2_b)
    return ad.add(x, m)


def backbone_forward(image: Tensor, params: BackboneParams, window: int,
                     patch: int = 4) -> list[Tensor]:
    """Image -> four feature maps at strides 4, 8, 16, 32.

    Stage s yields (H/4/2^s, W/4/2^s, C*2^s); blocks alternate plain and
    shifted windows within each stage.
    """
    height, width, _ = image.shape
    if height % 32 or width % 32:
        raise ShapeError(f"({height}, {width}) not divisible by 32; pad first")
    x = patch_embed(image, params.patch_w, params.patch_b, patch)
    x = ad.layer_norm(x, params.embed_norm_g, params.embed_norm_b)
    features = []
    for stage in params.stages:
        for i, block in enumerate(stage.blocks):
            x = swin_block(x, block, window, shifted=(i % 2 == 1))
        features.append(ad.layer_norm(x, stage.out_norm_g, stage.out_norm_b))
        if stage.merge_w is not None:
            x = patch_merging(x, stage.merge_w)
    return features

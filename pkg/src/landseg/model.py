"""Segmenter assembly: configuration, parameters, forward pass, checkpoints.

Parameters live in a flat ``name -> Tensor`` store with canonical dotted
paths (``stages.0.blocks.1.attn.qkv.weight`` ...). Checkpoints serialize that
store verbatim: magic ``SWSEG1``, a JSON header embedding the configuration,
then one shape-prefixed little-endian float32 record per tensor.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import NUM_CLASSES
from . import autodiff as ad
from .autodiff import Tensor
from .swin import (AttentionParams, BackboneParams, BlockParams, StageParams,
                   backbone_forward)
from .upernet import POOL_SCALES, ConvParams, HeadParams, upernet_head

CHECKPOINT_MAGIC = b"SWSEG1"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SwinConfig:
    """Backbone/head hyperparameters.

    Defaults are the desk-scale configuration: small enough that CPU
    training and finite-difference checks stay fast. ``large_config`` mirrors
    the published large variant (window 12 at 384 crops) but is not a
    supported test path.
    """

    patch_size: int = 4
    window_size: int = 4
    embed_dim: int = 32
    depths: tuple[int, ...] = (2, 2, 2, 2)
    num_heads: tuple[int, ...] = (1, 2, 4, 8)
    mlp_ratio: int = 4
    num_classes: int = NUM_CLASSES
    decoder_channels: int = 0  # 0 -> 2 * embed_dim

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(self.depths))
        object.__setattr__(self, "num_heads", tuple(self.num_heads))
        if self.window_size < 2:
            raise ModelError("window_size must be >= 2")
        if len(self.depths) != 4 or len(self.num_heads) != 4:
            raise ModelError("depths and num_heads must list 4 stages")
        for s in range(4):
            if self.stage_dim(s) % self.num_heads[s]:
                raise ModelError(f"stage {s}: heads must divide channel width")
        if self.decoder_channels == 0:
            object.__setattr__(self, "decoder_channels", 2 * self.embed_dim)

    def stage_dim(self, stage: int) -> int:
        return self.embed_dim * (2 ** stage)


def desk_config() -> SwinConfig:
    return SwinConfig()


def tiny_config() -> SwinConfig:
    """Smallest useful model; the gradient-check target."""
    return SwinConfig(embed_dim=8, depths=(1, 1, 1, 1), num_heads=(1, 2, 4, 8),
                      window_size=4)


def large_config() -> SwinConfig:
    return SwinConfig(embed_dim=192, depths=(2, 2, 18, 2),
                      num_heads=(6, 12, 24, 48), window_size=12,
                      decoder_channels=512)


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def init_params(config: SwinConfig, seed: int = 0, dtype=np.float32) -> dict[str, Tensor]:
    """Truncated-normal weights (sigma 0.02), zero biases and bias tables."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def weight(name, shape):
        params[name] = ad.parameter(_trunc_normal(rng, shape), dtype=dtype)

    def zeros(name, shape):
        params[name] = ad.parameter(np.zeros(shape), dtype=dtype)

    def norm(prefix, dim):
        params[f"{prefix}.gamma"] = ad.parameter(np.ones(dim), dtype=dtype)
        params[f"{prefix}.beta"] = ad.parameter(np.zeros(dim), dtype=dtype)

    c0 = config.embed_dim
    weight("patch_embed.weight", (config.patch_size ** 2 * 3, c0))
    zeros("patch_embed.bias", (c0,))
    norm("embed_norm", c0)

    table = (2 * config.window_size - 1) ** 2
    for s in range(4):
        dim = config.stage_dim(s)
        hidden = config.mlp_ratio * dim
        for b in range(config.depths[s]):
            p = f"stages.{s}.blocks.{b}"
            norm(f"{p}.norm1", dim)
            weight(f"{p}.attn.qkv.weight", (dim, 3 * dim))
            zeros(f"{p}.attn.qkv.bias", (3 * dim,))
            weight(f"{p}.attn.proj.weight", (dim, dim))
            zeros(f"{p}.attn.proj.bias", (dim,))
            zeros(f"{p}.attn.rel_bias", (table, config.num_heads[s]))
            norm(f"{p}.norm2", dim)
            weight(f"{p}.mlp.fc1.weight", (dim, hidden))
            zeros(f"{p}.mlp.fc1.bias", (hidden,))
            weight(f"{p}.mlp.fc2.weight", (hidden, dim))
            zeros(f"{p}.mlp.fc2.bias", (dim,))
        norm(f"stages.{s}.out_norm", dim)
        if s < 3:
            weight(f"stages.{s}.merge.weight", (4 * dim, 2 * dim))

    ch = config.decoder_channels
    deep = config.stage_dim(3)

    def conv(name, cin, cout, k):
        weight(f"{name}.weight", (k * k * cin, cout))
        zeros(f"{name}.bias", (cout,))

    for i in range(len(POOL_SCALES)):
        conv(f"head.ppm.{i}", deep, ch, 1)
    conv("head.bottleneck", deep + len(POOL_SCALES) * ch, ch, 3)
    for i in range(3):
        conv(f"head.lateral.{i}", config.stage_dim(i), ch, 1)
        conv(f"head.fpn.{i}", ch, ch, 3)
    conv("head.fuse", 4 * ch, ch, 3)
    conv("head.classifier", ch, config.num_classes, 1)
    return params


def build_views(params: dict[str, Tensor], config: SwinConfig) -> tuple[BackboneParams, HeadParams]:
    """Assemble structured parameter views over the flat store."""
    def get(name):
        if name not in params:
            raise ModelError(f"missing parameter {name!r}")
        return params[name]

    stages = []
    for s in range(4):
        blocks = []
        for b in range(config.depths[s]):
            p = f"stages.{s}.blocks.{b}"
            attn = AttentionParams(qkv_w=get(f"{p}.attn.qkv.weight"),
                                   qkv_b=get(f"{p}.attn.qkv.bias"),
                                   proj_w=get(f"{p}.attn.proj.weight"),
                                   proj_b=get(f"{p}.attn.proj.bias"),
                                   rel_bias=get(f"{p}.attn.rel_bias"),
                                   num_heads=config.num_heads[s])
            blocks.append(BlockParams(norm1_g=get(f"{p}.norm1.gamma"),
                                      norm1_b=get(f"{p}.norm1.beta"),
                                      attn=attn,
                                      norm2_g=get(f"{p}.norm2.gamma"),
                                      norm2_b=get(f"{p}.norm2.beta"),
                                      fc1_w=get(f"{p}.mlp.fc1.weight"),
                                      fc1_b=get(f"{p}.mlp.fc1.bias"),
                                      fc2_w=get(f"{p}.mlp.fc2.weight"),
                                      fc2_b=get(f"{p}.mlp.fc2.bias")))
        stages.append(StageParams(blocks=blocks,
                                  out_norm_g=get(f"stages.{s}.out_norm.gamma"),
                                  out_norm_b=get(f"stages.{s}.out_norm.beta"),
                                  merge_w=get(f"stages.{s}.merge.weight") if s < 3 else None))
    backbone = BackboneParams(patch_w=get("patch_embed.weight"),
                              patch_b=get("patch_embed.bias"),
                              embed_norm_g=get("embed_norm.gamma"),
                              embed_norm_b=get("embed_norm.beta"),
                              stages=stages)

    def conv(name, k):
        return ConvParams(weight=get(f"{name}.weight"), bias=get(f"{name}.bias"), kernel=k)

    head = HeadParams(ppm=[conv(f"head.ppm.{i}", 1) for i in range(len(POOL_SCALES))],
                      bottleneck=conv("head.bottleneck", 3),
                      laterals=[conv(f"head.lateral.{i}", 1) for i in range(3)],
                      fpn=[conv(f"head.fpn.{i}", 3) for i in range(3)],
                      fuse=conv("head.fuse", 3),
                      classifier=conv("head.classifier", 1))
    return backbone, head


def normalize_image(image_u8: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 RGB -> float in [-1, 1]; the single normalization used everywhere."""
    return (np.asarray(image_u8, dtype=dtype) / dtype(127.5)) - dtype(1.0)


class Segmenter:
    """A parameter store plus the forward pass wiring them together."""

    def __init__(self, config: SwinConfig, params: dict[str, Tensor] | None = None,
                 seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = params if params is not None else init_params(config, seed, dtype)
        self.backbone, self.head = build_views(self.params, config)

    def forward(self, image: np.ndarray) -> Tensor:
        """Float image (H, W, 3) -> logits Tensor (H, W, num_classes).

        Inputs are zero-padded bottom/right to a multiple of 32 and the
        logits cropped back, so any size at least 1x1 works.
        """
        height, width = image.shape[:2]
        pad_h = (32 - height % 32) % 32
        pad_w = (32 - width % 32) % 32
        x = ad.constant(np.pad(np.asarray(image, dtype=self.dtype),
                               ((0, pad_h), (0, pad_w), (0, 0))), dtype=self.dtype)
        pyramid = backbone_forward(x, self.backbone, self.config.window_size,
                                   self.config.patch_size)
        logits = upernet_head(pyramid, self.head, (height + pad_h, width + pad_w))
        return ad.crop_hw(logits, height, width)

    def predict_logits(self, image: np.ndarray) -> np.ndarray:
        return self.forward(image).data

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def save(self, path):
        save_checkpoint(self.params, self.config, path)

    @classmethod
    def load(cls, path, dtype=np.float32) -> "Segmenter":
        params, config = load_checkpoint(path, dtype=dtype)
        return cls(config, params=params, dtype=dtype)


def save_checkpoint(params: dict[str, Tensor], config: SwinConfig, path) -> None:
    header = json.dumps({"format": 1, "config": asdict(config),
                         "tensors": len(params)}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name in sorted(params):
            data = np.ascontiguousarray(params[name].data, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path, dtype=np.float32) -> tuple[dict[str, Tensor], SwinConfig]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ModelError(f"{path} is not a {CHECKPOINT_MAGIC.decode()} checkpoint")
    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    cfg_dict = dict(header["config"])
    cfg_dict["depths"] = tuple(cfg_dict["depths"])
    cfg_dict["num_heads"] = tuple(cfg_dict["num_heads"])
    config = SwinConfig(**cfg_dict)

    params: dict[str, Tensor] = {}
    for _ in range(header["tensors"]):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += 4 * count
        params[name] = ad.parameter(data.copy(), dtype=dtype)
    if offset != len(blob):
        raise ModelError(f"{path}: trailing bytes after the last tensor record")
    return params, config

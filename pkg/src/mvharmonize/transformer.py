"""Multi-view bilateral grid transformer.

Frames are cut into non-overlapping patches, embedded with a shared learned
positional table and passed through an encoder that alternates frame-wise
and global (all frames jointly) self-attention.  The decoder alternates
frame-wise self-attention on source frames with cross-attention into the
reference frame's tokens.  A small head turns every source token into one
column of a bilateral grid (``D`` affine transforms plus ``D``
log-confidences), anchored at the identity transform.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .bilateral_grid import AFFINE_PARAMS, slice_affine, slice_confidence

CKPT_MAGIC = b"BGTX"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    image_size: tuple = (64, 64)
    patch_size: tuple = (16, 16)
    embed_dim: int = 64
    heads: int = 4
    enc_blocks: int = 3
    dec_blocks: int = 3
    guidance_bins: int = 8
    mlp_ratio: int = 4

    def __post_init__(self):
        (h, w), (hp, wp) = self.image_size, self.patch_size
        if h % hp or w % wp:
            raise ValueError(f"image size {self.image_size} is not divisible by patch size {self.patch_size}")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if self.guidance_bins < 2:
            raise ValueError("guidance_bins must be >= 2")

    @property
    def grid_hw(self) -> tuple[int, int]:
        return self.image_size[0] // self.patch_size[0], self.image_size[1] // self.patch_size[1]

    @property
    def num_patches(self) -> int:
        h_s, w_s = self.grid_hw
        return h_s * w_s

    @property
    def patch_dim(self) -> int:
        return self.patch_size[0] * self.patch_size[1] * 3

    def to_u32(self) -> list[int]:
        return [*self.image_size, *self.patch_size, self.embed_dim, self.heads,
                self.enc_blocks, self.dec_blocks, self.guidance_bins, self.mlp_ratio]

    @classmethod
    def from_u32(cls, v) -> "ModelConfig":
        return cls((v[0], v[1]), (v[2], v[3]), *v[4:])


def patchify(images: torch.Tensor, patch_size) -> torch.Tensor:
    """``(..., H, W, 3)`` -> ``(..., J, H_P * W_P * 3)``, patches in row-major order."""
    hp, wp = patch_size
    h, w = images.shape[-3:-1]
    if h % hp or w % wp:
        raise ValueError(f"image {h}x{w} is not divisible into {hp}x{wp} patches")
    lead = images.shape[:-3]
    x = images.reshape(*lead, h // hp, hp, w // wp, wp, 3)
    x = x.transpose(-4, -3)  # (..., rows, cols, hp, wp, 3)
    return x.reshape(*lead, (h // hp) * (w // wp), hp * wp * 3)


def unpatchify(patches: torch.Tensor, image_size, patch_size) -> torch.Tensor:
    (h, w), (hp, wp) = image_size, patch_size
    lead = patches.shape[:-2]
    x = patches.reshape(*lead, h // hp, w // wp, hp, wp, 3)
    return x.transpose(-4, -3).reshape(*lead, h, w, 3)


def multi_head_attention(queries, keys_values, wq, bq, wk, bk, wv, bv, wo, bo, heads: int):
    """Scaled dot-product attention of ``(..., M, C)`` queries over ``(..., K, C)`` tokens."""
    c = queries.shape[-1]
    dh = c // heads

    def split(x, weight, bias):
        y = F.linear(x, weight, bias)
        return y.reshape(*y.shape[:-1], heads, dh).transpose(-3, -2)  # (..., heads, T, dh)

    q = split(queries, wq, bq)
    k = split(keys_values, wk, bk)
    v = split(keys_values, wv, bv)
    scores = q @ k.transpose(-2, -1) / math.sqrt(dh)
    out = torch.softmax(scores, dim=-1) @ v
    out = out.transpose(-3, -2).reshape(*queries.shape[:-1], c)
    return F.linear(out, wo, bo)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)

    def forward(self, queries, keys_values):
        return multi_head_attention(
            queries, keys_values,
            self.q.weight, self.q.bias, self.k.weight, self.k.bias,
            self.v.weight, self.v.bias, self.o.weight, self.o.bias,
            self.heads,
        )


class Mlp(nn.Module):
    def __init__(self, dim: int, ratio: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * ratio)
        self.fc2 = nn.Linear(dim * ratio, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class SelfBlock(nn.Module):
    """Pre-norm self-attention + MLP over the token axis of ``(B, T, C)``."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h)
        return x + self.mlp(self.norm2(x))


class CrossBlock(nn.Module):
    """Pre-norm cross-attention from ``x`` into ``context`` + MLP."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x, context):
        x = x + self.attn(self.norm_q(x), self.norm_kv(context))
        return x + self.mlp(self.norm2(x))


class GridTransformer(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        c = cfg.embed_dim
        self.patch_embed = nn.Linear(cfg.patch_dim, c)
        self.pos_embed = nn.Parameter(torch.zeros(cfg.num_patches, c))
        self.enc_frame = nn.ModuleList(SelfBlock(c, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.enc_blocks))
        self.enc_global = nn.ModuleList(SelfBlock(c, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.enc_blocks))
        self.dec_frame = nn.ModuleList(SelfBlock(c, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.dec_blocks))
        self.dec_cross = nn.ModuleList(CrossBlock(c, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.dec_blocks))
        self.head_norm = nn.LayerNorm(c)
        self.head_fc1 = nn.Linear(c, c)
        self.head_fc2 = nn.Linear(c, cfg.guidance_bins * (AFFINE_PARAMS + 1))
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int = 0) -> None:
        """Truncated-normal (std 0.02) linears, unit layer norms, zero final head layer."""
        gen = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.Linear):
                    nn.init.trunc_normal_(module.weight, std=0.02, a=-0.04, b=0.04, generator=gen)
                    module.bias.zero_()
                elif isinstance(module, nn.LayerNorm):
                    module.weight.fill_(1.0)
                    module.bias.zero_()
            nn.init.trunc_normal_(self.pos_embed, std=0.02, a=-0.04, b=0.04, generator=gen)
            self.head_fc2.weight.zero_()
            self.head_fc2.bias.zero_()

    # -- stages -----------------------------------------------------------
    def embed(self, patches: torch.Tensor) -> torch.Tensor:
        """``(N, J, P)`` patches -> ``(N, J, C)`` tokens; no frame-index term."""
        if patches.shape[-2:] != (self.cfg.num_patches, self.cfg.patch_dim):
            raise ValueError(f"patch tensor {tuple(patches.shape)} does not match the model config")
        return self.patch_embed(patches) + self.pos_embed

    def encode(self, tokens: torch.Tensor) -> torch.Tensor:
        n, j, c = tokens.shape
        x = tokens
        for frame_blk, global_blk in zip(self.enc_frame, self.enc_global):
            x = frame_blk(x)
            x = global_blk(x.reshape(1, n * j, c)).reshape(n, j, c)
        return x

    def decode(self, ref_tokens: torch.Tensor, src_tokens: torch.Tensor) -> torch.Tensor:
        ctx = ref_tokens.unsqueeze(0).expand_as(src_tokens)
        x = src_tokens
        for frame_blk, cross_blk in zip(self.dec_frame, self.dec_cross):
            x = frame_blk(x)
            x = cross_blk(x, ctx)
        return x

    def predict_grids(self, decoded: torch.Tensor):
        """``(M, J, C)`` tokens -> affine ``(M, h_s, w_s, D, 12)`` and log-confidence ``(M, h_s, w_s, D, 1)``."""
        cfg = self.cfg
        h_s, w_s = cfg.grid_hw
        d = cfg.guidance_bins
        m, j, _ = decoded.shape
        if j != h_s * w_s:
            raise ValueError(f"{j} tokens cannot fill a {h_s}x{w_s} grid")
        out = self.head_fc2(F.gelu(self.head_fc1(self.head_norm(decoded))))
        affine = out[..., : d * AFFINE_PARAMS].reshape(m, h_s, w_s, d, AFFINE_PARAMS)
        log_conf = out[..., d * AFFINE_PARAMS:].reshape(m, h_s, w_s, d, 1)
        eye = torch.eye(3, 4, dtype=out.dtype).reshape(AFFINE_PARAMS)
        return affine + eye, log_conf

    def forward(self, frames: torch.Tensor):
        """``(N, H, W, 3)`` frames at model resolution, reference first."""
        if frames.shape[0] < 2:
            raise ValueError("need a reference and at least one source frame")
        if tuple(frames.shape[1:3]) != tuple(self.cfg.image_size):
            raise ValueError(f"frames are {tuple(frames.shape[1:3])}, model expects {self.cfg.image_size}")
        tokens = self.embed(patchify(frames, self.cfg.patch_size))
        enc = self.encode(tokens)
        return self.predict_grids(self.decode(enc[0], enc[1:]))

    def harmonize(self, frames: torch.Tensor, native=None):
        """Predict grids from ``frames`` and slice them against ``native`` sources.

        ``native`` defaults to ``frames[1:]``.  Returns ``(images, confidence,
        grids, log_conf_grids)``.
        """
        grids, cgrids = self(frames)
        src = frames[1:] if native is None else native
        # Slice in the sources' precision; float32 grid values are exact in float64.
        g, cg = grids.to(src.dtype), cgrids.to(src.dtype)
        return slice_affine(g, src), slice_confidence(cg, src), grids, cgrids


def resize_frames(frames: torch.Tensor, size) -> torch.Tensor:
    """Antialiased bilinear resize of ``(N, H, W, 3)`` frames."""
    if tuple(frames.shape[1:3]) == tuple(size):
        return frames
    x = frames.permute(0, 3, 1, 2)
    x = F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=False, antialias=True)
    return x.permute(0, 2, 3, 1).contiguous()


@torch.no_grad()
def harmonize_sequence(model: GridTransformer, ref, sources):
    """Harmonize ``sources`` toward ``ref``.

    The network sees frames resized to the model resolution; the predicted
    grids are sliced against the sources at their native resolution.
    Returns lists of numpy arrays: images (unclamped), confidence maps,
    affine grids and log-confidence grids.
    """
    if len(sources) == 0:
        raise ValueError("no source frames to harmonize")
    dtype = next(model.parameters()).dtype
    native = torch.stack([torch.as_tensor(np.asarray(s, dtype=np.float64)) for s in sources])
    ref_t = torch.as_tensor(np.asarray(ref, dtype=np.float64))
    if native.shape[1:] != ref_t.shape:
        raise ValueError("reference and sources must share dimensions")
    small = resize_frames(torch.cat([ref_t[None], native]), model.cfg.image_size).to(dtype)
    out, conf, grids, cgrids = model.harmonize(small, native)
    return (
        [o.numpy() for o in out],
        [c.numpy() for c in conf],
        [g.numpy() for g in grids],
        [g.numpy() for g in cgrids],
    )


def save_checkpoint(model: GridTransformer, path) -> None:
    """Write the ``BGTX`` checkpoint: config as u32s, then named float32 tensors."""
    cfg_vals = model.cfg.to_u32()
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), struct.pack(f"<{len(cfg_vals)}I", *cfg_vals)]
    state = model.state_dict()
    parts.append(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        raw = name.encode("utf-8")
        arr = tensor.detach().cpu().numpy().astype("<f4")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> GridTransformer:
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a BGTX checkpoint")
    pos = 4
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    n_cfg = len(fields(ModelConfig)) + 2
    cfg = ModelConfig.from_u32(struct.unpack_from(f"<{n_cfg}I", data, pos))
    pos += 4 * n_cfg
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    state = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            n = int(np.prod(shape)) if rank else 1
            if pos + 4 * n > len(data):
                raise ValueError(f"{path}: truncated tensor {name}")
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(shape)
            pos += 4 * n
            state[name] = torch.from_numpy(arr.astype(np.float32))
    except struct.error:
        raise ValueError(f"{path}: truncated checkpoint") from None
    model = GridTransformer(cfg)
    model.load_state_dict(state)
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


__all__ = [
    "ModelConfig", "GridTransformer", "patchify", "unpatchify", "multi_head_attention",
    "harmonize_sequence", "resize_frames", "save_checkpoint", "load_checkpoint", "count_parameters",
]

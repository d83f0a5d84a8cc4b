"""ViT encoder: patchify, fixed 2-D sine-cosine positions, pre-norm transformer blocks."""
from __future__ import annotations

import numpy as np

from .. import numerics as nx
from ..numerics import NonFiniteError, ShapeError, Tensor
from .config import ViTConfig

Params = dict[str, Tensor]


# -- patches ---------------------------------------------------------------

def patchify(images, cfg: ViTConfig) -> np.ndarray:
    """(H, W, C) or (B, H, W, C) -> (B, n_patches, p*p*C), row-major patch order."""
    x = images.data if isinstance(images, Tensor) else np.asarray(images)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.shape[1:] != (cfg.image_size, cfg.image_size, cfg.in_chans):
        raise ShapeError(f"patchify: image shape {x.shape[1:]} does not match config "
                         f"{(cfg.image_size, cfg.image_size, cfg.in_chans)}")
    B, g, p, c = x.shape[0], cfg.grid, cfg.patch_size, cfg.in_chans
    out = x.reshape(B, g, p, g, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(B, g * g, p * p * c)
    return np.ascontiguousarray(out)


def unpatchify(patches: np.ndarray, cfg: ViTConfig) -> np.ndarray:
    x = np.asarray(patches)
    B, g, p, c = x.shape[0], cfg.grid, cfg.patch_size, cfg.in_chans
    if x.shape[1:] != (g * g, p * p * c):
        raise ShapeError(f"unpatchify: patches shape {x.shape[1:]} does not match config")
    return x.reshape(B, g, g, p, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(B, g * p, g * p, c)


def _sincos_1d(dim: int, pos: np.ndarray) -> np.ndarray:
    omega = 1.0 / 10000 ** (np.arange(dim // 2, dtype=np.float64) / (dim / 2.0))
    out = pos[:, None] * omega[None, :]
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def sinusoidal_pos_embed(n_positions: int, dim: int) -> np.ndarray:
    """Fixed 2-D embedding: half the channels encode the grid row, half the column.

    Positions fill a ceil(sqrt(n))-wide grid in row-major order.
    """
    if dim % 2 or dim <= 0:
        raise ValueError(f"position embedding dim must be positive and even, got {dim}")
    side = int(np.ceil(np.sqrt(n_positions)))
    idx = np.arange(n_positions)
    rows, cols = (idx // side).astype(np.float64), (idx % side).astype(np.float64)
    d_row = 2 * ((dim // 2 + 1) // 2)
    d_col = dim - d_row
    parts = [_sincos_1d(d_row, rows)]
    if d_col:
        parts.append(_sincos_1d(d_col, cols))
    return np.concatenate(parts, axis=1)


# -- init ------------------------------------------------------------------

def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2 * std
    return x.astype(dtype)


def _p(arr) -> Tensor:
    return Tensor(arr, requires_grad=True)


def init_linear(params: Params, name: str, fan_in: int, fan_out: int, rng, zero: bool = False) -> None:
    w = np.zeros((fan_in, fan_out), np.float32) if zero else trunc_normal(rng, (fan_in, fan_out))
    params[f"{name}.weight"] = _p(w)
    params[f"{name}.bias"] = _p(np.zeros(fan_out, np.float32))


def init_norm(params: Params, name: str, dim: int) -> None:
    params[f"{name}.weight"] = _p(np.ones(dim, np.float32))
    params[f"{name}.bias"] = _p(np.zeros(dim, np.float32))


def init_block(params: Params, prefix: str, width: int, hidden: int, rng) -> None:
    init_norm(params, f"{prefix}.norm1", width)
    init_linear(params, f"{prefix}.attn.qkv", width, 3 * width, rng)
    init_linear(params, f"{prefix}.attn.proj", width, width, rng)
    init_norm(params, f"{prefix}.norm2", width)
    init_linear(params, f"{prefix}.mlp.fc1", width, hidden, rng)
    init_linear(params, f"{prefix}.mlp.fc2", hidden, width, rng)


def init_encoder(cfg: ViTConfig, rng: np.random.Generator) -> Params:
    params: Params = {}
    init_linear(params, "encoder.patch_embed", cfg.patch_dim, cfg.width, rng)
    for i in range(cfg.depth_blocks):
        init_block(params, f"encoder.blocks.{i}", cfg.width, cfg.mlp_hidden, rng)
    return params


# -- forward ---------------------------------------------------------------

def lin(params: Params, name: str, x: Tensor) -> Tensor:
    return nx.linear(x, params[f"{name}.weight"], params[f"{name}.bias"])


def norm(params: Params, name: str, x: Tensor) -> Tensor:
    return nx.layer_norm(x, params[f"{name}.weight"], params[f"{name}.bias"])


def attention(params: Params, prefix: str, x: Tensor, heads: int) -> Tensor:
    out = nx.self_attention(lin(params, f"{prefix}.qkv", x), heads)
    return lin(params, f"{prefix}.proj", out)


def attention_reference(params: Params, prefix: str, x: Tensor, heads: int) -> Tensor:
    """Unfused attention built from primitive ops; used to cross-check the fused op."""
    B, N, D = x.shape
    dh = D // heads
    qkv = lin(params, f"{prefix}.qkv", x).reshape(B, N, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = nx.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    out = nx.matmul(nx.softmax(scores), v).transpose(0, 2, 1, 3).reshape(B, N, D)
    return lin(params, f"{prefix}.proj", out)


def block(params: Params, prefix: str, x: Tensor, heads: int) -> Tensor:
    x = x + attention(params, f"{prefix}.attn", norm(params, f"{prefix}.norm1", x), heads)
    h = nx.gelu(lin(params, f"{prefix}.mlp.fc1", norm(params, f"{prefix}.norm2", x)))
    return x + lin(params, f"{prefix}.mlp.fc2", h)


def run_blocks(params: Params, prefix: str, x: Tensor, n_blocks: int, heads: int) -> Tensor:
    for i in range(n_blocks):
        try:
            x = block(params, f"{prefix}.{i}", x, heads)
        except NonFiniteError as e:
            raise NonFiniteError(f"{prefix}.{i}: {e}") from None
    return x


def encode(cfg: ViTConfig, params: Params, patches, visible_idx: np.ndarray | None = None) -> Tensor:
    """Encode (B, N, patch_dim) patches; with ``visible_idx`` (B, K) only those patches.

    Position embeddings always follow each patch's original grid location.
    """
    p = patches.data if isinstance(patches, Tensor) else np.asarray(patches)
    if p.ndim == 2:
        p = p[None]
    if p.shape[1:] != (cfg.n_patches, cfg.patch_dim):
        raise ShapeError(f"encode: patches shape {p.shape} does not match config "
                         f"(B, {cfg.n_patches}, {cfg.patch_dim})")
    pos = sinusoidal_pos_embed(cfg.n_patches, cfg.width).astype(params["encoder.patch_embed.weight"].dtype)
    if visible_idx is not None:
        visible_idx = np.asarray(visible_idx)
        if visible_idx.ndim == 1:
            visible_idx = np.broadcast_to(visible_idx, (p.shape[0], visible_idx.size))
        if visible_idx.size and (np.any(np.diff(visible_idx, axis=1) <= 0) or visible_idx.min() < 0
                                 or visible_idx.max() >= cfg.n_patches):
            raise ValueError("visible_idx must be strictly increasing and inside the patch grid")
        b = np.arange(p.shape[0])[:, None]
        p = p[b, visible_idx]
        pos = pos[visible_idx]
    x = lin(params, "encoder.patch_embed", Tensor(p.astype(pos.dtype, copy=False))) + Tensor(pos)
    return run_blocks(params, "encoder.blocks", x, cfg.depth_blocks, cfg.heads)


def encoder_flops(cfg: ViTConfig, n_tokens: int) -> int:
    """Multiply-accumulate count of one encoder pass over ``n_tokens`` tokens."""
    d, h = cfg.width, cfg.mlp_hidden
    per_block = n_tokens * (3 * d * d + d * d + 2 * d * h) + 2 * n_tokens * n_tokens * d
    return n_tokens * cfg.patch_dim * d + cfg.depth_blocks * per_block


def cast_params(params: Params, dtype) -> Params:
    return {k: Tensor(v.data.astype(dtype), requires_grad=True) for k, v in params.items()}

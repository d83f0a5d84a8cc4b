"""Masked autoencoder pretraining forward pass and loss."""
from __future__ import annotations

import warnings

import numpy as np

from .. import numerics as nx
from ..numerics import ShapeError, Tensor
from .config import MaeConfig, ViTConfig
from .vit import Params, encode, init_block, init_linear, init_norm, lin, norm, patchify, run_blocks, \
    sinusoidal_pos_embed, trunc_normal


def mae_mask(n_patches: int, mask_ratio: float, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform random (visible, masked) split of patch indices, both sorted."""
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError(f"mask_ratio must lie in (0, 1), got {mask_ratio}")
    n_vis = int(round(n_patches * (1.0 - mask_ratio)))
    perm = np.random.default_rng(rng_seed).permutation(n_patches)
    return np.sort(perm[:n_vis]), np.sort(perm[n_vis:])


def init_mae_decoder(cfg: ViTConfig, mcfg: MaeConfig, rng: np.random.Generator) -> Params:
    params: Params = {}
    init_norm(params, "mae.norm", cfg.width)
    init_linear(params, "mae.decoder_embed", cfg.width, mcfg.decoder_width, rng)
    params["mae.mask_token"] = Tensor(trunc_normal(rng, (1, 1, mcfg.decoder_width)), requires_grad=True)
    hidden = int(round(mcfg.decoder_width * cfg.mlp_ratio))
    for i in range(mcfg.decoder_blocks):
        init_block(params, f"mae.blocks.{i}", mcfg.decoder_width, hidden, rng)
    init_norm(params, "mae.decoder_norm", mcfg.decoder_width)
    init_linear(params, "mae.decoder_pred", mcfg.decoder_width, cfg.patch_dim, rng)
    return params


def batch_masks(n_patches: int, mask_ratio: float, seeds) -> tuple[np.ndarray, np.ndarray]:
    vis, msk = zip(*(mae_mask(n_patches, mask_ratio, int(s)) for s in seeds))
    return np.stack(vis), np.stack(msk)


def mae_decode(cfg: ViTConfig, mcfg: MaeConfig, params: Params, latent: Tensor,
               visible_idx: np.ndarray) -> Tensor:
    """Visible encodings (B, K, width) -> per-patch pixel predictions (B, n_patches, patch_dim)."""
    B, K, _ = latent.shape
    n = cfg.n_patches
    x = lin(params, "mae.decoder_embed", norm(params, "mae.norm", latent))
    x = nx.scatter_rows(x, visible_idx, n)
    is_masked = np.ones((B, n, 1), dtype=x.dtype)
    is_masked[np.arange(B)[:, None], visible_idx] = 0.0
    x = x + params["mae.mask_token"] * Tensor(is_masked)
    x = x + Tensor(sinusoidal_pos_embed(n, mcfg.decoder_width).astype(x.dtype))
    x = run_blocks(params, "mae.blocks", x, mcfg.decoder_blocks, mcfg.decoder_heads)
    return lin(params, "mae.decoder_pred", norm(params, "mae.decoder_norm", x))


def mae_forward(cfg: ViTConfig, mcfg: MaeConfig, params: Params, images, rng_seed) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Reconstruct all patches from a random visible subset.

    ``rng_seed`` is one seed or one per image. Returns the reconstruction, the
    masked indices (B, M) and the target patches (B, n_patches, patch_dim).
    """
    patches = patchify(images, cfg)
    B = patches.shape[0]
    seeds = np.atleast_1d(rng_seed)
    if seeds.size == 1 and B > 1:
        seeds = np.array([np.random.SeedSequence([int(seeds[0]), i]).generate_state(1)[0] for i in range(B)])
    if seeds.size != B:
        raise ValueError(f"got {seeds.size} mask seeds for {B} images")
    vis, msk = batch_masks(cfg.n_patches, mcfg.mask_ratio, seeds)
    latent = encode(cfg, params, patches, vis)
    return mae_decode(cfg, mcfg, params, latent, vis), msk, patches


def mae_loss(reconstruction: Tensor, target_patches, masked_idx: np.ndarray) -> Tensor:
    """Mean squared error over masked patches only; 0 when nothing is masked."""
    target = np.asarray(target_patches.data if isinstance(target_patches, Tensor) else target_patches)
    if reconstruction.shape != target.shape:
        raise ShapeError(f"mae_loss: reconstruction {reconstruction.shape} vs target {target.shape}")
    masked_idx = np.asarray(masked_idx)
    if masked_idx.ndim == 1:
        masked_idx = np.broadcast_to(masked_idx, (reconstruction.shape[0], masked_idx.size))
    if masked_idx.size == 0:
        warnings.warn("mae_loss: empty masked set, loss defined as 0", RuntimeWarning, stacklevel=2)
        return nx.mul(nx.tsum(reconstruction), 0.0)
    pred = nx.gather_rows(reconstruction, masked_idx)
    b = np.arange(target.shape[0])[:, None]
    return nx.mse_loss(pred, target[b, masked_idx].astype(pred.dtype, copy=False))

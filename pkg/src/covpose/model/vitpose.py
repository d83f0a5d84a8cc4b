"""Deconvolution pose head: 14x14 patch grid -> 28 -> 56 heatmaps."""
from __future__ import annotations

import numpy as np

from .. import numerics as nx
from ..heatmap import HeatmapStack
from ..numerics import NonFiniteError, Tensor
from .config import HeadConfig, ViTConfig
from .vit import Params, encode, init_norm, lin, norm, patchify, trunc_normal


def init_head(cfg: ViTConfig, hcfg: HeadConfig, rng: np.random.Generator) -> Params:
    k = hcfg.kernel
    params: Params = {}
    init_norm(params, "head.norm", cfg.width)
    params["head.deconv1.weight"] = Tensor(trunc_normal(rng, (cfg.width, k, k, hcfg.channels)), requires_grad=True)
    params["head.deconv1.bias"] = Tensor(np.zeros(hcfg.channels, np.float32), requires_grad=True)
    init_norm(params, "head.norm1", hcfg.channels)
    params["head.deconv2.weight"] = Tensor(trunc_normal(rng, (hcfg.channels, k, k, hcfg.channels)), requires_grad=True)
    params["head.deconv2.bias"] = Tensor(np.zeros(hcfg.channels, np.float32), requires_grad=True)
    init_norm(params, "head.norm2", hcfg.channels)
    params["head.final.weight"] = Tensor(np.zeros((hcfg.channels, hcfg.n_joints), np.float32), requires_grad=True)
    params["head.final.bias"] = Tensor(np.zeros(hcfg.n_joints, np.float32), requires_grad=True)
    return params


def head_forward(cfg: ViTConfig, params: Params, tokens: Tensor) -> Tensor:
    """(B, n_patches, width) encodings -> (B, 4g, 4g, joints) heatmaps."""
    B = tokens.shape[0]
    g = cfg.grid
    try:
        x = norm(params, "head.norm", tokens).reshape(B, g, g, cfg.width)
        x = nx.conv_transpose2d(x, params["head.deconv1.weight"], params["head.deconv1.bias"], stride=2, padding=1)
        x = nx.relu(norm(params, "head.norm1", x))
        x = nx.conv_transpose2d(x, params["head.deconv2.weight"], params["head.deconv2.bias"], stride=2, padding=1)
        x = nx.relu(norm(params, "head.norm2", x))
        return lin(params, "head.final", x)
    except NonFiniteError as e:
        raise NonFiniteError(f"pose head: {e}") from None


def vitpose_forward(cfg: ViTConfig, params: Params, images) -> Tensor:
    """Full-image encoding followed by the heatmap head; (B, 56, 56, 14) for 224 inputs."""
    tokens = encode(cfg, params, patchify(images, cfg))
    return head_forward(cfg, params, tokens)


def predict_heatmaps(cfg: ViTConfig, params: Params, images) -> list[HeatmapStack]:
    out = vitpose_forward(cfg, params, images).data
    return [HeatmapStack(m) for m in out]

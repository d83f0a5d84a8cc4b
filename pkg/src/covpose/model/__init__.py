from .checkpoint import Checkpoint, StageRecord, clone_params, init_encoder_from, load_checkpoint, save_checkpoint
from .config import HeadConfig, MaeConfig, ViTConfig
from .mae import batch_masks, init_mae_decoder, mae_decode, mae_forward, mae_loss, mae_mask
from .vit import cast_params, encode, encoder_flops, init_encoder, patchify, sinusoidal_pos_embed, unpatchify
from .vitpose import head_forward, init_head, predict_heatmaps, vitpose_forward

__all__ = [
    "Checkpoint", "HeadConfig", "MaeConfig", "StageRecord", "ViTConfig", "batch_masks", "cast_params",
    "clone_params", "encode", "encoder_flops", "head_forward", "init_encoder", "init_encoder_from",
    "init_head", "init_mae_decoder", "load_checkpoint", "mae_decode", "mae_forward", "mae_loss", "mae_mask",
    "patchify", "predict_heatmaps", "save_checkpoint", "sinusoidal_pos_embed", "unpatchify",
    "vitpose_forward",
]

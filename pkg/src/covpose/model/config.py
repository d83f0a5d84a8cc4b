from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 224
    patch_size: int = 16
    width: int = 768
    depth_blocks: int = 12
    heads: int = 12
    mlp_ratio: float = 4.0
    in_chans: int = 3

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.width % 2:
            raise ValueError("width must be even for sinusoidal position embeddings")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.in_chans

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.width * self.mlp_ratio))

    @classmethod
    def base(cls) -> "ViTConfig":
        return cls(width=768, depth_blocks=12, heads=12)

    @classmethod
    def tiny(cls) -> "ViTConfig":
        return cls(width=64, depth_blocks=4, heads=4)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MaeConfig:
    mask_ratio: float = 0.75
    decoder_width: int = 512
    decoder_blocks: int = 2
    decoder_heads: int = 16

    def __post_init__(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        if self.decoder_width % self.decoder_heads:
            raise ValueError("decoder_width not divisible by decoder_heads")

    def n_visible(self, n_patches: int) -> int:
        return int(round(n_patches * (1.0 - self.mask_ratio)))

    @classmethod
    def base(cls) -> "MaeConfig":
        return cls(0.75, 512, 2, 16)

    @classmethod
    def tiny(cls) -> "MaeConfig":
        return cls(0.75, 64, 2, 4)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class HeadConfig:
    channels: int = 256
    n_joints: int = 14
    kernel: int = 4

    @classmethod
    def base(cls) -> "HeadConfig":
        return cls(256)

    @classmethod
    def tiny(cls) -> "HeadConfig":
        return cls(32)

    def to_dict(self) -> dict:
        return asdict(self)

"""Mask prior: U-Net-style encoder emitting per-stage mask features, and the
foreground AND operation used by the masked discriminators."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

BACKGROUND_VALUE = -1.0
LEVEL_CHANNELS = (32, 16, 8)  # coarse (16x16) to fine (64x64)


class MaskError(ValueError):
    pass


@dataclass
class MaskPyramid:
    """Per-stage mask features; levels[i] has the spatial size of stage i's hidden state."""

    levels: list[torch.Tensor]  # each (B, K_i, S_i, S_i), S = 16, 32, 64


def _check_binary(mask: torch.Tensor) -> None:
    if not torch.isin(mask, torch.tensor([0.0, 1.0], dtype=mask.dtype)).all():
        raise MaskError("mask must be strictly binary")


def apply_mask(image: torch.Tensor, mask: torch.Tensor, background: float = BACKGROUND_VALUE) -> torch.Tensor:
    """Keep foreground pixels, replace background with a constant fill.

    mask is nearest-neighbor resized when its spatial size differs from the
    image's. Idempotent for binary masks."""
    _check_binary(mask)
    if mask.dim() == image.dim() - 1:
        mask = mask.unsqueeze(-3)  # add channel axis
    if mask.shape[-2:] != image.shape[-2:]:
        mask = F.interpolate(
            mask.float() if mask.dim() == 4 else mask.float().unsqueeze(0),
            size=image.shape[-2:],
            mode="nearest",
        )
        if mask.shape[-2:] != image.shape[-2:]:
            raise MaskError(f"mask {tuple(mask.shape)} does not match image {tuple(image.shape)}")
    mask = mask.to(image.dtype)
    return image * mask + background * (1.0 - mask)


def _conv_block(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1),
        nn.LeakyReLU(0.2, inplace=True),
        nn.Conv2d(out_ch, out_ch, 3, padding=1),
        nn.LeakyReLU(0.2, inplace=True),
    )


class MaskEncoder(nn.Module):
    """Contracting/expanding encoder over the binary mask.

    The coarse (16x16) level comes from the deepest path, so low-resolution
    stages see heavily convolved low-frequency features; the fine (64x64)
    level rides the shallowest skip connection."""

    def __init__(self, base_resolution: int = 64, level_channels: tuple[int, int, int] = LEVEL_CHANNELS):
        super().__init__()
        self.base_resolution = base_resolution
        ch = 16
        self.enc1 = _conv_block(1, ch)  # 64
        self.enc2 = _conv_block(ch, ch * 2)  # 32
        self.enc3 = _conv_block(ch * 2, ch * 4)  # 16
        self.bottleneck = _conv_block(ch * 4, ch * 4)  # 8
        self.up3 = _conv_block(ch * 4 + ch * 4, ch * 4)  # 16, deepest output
        self.up2 = _conv_block(ch * 4 + ch * 2, ch * 2)  # 32
        self.up1 = _conv_block(ch * 2 + ch, ch)  # 64, shallowest
        self.head_coarse = nn.Conv2d(ch * 4, level_channels[0], 1)
        self.head_mid = nn.Conv2d(ch * 2, level_channels[1], 1)
        self.head_fine = nn.Conv2d(ch, level_channels[2], 1)

    def forward(self, mask: torch.Tensor) -> MaskPyramid:
        _check_binary(mask)
        if mask.dim() == 2:
            mask = mask.unsqueeze(0)
        if mask.dim() == 3:
            mask = mask.unsqueeze(1)
        if mask.shape[-1] != self.base_resolution or mask.shape[-2] != self.base_resolution:
            raise MaskError(
                f"expected {self.base_resolution}x{self.base_resolution} mask, got {tuple(mask.shape[-2:])}"
            )
        x = mask.to(self.enc1[0].weight.dtype)
        e1 = self.enc1(x)
        e2 = self.enc2(F.avg_pool2d(e1, 2))
        e3 = self.enc3(F.avg_pool2d(e2, 2))
        b = self.bottleneck(F.avg_pool2d(e3, 2))
        d3 = self.up3(torch.cat([F.interpolate(b, scale_factor=2, mode="nearest"), e3], dim=1))
        d2 = self.up2(torch.cat([F.interpolate(d3, scale_factor=2, mode="nearest"), e2], dim=1))
        d1 = self.up1(torch.cat([F.interpolate(d2, scale_factor=2, mode="nearest"), e1], dim=1))
        return MaskPyramid(levels=[self.head_coarse(d3), self.head_mid(d2), self.head_fine(d1)])


def encode_mask(encoder: MaskEncoder, mask: torch.Tensor) -> MaskPyramid:
    return encoder(mask)

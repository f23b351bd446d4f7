"""Cross-modal matching pretraining: image region encoder + attribute encoder
trained jointly with the contrastive attention-matching loss, then frozen for
adversarial training."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .attr_encoder import AttributeEncoder, tokenize_attributes
from .objectives import loss_damsm


class RegionEncoder(nn.Module):
    """Small CNN mapping a 64x64 image to D-dim region features on an 8x8 grid."""

    def __init__(self, embed_dim: int = 128):
        super().__init__()
        self.embed_dim = embed_dim
        self.net = nn.Sequential(
            nn.Conv2d(3, 32, 4, stride=2, padding=1),  # 32
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(32, 64, 4, stride=2, padding=1),  # 16
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(64, 64, 4, stride=2, padding=1),  # 8
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(64, embed_dim, 1),
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, 64, 64) -> (B, D, 64) region features."""
        feat = self.net(images)
        return feat.flatten(2)


def region_features(encoder: RegionEncoder, images: torch.Tensor) -> torch.Tensor:
    if images.shape[-1] != 64:
        images = F.interpolate(images, size=(64, 64), mode="bilinear", align_corners=False)
    return encoder(images)


def pretrain_matching(
    attr_encoder: AttributeEncoder,
    region_encoder: RegionEncoder,
    images: np.ndarray,
    labels: np.ndarray,
    iterations: int,
    batch_size: int,
    lr: float,
    generator: torch.Generator,
) -> list[float]:
    """Joint contrastive pretraining on real (image, attributes) pairs.

    images: (N, H, W, 3) float in [-1, 1]; labels: (N, A) binary.
    Returns the per-iteration loss trace."""
    n = images.shape[0]
    image_t = torch.from_numpy(images).permute(0, 3, 1, 2).float()
    token_lists = [tokenize_attributes(labels[i]) for i in range(n)]
    params = list(attr_encoder.parameters()) + list(region_encoder.parameters())
    opt = torch.optim.Adam(params, lr=lr, betas=(0.5, 0.999))
    trace = []
    attr_encoder.train()
    region_encoder.train()
    for _ in range(iterations):
        idx = torch.randperm(n, generator=generator)[:batch_size]
        _, local, valid = attr_encoder.encode_batch([token_lists[i] for i in idx])
        regions = region_features(region_encoder, image_t[idx])
        loss = loss_damsm(regions, local, valid)
        opt.zero_grad()
        loss.backward()
        opt.step()
        trace.append(float(loss.detach()))
    attr_encoder.eval()
    region_encoder.eval()
    return trace

"""Stacked three-stage generator and per-stage discriminator suite.

Stages synthesize at 16/32/64. Each stage has two independent discriminators:
a plain one (with the conditional match head) judging the raw image and a
foreground one judging the mask-cropped image. Both carry an overall realism
head and a part head applied to each of the four image quadrants with shared
weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .mask_prior import MaskPyramid, apply_mask

STAGE_RESOLUTIONS = (16, 32, 64)
Z_DIM = 100
COND_DIM = 32
PROB_EPS = 1e-7


class ShapeMismatchError(ValueError):
    pass


@dataclass
class StageOutput:
    hidden: torch.Tensor  # (B, C_i, S_i, S_i)
    image: torch.Tensor  # (B, 3, S_i, S_i), tanh-bounded in [-1, 1]


@dataclass
class DiscriminatorVerdict:
    overall: torch.Tensor  # (B,), strictly in (0, 1)
    parts: torch.Tensor  # (4, B) ordered [TL, TR, BL, BR]
    conditional: torch.Tensor | None = None  # (B,), plain variant only


def _squash(logits: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(logits).clamp(PROB_EPS, 1.0 - PROB_EPS)


def split_quadrants(image: torch.Tensor) -> list[torch.Tensor]:
    """[top-left, top-right, bottom-left, bottom-right] halves; exact partition."""
    h, w = image.shape[-2], image.shape[-1]
    hh, hw = h // 2, w // 2
    return [
        image[..., :hh, :hw],
        image[..., :hh, hw:],
        image[..., hh:, :hw],
        image[..., hh:, hw:],
    ]


def reassemble_quadrants(quadrants: list[torch.Tensor]) -> torch.Tensor:
    top = torch.cat([quadrants[0], quadrants[1]], dim=-1)
    bottom = torch.cat([quadrants[2], quadrants[3]], dim=-1)
    return torch.cat([top, bottom], dim=-2)


class ConditioningAugment(nn.Module):
    """Global attribute embedding -> conditioning vector via learned affine
    plus Gaussian reparameterization."""

    def __init__(self, embed_dim: int, cond_dim: int = COND_DIM):
        super().__init__()
        self.fc = nn.Linear(embed_dim, cond_dim * 2)
        self.cond_dim = cond_dim

    def forward(self, global_vec: torch.Tensor, noise: torch.Tensor | None = None) -> torch.Tensor:
        mu, logvar = self.fc(global_vec).chunk(2, dim=-1)
        if noise is None:
            return mu
        return mu + torch.exp(0.5 * logvar.clamp(-4.0, 4.0)) * noise


class AttentionFusion(nn.Module):
    """Scaled dot-product attention from hidden spatial positions (queries) to
    local attribute embeddings (keys/values); context has the hidden's channels."""

    def __init__(self, hidden_ch: int, embed_dim: int, attn_dim: int = 32):
        super().__init__()
        self.query = nn.Conv2d(hidden_ch, attn_dim, 1)
        self.key = nn.Linear(embed_dim, attn_dim)
        self.value = nn.Linear(embed_dim, hidden_ch)
        self.scale = attn_dim**-0.5

    def forward(
        self, hidden: torch.Tensor, local: torch.Tensor, valid: torch.Tensor | None = None
    ) -> torch.Tensor:
        b, c, h, w = hidden.shape
        q = self.query(hidden).flatten(2).transpose(1, 2)  # (B, HW, A)
        k = self.key(local)  # (B, T, A)
        v = self.value(local)  # (B, T, C)
        scores = torch.bmm(q, k.transpose(1, 2)) * self.scale  # (B, HW, T)
        if valid is not None:
            scores = scores.masked_fill(~valid.unsqueeze(1), float("-inf"))
        context = torch.bmm(torch.softmax(scores, dim=-1), v)  # (B, HW, C)
        return context.transpose(1, 2).reshape(b, c, h, w)


def _up_block(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Upsample(scale_factor=2, mode="nearest"),
        nn.Conv2d(in_ch, out_ch, 3, padding=1),
        nn.BatchNorm2d(out_ch),
        nn.LeakyReLU(0.2, inplace=True),
    )


def _fuse_block(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1),
        nn.BatchNorm2d(out_ch),
        nn.LeakyReLU(0.2, inplace=True),
    )


class Generator(nn.Module):
    """Three-stage stacked generator.

    Stage 1 consumes (z, c, coarse mask features); stages 2-3 consume the
    previous hidden state, an attention context over the local attribute
    embeddings, and the stage's mask features. Mask features are concatenated
    channel-wise; with use_mask=False the pyramid is ignored entirely.
    """

    def __init__(
        self,
        embed_dim: int = 128,
        z_dim: int = Z_DIM,
        cond_dim: int = COND_DIM,
        stage_channels: tuple[int, int, int] = (48, 32, 16),
        mask_channels: tuple[int, int, int] = (32, 16, 8),
        use_mask: bool = True,
    ):
        super().__init__()
        self.z_dim = z_dim
        self.use_mask = use_mask
        self.stage_channels = stage_channels
        c1, c2, c3 = stage_channels
        m1, m2, m3 = mask_channels if use_mask else (0, 0, 0)
        self.cond_augment = ConditioningAugment(embed_dim, cond_dim)
        self.fc = nn.Sequential(
            nn.Linear(z_dim + cond_dim, c1 * 2 * 4 * 4),
            nn.BatchNorm1d(c1 * 2 * 4 * 4),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.up_8 = _up_block(c1 * 2, c1 * 2)
        self.up_16 = _up_block(c1 * 2, c1)
        self.fuse1 = _fuse_block(c1 + m1, c1)
        self.attn2 = AttentionFusion(c1, embed_dim)
        self.stage2 = nn.Sequential(_fuse_block(c1 * 2, c1), _up_block(c1, c2))
        self.fuse2 = _fuse_block(c2 + m2, c2)
        self.attn3 = AttentionFusion(c2, embed_dim)
        self.stage3 = nn.Sequential(_fuse_block(c2 * 2, c2), _up_block(c2, c3))
        self.fuse3 = _fuse_block(c3 + m3, c3)
        self.to_img = nn.ModuleList(
            [nn.Conv2d(c, 3, 3, padding=1) for c in stage_channels]
        )

    def forward(
        self,
        z: torch.Tensor,
        global_vec: torch.Tensor,
        local: torch.Tensor,
        pyramid: MaskPyramid | None = None,
        valid: torch.Tensor | None = None,
        c_noise: torch.Tensor | None = None,
    ) -> list[StageOutput]:
        if z.shape[-1] != self.z_dim:
            raise ShapeMismatchError(f"expected z of length {self.z_dim}, got {z.shape[-1]}")
        levels: list[torch.Tensor | None]
        if self.use_mask:
            if pyramid is None:
                raise ShapeMismatchError("generator was built with use_mask=True but no pyramid given")
            levels = list(pyramid.levels)
            for lvl, res in zip(levels, STAGE_RESOLUTIONS):
                if lvl.shape[-1] != res:
                    raise ShapeMismatchError(
                        f"pyramid level {tuple(lvl.shape[-2:])} does not match stage resolution {res}"
                    )
        else:
            levels = [None, None, None]
        c = self.cond_augment(global_vec, c_noise)
        h = self.fc(torch.cat([z, c], dim=-1)).reshape(-1, self.stage_channels[0] * 2, 4, 4)
        h = self.up_16(self.up_8(h))
        h = self.fuse1(_cat_mask(h, levels[0]))
        outputs = [StageOutput(h, torch.tanh(self.to_img[0](h)))]

        ctx = self.attn2(h, local, valid)
        h = self.stage2(torch.cat([h, ctx], dim=1))
        h = self.fuse2(_cat_mask(h, levels[1]))
        outputs.append(StageOutput(h, torch.tanh(self.to_img[1](h))))

        ctx = self.attn3(h, local, valid)
        h = self.stage3(torch.cat([h, ctx], dim=1))
        h = self.fuse3(_cat_mask(h, levels[2]))
        outputs.append(StageOutput(h, torch.tanh(self.to_img[2](h))))
        return outputs


def _cat_mask(h: torch.Tensor, level: torch.Tensor | None) -> torch.Tensor:
    if level is None:
        return h
    return torch.cat([h, level], dim=1)


def _down_block(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1),
        nn.LeakyReLU(0.2, inplace=True),
    )


class _RealismNet(nn.Module):
    """Downsampling trunk to a 4x4 grid plus a scalar realism head."""

    def __init__(self, resolution: int, base_ch: int = 24):
        super().__init__()
        if resolution < 8 or resolution & (resolution - 1):
            raise ShapeMismatchError(f"unsupported resolution {resolution}")
        blocks = []
        ch_in, ch = 3, base_ch
        res = resolution
        while res > 4:
            blocks.append(_down_block(ch_in, ch))
            ch_in, ch = ch, min(ch * 2, 128)
            res //= 2
        self.trunk = nn.Sequential(*blocks)
        self.out_ch = ch_in
        self.head = nn.Linear(ch_in * 4 * 4, 1)

    def features(self, image: torch.Tensor) -> torch.Tensor:
        return self.trunk(image)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        feat = self.features(image)
        return _squash(self.head(feat.flatten(1)).squeeze(-1))


class StageDiscriminator(nn.Module):
    """Overall head on the full image, one shared part head applied to each
    quadrant, and an optional conditional match head."""

    def __init__(self, resolution: int, embed_dim: int = 128, with_condition: bool = True):
        super().__init__()
        self.resolution = resolution
        self.full_net = _RealismNet(resolution)
        self.part_net = _RealismNet(resolution // 2)
        self.with_condition = with_condition
        if with_condition:
            self.cond_proj = nn.Linear(embed_dim, 32)
            self.cond_head = nn.Sequential(
                nn.Linear(self.full_net.out_ch * 4 * 4 + 32, 64),
                nn.LeakyReLU(0.2, inplace=True),
                nn.Linear(64, 1),
            )

    def _check(self, image: torch.Tensor) -> None:
        if image.shape[-1] != self.resolution or image.shape[-2] != self.resolution:
            raise ShapeMismatchError(
                f"expected {self.resolution}x{self.resolution} image, got {tuple(image.shape[-2:])}"
            )

    def forward(self, image: torch.Tensor) -> DiscriminatorVerdict:
        self._check(image)
        overall = self.full_net(image)
        parts = torch.stack([self.part_net(q) for q in split_quadrants(image)])
        return DiscriminatorVerdict(overall=overall, parts=parts)

    def conditional(self, image: torch.Tensor, condition: torch.Tensor) -> torch.Tensor:
        if not self.with_condition:
            raise ShapeMismatchError("this discriminator has no conditional head")
        self._check(image)
        cond = self.cond_proj(condition)
        if cond.shape[-1] != 32:
            raise ShapeMismatchError("bad condition projection")
        feat = self.full_net.features(image).flatten(1)
        return _squash(self.cond_head(torch.cat([feat, cond], dim=-1)).squeeze(-1))


class DiscriminatorSuite(nn.Module):
    """All six realism discriminators: plain (with conditional head) and
    foreground, one pair per stage. No parameter sharing across stages."""

    def __init__(self, embed_dim: int = 128, resolutions: tuple[int, ...] = STAGE_RESOLUTIONS):
        super().__init__()
        self.resolutions = resolutions
        self.plain = nn.ModuleList(
            [StageDiscriminator(r, embed_dim, with_condition=True) for r in resolutions]
        )
        self.foreground = nn.ModuleList(
            [StageDiscriminator(r, embed_dim, with_condition=False) for r in resolutions]
        )

    def discriminate(
        self,
        image: torch.Tensor,
        stage: int,
        variant: str = "plain",
        mask: torch.Tensor | None = None,
    ) -> DiscriminatorVerdict:
        """stage is 1-based; variant='foreground' crops to the mask first."""
        if variant == "plain":
            return self.plain[stage - 1](image)
        if variant == "foreground":
            if mask is None:
                raise ValueError("foreground variant requires a mask")
            return self.foreground[stage - 1](apply_mask(image, mask))
        raise ValueError(f"unknown variant {variant!r}")

    def discriminate_conditional(
        self, image: torch.Tensor, stage: int, condition: torch.Tensor
    ) -> torch.Tensor:
        return self.plain[stage - 1].conditional(image, condition)


def init_weights(module: nn.Module) -> None:
    """Variance-preserving initialization (keeps the noise signal alive through
    the full stack at random init), applied in-place."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, a=0.2, nonlinearity="leaky_relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)

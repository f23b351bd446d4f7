import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from amgan.mask_prior import (
    BACKGROUND_VALUE,
    LEVEL_CHANNELS,
    MaskEncoder,
    MaskError,
    apply_mask,
)


@pytest.fixture(scope="module")
def mask_encoder():
    torch.manual_seed(0)
    enc = MaskEncoder()
    enc.eval()
    return enc


def _random_mask(seed, size=64):
    g = torch.Generator().manual_seed(seed)
    return (torch.rand(1, size, size, generator=g) > 0.5).float()


def test_pyramid_shapes(mask_encoder):
    pyr = mask_encoder(_random_mask(0))
    sizes = [tuple(l.shape[-2:]) for l in pyr.levels]
    assert sizes == [(16, 16), (32, 32), (64, 64)]
    channels = [l.shape[1] for l in pyr.levels]
    assert channels == list(LEVEL_CHANNELS)


def test_pyramid_shapes_fixed_for_all_inputs(mask_encoder):
    for m in (torch.zeros(1, 64, 64), torch.ones(1, 64, 64), _random_mask(3)):
        pyr = mask_encoder(m)
        assert len(pyr.levels) == 3
        assert all(torch.isfinite(l).all() for l in pyr.levels)


def test_zero_and_one_masks_distinct(mask_encoder):
    p0 = mask_encoder(torch.zeros(1, 64, 64))
    p1 = mask_encoder(torch.ones(1, 64, 64))
    assert any(not torch.allclose(a, b) for a, b in zip(p0.levels, p1.levels))


def test_nonbinary_mask_rejected(mask_encoder):
    with pytest.raises(MaskError):
        mask_encoder(torch.full((1, 64, 64), 0.5))


def test_wrong_resolution_rejected(mask_encoder):
    with pytest.raises(MaskError):
        mask_encoder(torch.ones(1, 32, 32))


def test_translation_probe(mask_encoder):
    """Shifting the mask shifts the dominant activation of the finest level."""
    mask = torch.zeros(1, 64, 64)
    mask[0, 8:24, 8:24] = 1.0
    shifted = torch.roll(mask, shifts=(8, 8), dims=(1, 2))
    with torch.no_grad():
        fine_a = mask_encoder(mask).levels[2].mean(dim=1)[0]
        fine_b = mask_encoder(shifted).levels[2].mean(dim=1)[0]
    ya, xa = np.unravel_index(int(fine_a.argmax()), tuple(fine_a.shape))
    yb, xb = np.unravel_index(int(fine_b.argmax()), tuple(fine_b.shape))
    assert yb > ya
    assert xb > xa


def test_gradient_reaches_every_level():
    torch.manual_seed(1)
    enc = MaskEncoder()
    mask = _random_mask(2)
    for level_idx in range(3):
        enc.zero_grad()
        pyr = enc(mask)
        pyr.levels[level_idx].sum().backward()
        assert any(
            p.grad is not None and p.grad.abs().sum() > 0 for p in enc.parameters()
        ), f"no gradient flow into level {level_idx}"


def test_apply_mask_identity_and_annihilation():
    g = torch.Generator().manual_seed(0)
    img = torch.rand(2, 3, 16, 16, generator=g) * 2 - 1
    assert torch.equal(apply_mask(img, torch.ones(2, 16, 16)), img)
    zero = apply_mask(img, torch.zeros(2, 16, 16))
    assert (zero == BACKGROUND_VALUE).all()


@given(seed=st.integers(min_value=0, max_value=10_000))
@settings(max_examples=40, deadline=None)
def test_apply_mask_idempotent(seed):
    g = torch.Generator().manual_seed(seed)
    img = torch.rand(1, 3, 16, 16, generator=g) * 2 - 1
    mask = (torch.rand(1, 16, 16, generator=g) > 0.5).float()
    once = apply_mask(img, mask)
    twice = apply_mask(once, mask)
    assert torch.equal(once, twice)


def test_apply_mask_background_exact():
    g = torch.Generator().manual_seed(1)
    img = torch.rand(1, 3, 16, 16, generator=g) * 2 - 1
    mask = (torch.rand(1, 16, 16, generator=g) > 0.5).float()
    out = apply_mask(img, mask)
    bg = mask[0] == 0
    assert (out[0][:, bg] == BACKGROUND_VALUE).all()
    assert torch.equal(out[0][:, ~bg], img[0][:, ~bg])


def test_apply_mask_resizes_to_stage_resolution():
    g = torch.Generator().manual_seed(2)
    img = torch.rand(1, 3, 16, 16, generator=g) * 2 - 1
    mask = (torch.rand(1, 64, 64, generator=g) > 0.5).float()
    out = apply_mask(img, mask)
    assert out.shape == img.shape
    assert torch.isin(out[out == BACKGROUND_VALUE], torch.tensor([BACKGROUND_VALUE])).all()


def test_apply_mask_rejects_nonbinary():
    img = torch.zeros(1, 3, 16, 16)
    with pytest.raises(MaskError):
        apply_mask(img, torch.full((1, 16, 16), 0.3))

import numpy as np
import pytest
import torch

from amgan.attr_encoder import AttributeEncoder
from amgan.gan_core import (
    STAGE_RESOLUTIONS,
    DiscriminatorSuite,
    Generator,
    ShapeMismatchError,
    init_weights,
    reassemble_quadrants,
    split_quadrants,
)
from amgan.mask_prior import MaskEncoder

A, D, B = 19, 128, 4


@pytest.fixture(scope="module")
def nets():
    torch.manual_seed(0)
    gen = Generator(embed_dim=D)
    suite = DiscriminatorSuite(embed_dim=D)
    attr = AttributeEncoder(A, D)
    mask_enc = MaskEncoder()
    init_weights(gen)
    init_weights(suite)
    for m in (gen, suite, attr, mask_enc):
        m.eval()
    return gen, suite, attr, mask_enc


def _inputs(nets, seed=0, batch=B):
    gen, suite, attr, mask_enc = nets
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(batch, gen.z_dim, generator=g)
    global_vec, local, valid = attr.encode_batch([[1, 5, 11]] * batch)
    mask = (torch.rand(batch, 64, 64, generator=g) > 0.5).float()
    pyramid = mask_enc(mask)
    return z, global_vec, local, valid, mask, pyramid


def test_generate_shapes(nets):
    gen = nets[0]
    z, gv, local, valid, _, pyr = _inputs(nets)
    with torch.no_grad():
        outs = gen(z, gv, local, pyr, valid)
    assert [o.image.shape[-1] for o in outs] == list(STAGE_RESOLUTIONS)
    for o in outs:
        assert o.image.shape[1] == 3
        assert o.image.min() >= -1.0 and o.image.max() <= 1.0


def test_generate_deterministic(nets):
    gen = nets[0]
    z, gv, local, valid, _, pyr = _inputs(nets)
    with torch.no_grad():
        a = gen(z, gv, local, pyr, valid)
        b = gen(z, gv, local, pyr, valid)
    for oa, ob in zip(a, b):
        assert torch.equal(oa.image, ob.image)


def test_different_z_differ(nets):
    gen = nets[0]
    _, gv, local, valid, _, pyr = _inputs(nets)
    g = torch.Generator().manual_seed(99)
    hits = 0
    for _ in range(20):
        z1 = torch.randn(B, gen.z_dim, generator=g)
        z2 = torch.randn(B, gen.z_dim, generator=g)
        with torch.no_grad():
            i1 = gen(z1, gv, local, pyr, valid)[-1].image
            i2 = gen(z2, gv, local, pyr, valid)[-1].image
        frac = ((i1 - i2).abs() >= 0.1).float().mean()
        if frac >= 0.01:
            hits += 1
    assert hits >= 1


def test_generator_bounded_for_extreme_z(nets):
    gen = nets[0]
    z, gv, local, valid, _, pyr = _inputs(nets)
    with torch.no_grad():
        outs = gen(z * 1e4, gv, local, pyr, valid)
    for o in outs:
        assert torch.isfinite(o.image).all()
        assert o.image.min() >= -1.0 and o.image.max() <= 1.0


def test_generator_shape_errors(nets):
    gen, _, attr, mask_enc = nets
    z, gv, local, valid, _, pyr = _inputs(nets)
    with pytest.raises(ShapeMismatchError):
        gen(z[:, :50], gv, local, pyr, valid)
    bad_pyr = mask_enc((torch.rand(B, 64, 64) > 0.5).float())
    bad_pyr.levels = [bad_pyr.levels[1], bad_pyr.levels[0], bad_pyr.levels[2]]
    with pytest.raises(ShapeMismatchError):
        gen(z, gv, local, bad_pyr, valid)
    with pytest.raises(ShapeMismatchError):
        gen(z, gv, local, None, valid)


def test_no_mask_generator_ignores_pyramid():
    torch.manual_seed(1)
    gen = Generator(embed_dim=D, use_mask=False)
    gen.eval()
    attr = AttributeEncoder(A, D)
    gv, local, valid = attr.encode_batch([[0, 4]] * 2)
    z = torch.randn(2, gen.z_dim)
    with torch.no_grad():
        outs = gen(z, gv, local, None, valid)
    assert [o.image.shape[-1] for o in outs] == list(STAGE_RESOLUTIONS)


def test_verdict_ranges(nets):
    _, suite, _, _ = nets
    g = torch.Generator().manual_seed(5)
    for _ in range(100):
        for stage, res in enumerate(STAGE_RESOLUTIONS, start=1):
            img = torch.rand(2, 3, res, res, generator=g) * 2 - 1
            v = suite.discriminate(img, stage)
            for t in (v.overall, v.parts):
                assert (t > 0).all() and (t < 1).all()


def test_quadrant_partition_exact():
    g = torch.Generator().manual_seed(0)
    img = torch.rand(2, 3, 32, 32, generator=g)
    assert torch.equal(reassemble_quadrants(split_quadrants(img)), img)


def test_tiled_image_equal_part_verdicts(nets):
    _, suite, _, _ = nets
    g = torch.Generator().manual_seed(7)
    tile = torch.rand(2, 3, 32, 32, generator=g) * 2 - 1
    img = reassemble_quadrants([tile, tile, tile, tile])
    v = suite.discriminate(img, 3)
    for j in range(1, 4):
        assert torch.allclose(v.parts[0], v.parts[j], atol=1e-6)


def test_foreground_all_one_mask_equivalence(nets):
    """apply_mask with an all-one mask is the identity, so the foreground
    verdict equals running the foreground net on the raw image, bit-exactly."""
    _, suite, _, _ = nets
    g = torch.Generator().manual_seed(8)
    img = torch.rand(2, 3, 64, 64, generator=g) * 2 - 1
    via_mask = suite.discriminate(img, 3, variant="foreground", mask=torch.ones(2, 64, 64))
    direct = suite.foreground[2](img)
    assert torch.equal(via_mask.overall, direct.overall)
    assert torch.equal(via_mask.parts, direct.parts)


def test_foreground_requires_mask(nets):
    _, suite, _, _ = nets
    with pytest.raises(ValueError):
        suite.discriminate(torch.zeros(1, 3, 64, 64), 3, variant="foreground")


def test_conditional_head(nets):
    _, suite, attr, _ = nets
    g = torch.Generator().manual_seed(9)
    img = torch.rand(2, 3, 64, 64, generator=g) * 2 - 1
    gv, _, _ = attr.encode_batch([[1, 5]] * 2)
    p = suite.discriminate_conditional(img, 3, gv)
    assert (p > 0).all() and (p < 1).all()
    assert torch.equal(p, suite.discriminate_conditional(img, 3, gv))
    with pytest.raises(RuntimeError):
        suite.discriminate_conditional(img, 3, gv[:, :64])


def test_foreground_has_no_conditional_head(nets):
    _, suite, attr, _ = nets
    gv, _, _ = attr.encode_batch([[1]])
    with pytest.raises(ShapeMismatchError):
        suite.foreground[0].conditional(torch.zeros(1, 3, 16, 16), gv)


def test_stage_discriminators_are_independent(nets):
    _, suite, _, _ = nets
    ids = []
    for net in list(suite.plain) + list(suite.foreground):
        ids.append({id(p) for p in net.parameters()})
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            assert not ids[i] & ids[j]


def test_resolution_mismatch_rejected(nets):
    _, suite, _, _ = nets
    with pytest.raises(ShapeMismatchError):
        suite.discriminate(torch.zeros(1, 3, 32, 32), 1)


def test_gradient_checks_scalar_probes(nets):
    """Finite differences vs autograd for probes through the generator's first
    stage and each discriminator head."""
    torch.manual_seed(3)
    gen = Generator(embed_dim=16, z_dim=8, stage_channels=(8, 6, 4), mask_channels=(4, 3, 2)).double()
    attr = AttributeEncoder(A, 16).double()
    mask_enc = None

    from amgan.mask_prior import MaskEncoder as ME

    mask_enc = ME(level_channels=(4, 3, 2)).double()
    gen.eval()
    z = torch.randn(2, 8, dtype=torch.float64)
    gv, local, valid = attr.encode_batch([[1, 2]] * 2)
    gv, local = gv.detach(), local.detach()
    mask = (torch.rand(2, 64, 64) > 0.5).double()

    def probe():
        pyr = mask_enc(mask)
        return gen(z, gv, local, pyr, valid)[0].image.sum()

    param = next(gen.fuse1.parameters())
    _fd_check(probe, param)

    suite = DiscriminatorSuite(embed_dim=16, resolutions=(16,)).double()
    suite.eval()
    img = (torch.rand(2, 3, 16, 16, dtype=torch.float64) * 2 - 1).requires_grad_(False)

    def probe_overall():
        return suite.plain[0](img).overall.sum()

    def probe_parts():
        return suite.plain[0](img).parts.sum()

    def probe_cond():
        return suite.plain[0].conditional(img, gv).sum()

    _fd_check(probe_overall, next(suite.plain[0].full_net.parameters()))
    _fd_check(probe_parts, next(suite.plain[0].part_net.parameters()))
    _fd_check(probe_cond, suite.plain[0].cond_proj.weight)


def _fd_check(probe, param, h=1e-5, rel_tol=1e-3, n_coords=4):
    if param.grad is not None:
        param.grad = None
    probe().backward()
    analytic = param.grad.reshape(-1).clone()
    flat = param.data.reshape(-1)
    checked = 0
    for k in range(flat.numel()):
        if checked >= n_coords:
            break
        orig = flat[k].item()
        flat[k] = orig + h
        with torch.no_grad():
            up = float(probe())
        flat[k] = orig - h
        with torch.no_grad():
            down = float(probe())
        flat[k] = orig
        numeric = (up - down) / (2 * h)
        if abs(numeric) < 1e-6:
            continue
        rel = abs(numeric - analytic[k].item()) / abs(numeric)
        assert rel < rel_tol, f"coord {k}: analytic {analytic[k].item()} vs numeric {numeric}"
        checked += 1
    assert checked > 0

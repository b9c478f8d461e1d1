import pytest
import torch

from eventvid.backbone import BackboneConfig, VideoFlowTransformer
from eventvid.codec import CodecSpec
from eventvid.encoder import CausalConv3d, EncoderConfig, EventEncoder, causal_conv3d

CODEC = CodecSpec(p_s=8, p_t=4)
ENC_CFG = EncoderConfig(in_channels=5, n_mid=2, target_hidden=32)


def _randomize(model, seed=0, scale=0.1):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(torch.randn(p.shape, generator=g) * scale)
    return model


def test_fresh_encoder_injects_exact_zeros():
    enc = EventEncoder(ENC_CFG, CODEC)
    hist = torch.randn(2, 9, 5, 32, 32) * 10
    bundle = enc(hist)
    assert len(bundle) == 2
    for z in bundle:
        assert z.shape == (2, 3 * 4 * 4, 32)
        assert not z.detach().any()


def test_zero_init_transparency_end_to_end():
    # untrained encoder injected into a (randomly weighted) backbone leaves
    # the backbone output bit-identical to running without injection
    backbone = _randomize(VideoFlowTransformer(BackboneConfig(depth=2, hidden=32, heads=2), 768), seed=1)
    enc = EventEncoder(ENC_CFG, CODEC)
    latent = torch.randn(1, 3, 768, 4, 4)
    sigma = torch.tensor([0.5])
    hist = torch.randn(1, 9, 5, 32, 32)
    with_inj = backbone(latent, sigma, injections=enc(hist))
    without = backbone(latent, sigma, injections=None)
    assert torch.equal(with_inj, without)


def test_deterministic_bundle():
    enc = _randomize(EventEncoder(ENC_CFG, CODEC), seed=2)
    hist = torch.zeros(1, 9, 5, 32, 32)
    a = enc(hist)
    b = enc(hist)
    for za, zb in zip(a, b):
        assert torch.equal(za, zb)


def test_grid_alignment_across_input_sizes():
    enc = _randomize(EventEncoder(ENC_CFG, CODEC), seed=3)
    for t, h, w in [(9, 32, 32), (17, 32, 64), (33, 64, 64), (5, 32, 32)]:
        bundle = enc(torch.randn(1, t, 5, h, w))
        l_expected = (1 + (t - 1) // 4) * (h // 8) * (w // 8)
        for z in bundle:
            assert z.shape == (1, l_expected, 32)


def test_injection_set_masking():
    cfg = EncoderConfig(in_channels=5, n_mid=4, target_hidden=16, injection_set=frozenset({2}))
    enc = _randomize(EventEncoder(cfg, CODEC), seed=4)
    bundle = enc(torch.randn(1, 9, 5, 32, 32))
    assert bundle[1].detach().abs().sum() > 0
    for j in (0, 2, 3):
        assert not bundle[j].detach().any()


def test_misaligned_config_rejected_at_construction():
    bad = EncoderConfig(in_channels=5, spatial_strides=(2, 2, 1), n_mid=2)
    with pytest.raises(ValueError, match="misaligned"):
        EventEncoder(bad, CODEC)


def test_injection_set_validation():
    with pytest.raises(ValueError):
        EncoderConfig(n_mid=2, injection_set=frozenset({3}))


def test_causal_conv3d_causality():
    conv = _randomize(CausalConv3d(3, 4, kernel=3), seed=5)
    x = torch.randn(1, 3, 8, 6, 6)
    y = conv(x)
    x2 = x.clone()
    x2[:, :, 5:] += torch.randn(1, 3, 3, 6, 6)
    y2 = conv(x2)
    assert torch.equal(y[:, :, :5], y2[:, :, :5])
    assert not torch.equal(y[:, :, 5:], y2[:, :, 5:])


def test_causal_conv3d_k1_equals_2d():
    g = torch.Generator().manual_seed(6)
    weight = torch.randn(4, 3, 1, 3, 3, generator=g)
    bias = torch.randn(4, generator=g)
    x = torch.randn(1, 3, 5, 8, 8, generator=g)
    y = causal_conv3d(x, weight, bias)
    for t in range(5):
        y2d = torch.nn.functional.conv2d(x[:, :, t], weight[:, :, 0], bias, padding=1)
        torch.testing.assert_close(y[:, :, t], y2d, rtol=1e-6, atol=1e-6)


def test_causal_conv3d_matches_loop_oracle():
    g = torch.Generator().manual_seed(7)
    c_in, c_out, k = 2, 3, 3
    weight = torch.randn(c_out, c_in, k, k, k, generator=g)
    bias = torch.randn(c_out, generator=g)
    x = torch.randn(1, c_in, 6, 5, 5, generator=g)
    got = causal_conv3d(x, weight, bias)

    # explicit loops: left-replicate in time, zero pad in space
    xp = torch.cat([x[:, :, :1], x[:, :, :1], x], dim=2)
    xp = torch.nn.functional.pad(xp, (1, 1, 1, 1))
    want = torch.zeros_like(got)
    for t in range(6):
        for i in range(5):
            for j in range(5):
                patch = xp[0, :, t : t + k, i : i + k, j : j + k]
                for o in range(c_out):
                    want[0, o, t, i, j] = (patch * weight[o]).sum() + bias[o]
    torch.testing.assert_close(got, want, rtol=1e-5, atol=1e-6)


def test_full_stack_temporal_causality():
    """Perturbing input frames after t*p_t leaves features (and projected
    injections) at latent steps <= t bit-identical."""
    enc = _randomize(EventEncoder(ENC_CFG, CODEC), seed=8)
    hist = torch.randn(1, 9, 5, 32, 32)
    base = enc(hist)
    base_feats = enc.features(hist)
    for t_lat in (0, 1):
        cut = t_lat * CODEC.p_t + 1
        perturbed = hist.clone()
        perturbed[:, cut:] += torch.randn_like(perturbed[:, cut:])
        out = enc(perturbed)
        feats = enc.features(perturbed)
        hw = 4 * 4
        for z_b, z_p in zip(base, out):
            assert torch.equal(z_b[:, : (t_lat + 1) * hw], z_p[:, : (t_lat + 1) * hw])
        for f_b, f_p in zip(base_feats, feats):
            assert torch.equal(f_b[:, :, : t_lat + 1], f_p[:, :, : t_lat + 1])


def _spatial_receptive_interval(pixel: int) -> tuple[int, int]:
    """Cells an impulse at `pixel` can reach, propagated stage by stage.

    Same-padded k=3 stride-1 convs widen the interval by 1 per conv; a k=3
    stride-2 conv maps [lo, hi] to [ceil((lo-1)/2), floor((hi+1)/2)].
    """
    lo = hi = pixel
    def conv(l, h):
        return l - 1, h + 1
    def down(l, h):
        return -((1 - l) // 2), (h + 1) // 2
    lo, hi = conv(lo, hi)                      # stem
    for _ in range(3):                         # DownBlocks: strided conv + res (2 convs)
        lo, hi = down(lo, hi)
        lo, hi = conv(*conv(lo, hi))
    for _ in range(ENC_CFG.n_mid):             # MidBlocks: 2 convs each
        lo, hi = conv(*conv(lo, hi))
    return lo, hi


def test_impulse_support_confined_to_receptive_field():
    skinny = EncoderConfig(
        in_channels=5, stem_channels=4, channel_schedule=(4, 8, 8), n_mid=2, target_hidden=8
    )
    enc = _randomize(EventEncoder(skinny, CODEC), seed=9)
    size, px = 256, 160
    zero = torch.zeros(1, 9, 5, size, size)
    impulse = zero.clone()
    impulse[0, 4, 2, px, px] = 50.0
    diff = [za - zb for za, zb in zip(enc(impulse), enc(zero))]
    cells = size // 8
    changed = diff[-1][0].abs().reshape(3, cells, cells, -1).sum(-1) > 0
    assert changed.any()
    lo, hi = _spatial_receptive_interval(px)
    lo, hi = max(lo, 0), min(hi, cells - 1)
    assert lo > 0 and hi < cells - 1, "oracle must predict a proper subset"
    outside = changed.clone()
    outside[:, lo : hi + 1, lo : hi + 1] = False
    assert not outside.any()
    # temporal support is causal: frame 4 maps to latent step 1
    assert not changed[0].any()

import numpy as np
import pytest
import torch
import torch.nn as nn

from absgn.blocks import (
    DCR,
    GSA,
    MGDB,
    ChannelAttention,
    ConvSpec,
    GSAConfig,
    MGDBConfig,
    SpatialAttention,
    conv_prelu,
    kaiming_init_,
)
from absgn.network import finite_difference_check

from .conftest import rand64


def naive_conv(x, weight, bias, dilation):
    """Direct zero-padded sliding-window accumulation, one output pixel at a time."""
    x, weight, bias = x.numpy(), weight.numpy(), bias.numpy()
    _, cin, h, w = x.shape
    cout, _, k, _ = weight.shape
    pad = dilation * (k - 1) // 2
    out = np.zeros((1, cout, h, w))
    for o in range(cout):
        for i in range(h):
            for j in range(w):
                acc = bias[o]
                for c in range(cin):
                    for u in range(k):
                        for v in range(k):
                            y, z = i - pad + u * dilation, j - pad + v * dilation
                            if 0 <= y < h and 0 <= z < w:
                                acc += weight[o, c, u, v] * x[0, c, y, z]
                out[0, o, i, j] = acc
    return torch.from_numpy(out)


def zero_(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


def test_conv_identity():
    block = conv_prelu(4, 4, kernel=1).double()
    with torch.no_grad():
        block.conv.weight.copy_(torch.eye(4).view(4, 4, 1, 1))
        block.conv.bias.zero_()
        block.act.weight.fill_(1.0)
    x = torch.randn(2, 4, 5, 5, dtype=torch.float64)
    assert torch.equal(block(x), x)


@pytest.mark.parametrize("b", [0.4, -0.8])
def test_conv_prelu_constant_bias(b):
    block = conv_prelu(3, 2)
    with torch.no_grad():
        block.conv.weight.zero_()
        block.conv.bias.fill_(b)
    out = block(torch.rand(1, 3, 6, 6))
    expected = b if b >= 0 else 0.25 * b
    assert torch.allclose(out, torch.full_like(out, expected))


def test_dilated_conv_matches_loop_oracle(gen):
    block = conv_prelu(4, 3, kernel=3, dilation=2, has_prelu=False).double()
    x = rand64(gen, 1, 4, 16, 16)
    expected = naive_conv(x, block.conv.weight.detach(), block.conv.bias.detach(), 2)
    assert (block(x).detach() - expected).abs().max() < 1e-5


def test_conv_spec_padding_and_errors():
    assert ConvSpec(2, 2, kernel=7, dilation=1).padding == 3
    assert ConvSpec(2, 2, kernel=3, dilation=4).padding == 4
    with pytest.raises(ValueError, match="odd"):
        ConvSpec(2, 2, kernel=4)
    with pytest.raises(ValueError, match="expected"):
        conv_prelu(3, 8)(torch.zeros(1, 4, 8, 8))


def test_prelu_has_one_slope_per_channel():
    block = conv_prelu(3, 5)
    assert block.act.weight.shape == (5,)
    assert torch.all(block.act.weight == 0.25)


def test_spatial_attention_map_range(gen):
    spa = SpatialAttention()
    x = torch.randn(2, 5, 9, 9, generator=gen) * 3
    m = spa.attention_map(x)
    assert m.shape == (2, 1, 9, 9)
    assert torch.all((m > 0) & (m < 1))
    # float32 sigmoid saturates to the closed interval for huge inputs
    m = spa.attention_map(x * 1e4)
    assert torch.all((m >= 0) & (m <= 1))


def test_spatial_attention_zero_weights_halves():
    spa = zero_(SpatialAttention())
    x = torch.rand(1, 3, 6, 6)
    assert torch.allclose(spa(x), x / 2)


def test_spatial_descriptor_loop_oracle(gen):
    x = rand64(gen, 1, 5, 6, 6)
    d = SpatialAttention.descriptor(x)
    for i in range(6):
        for j in range(6):
            vals = [x[0, c, i, j].item() for c in range(5)]
            assert abs(d[0, 0, i, j].item() - sum(vals) / 5) < 1e-12
            assert d[0, 1, i, j].item() == max(vals)


def test_channel_attention_zero_weights_halves():
    ca = zero_(ChannelAttention(16))
    x = torch.rand(2, 16, 4, 4)
    assert torch.allclose(ca(x), x / 2)


def test_channel_attention_is_per_channel_scale(gen):
    ca = ChannelAttention(8).double()
    x = rand64(gen, 1, 8, 5, 5) + 0.1
    ratio = ca(x).detach() / x
    assert torch.allclose(ratio, ratio[..., :1, :1].expand_as(ratio), atol=1e-12)


def test_channel_pool_loop_oracle(gen):
    x = rand64(gen, 2, 8, 4, 4)
    avg, mx = ChannelAttention.pooled(x)
    for b in range(2):
        for c in range(8):
            vals = [x[b, c, i, j].item() for i in range(4) for j in range(4)]
            assert abs(avg[b, c, 0, 0].item() - sum(vals) / 16) < 1e-12
            assert mx[b, c, 0, 0].item() == max(vals)


def test_channel_attention_rejects_bad_ratio():
    with pytest.raises(ValueError, match="divisible"):
        ChannelAttention(12, reduction=8)


def test_gsa_preserves_shape():
    gsa = GSA(GSAConfig(12))
    assert gsa.cfg.shrunk_channels == 6
    assert gsa(torch.rand(3, 12, 5, 7)).shape == (3, 12, 5, 7)


def test_gsa_broadcast_map_is_constant(gen):
    gsa = GSA(GSAConfig(6)).double()
    x = rand64(gen, 1, 6, 5, 7)
    g = gsa.global_vector(x).expand(-1, -1, 5, 7)
    assert torch.equal(g, g[..., :1, :1].expand_as(g))


def test_gsa_pooled_vector_loop_oracle(gen):
    gsa = GSA(GSAConfig(6)).double()
    x = rand64(gen, 1, 6, 5, 7)
    t = gsa.pre(x).detach()
    v = gsa.global_vector(x).detach()
    for c in range(6):
        vals = [t[0, c, i, j].item() for i in range(5) for j in range(7)]
        expected = (sum(vals) / len(vals) + max(vals)) / 2
        assert abs(v[0, c, 0, 0].item() - expected) < 1e-12


def test_gsa_config_bounds():
    with pytest.raises(ValueError):
        GSAConfig(4, 5)


def test_mgdb_shape_and_wiring():
    block = MGDB(MGDBConfig(16))
    assert [b.spec.dilation for b in block.branches] == [4, 2, 1]
    assert [b.spec.in_channels for b in block.branches] == [16, 24, 32]
    assert block.fuse.spec.in_channels == 40
    assert block(torch.rand(2, 16, 9, 9)).shape == (2, 16, 9, 9)


def test_mgdb_zero_weights_is_identity():
    block = zero_(MGDB(MGDBConfig(8)))
    x = torch.randn(1, 8, 6, 6)
    assert torch.equal(block(x), x)


def test_dcr_zero_weights_is_identity():
    block = zero_(DCR(MGDBConfig(8)))
    x = torch.randn(1, 8, 6, 6)
    assert torch.equal(block(x), x)


def test_dilation4_receptive_support():
    conv = nn.Conv2d(1, 1, 3, padding=4, dilation=4, bias=False)
    nn.init.ones_(conv.weight)
    x = torch.zeros(1, 1, 21, 21)
    x[0, 0, 10, 10] = 1.0
    rows, cols = torch.nonzero(conv(x)[0, 0], as_tuple=True)
    assert (rows.max() - rows.min() + 1, cols.max() - cols.min() + 1) == (9, 9)
    assert len(rows) == 9


def test_dcr_equals_degenerate_mgdb(gen):
    cfg = MGDBConfig(8, dilations=(4, 2, 1))
    dcr = DCR(cfg).double()
    mgdb = MGDB(MGDBConfig(8, dilations=(1, 1, 1))).double()
    mgdb.load_state_dict(dcr.state_dict(), strict=False)
    mgdb.attention = None  # scale forced to 1
    x = rand64(gen, 1, 8, 7, 7)
    assert torch.equal(dcr(x), mgdb(x))
    assert all(b.spec.dilation == 1 for b in dcr.branches)
    assert dcr.attention is None


@pytest.mark.parametrize(
    "kw, match",
    [
        (dict(dilations=(4, 2)), "end at 1"),
        (dict(dilations=(2, 4, 1)), "decreasing"),
        (dict(growth=0), "growth"),
    ],
)
def test_mgdb_config_validation(kw, match):
    with pytest.raises(ValueError, match=match):
        MGDBConfig(8, **kw)


def test_kaiming_init_deterministic():
    a, b = MGDB(MGDBConfig(8)), MGDB(MGDBConfig(8))
    kaiming_init_(a, torch.Generator().manual_seed(3))
    kaiming_init_(b, torch.Generator().manual_seed(3))
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    assert torch.count_nonzero(a.fuse.conv.bias) == 0


def test_outputs_finite_for_large_inputs(gen):
    x = torch.randn(1, 8, 6, 6, generator=gen) * 1e3
    for block in (GSA(GSAConfig(8)), MGDB(MGDBConfig(8)), SpatialAttention(), ChannelAttention(8)):
        assert torch.isfinite(block(x)).all()


@pytest.mark.parametrize(
    "make, shape",
    [
        (lambda: conv_prelu(4, 6, kernel=3, dilation=2), (1, 4, 6, 6)),
        (lambda: SpatialAttention(), (1, 4, 6, 6)),
        (lambda: ChannelAttention(8), (1, 8, 6, 6)),
        (lambda: GSA(GSAConfig(8)), (1, 8, 8, 8)),
        (lambda: GSA(GSAConfig(8), use_spa=False), (1, 8, 6, 6)),
        (lambda: MGDB(MGDBConfig(8)), (1, 8, 6, 6)),
        (lambda: DCR(MGDBConfig(8)), (1, 8, 6, 6)),
    ],
    ids=["conv_prelu", "spa", "channel_attention", "gsa", "gsa_no_spa", "mgdb", "dcr"],
)
def test_block_gradients(make, shape, gen):
    torch.manual_seed(0)
    assert finite_difference_check(make(), rand64(gen, *shape), eps=1e-4) < 1e-3


def test_linear_block_gradient_is_exact(gen):
    block = conv_prelu(4, 4, kernel=1, has_prelu=False)
    assert finite_difference_check(block, rand64(gen, 1, 4, 5, 5)) < 1e-8

import json

import pytest
import torch
import torch.nn as nn

from absgn.blocks import conv1x1, conv_prelu
from absgn.network import (
    VARIANTS,
    NetworkConfig,
    build,
    count_params,
    enhance,
    finite_difference_check,
    make_variant,
)

from .conftest import rand64

TINY = NetworkConfig(base_channels=8)


def param_bytes(model):
    return b"".join(p.detach().numpy().tobytes() for p in model.parameters())


def test_same_seed_same_weights():
    assert param_bytes(build(TINY, seed=5)) == param_bytes(build(TINY, seed=5))
    assert param_bytes(build(TINY, seed=5)) != param_bytes(build(TINY, seed=6))


def test_channel_schedule():
    model = build(NetworkConfig(), 0)
    assert NetworkConfig().channels == (32, 64, 128, 256)
    assert model.stem.spec.out_channels == 32
    assert [m.spec.out_channels for m in (model.down1, model.down2, model.down3)] == [64, 128, 256]
    assert [m.spec.in_channels for m in (model.down1, model.down2, model.down3)] == [128, 256, 512]


def test_topology_block_counts():
    model = build(NetworkConfig(), 0)
    assert len(model.mgdb2) == 1 and len(model.mgdb1) == 2
    norms = [m for m in model.modules() if isinstance(m, nn.BatchNorm2d)]
    assert len(norms) == 1 and norms[0].num_features == 256
    assert model.head[-1].act is None and model.head[0].act is not None


@pytest.mark.parametrize("kw", [dict(base_channels=6), dict(base_channels=12), dict(levels=4),
                                dict(variant="nope"), dict(mgdb_per_level=(1, 2, 3))])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        NetworkConfig(**kw)


def test_config_json_round_trip():
    cfg = NetworkConfig(base_channels=16, variant="dcr", mgdb_dilations=(8, 4, 1))
    assert NetworkConfig.from_dict(json.loads(cfg.to_json())) == cfg


def test_count_params_examples():
    assert count_params(conv1x1(4, 4)) == 20
    assert count_params(conv_prelu(3, 32)) == 3 * 32 * 9 + 32 + 32 == 928


def test_make_variant():
    cfg = NetworkConfig()
    assert make_variant(cfg, "full") == cfg
    assert make_variant(cfg, "no-dc").variant == "no_dc"
    with pytest.raises(ValueError, match="unknown variant"):
        make_variant(cfg, "mirnet")


def test_no_dc_parameter_count_matches_full():
    full = build(NetworkConfig(), 0)
    no_dc = build(make_variant(NetworkConfig(), "no_dc"), 0)
    assert count_params(no_dc) == count_params(full)
    assert all(b.spec.dilation == 1 for blk in no_dc.mgdb1 for b in blk.branches)


@pytest.mark.parametrize(
    "variant, prefixes",
    [("spa", ("gsa.",)), ("gia", ("gsa.",)), ("dcr", ("mgdb",)), ("no_dc", ())],
)
def test_variants_only_touch_named_blocks(variant, prefixes):
    full = {n: p.shape for n, p in build(TINY, 0).named_parameters()}
    other = {n: p.shape for n, p in build(make_variant(TINY, variant), 0).named_parameters()}

    def outside(d):
        return {n: s for n, s in d.items() if not n.startswith(prefixes)} if prefixes else d

    assert outside(full) == outside(other)


def test_variant_blocks_differ():
    gia = build(make_variant(TINY, "gia"), 0)
    spa = build(make_variant(TINY, "spa"), 0)
    assert gia.gsa.spa is None
    assert not hasattr(spa.gsa, "shrink")
    dcr = build(make_variant(TINY, "dcr"), 0)
    assert dcr.mgdb0a.attention is None


@pytest.mark.parametrize("size", [(8, 8), (67, 93), (16, 24), (13, 8)])
@pytest.mark.parametrize("variant", VARIANTS)
def test_shape_preserved(variant, size):
    model = build(make_variant(TINY, variant), 0)
    out = enhance(model, torch.rand(2, 3, *size))
    assert out.shape == (2, 3, *size)
    assert out.min() >= 0 and out.max() <= 1


def test_lol_resolution():
    model = build(NetworkConfig(), 0)
    assert enhance(model, torch.rand(1, 3, 400, 600)).shape == (1, 3, 400, 600)


def test_forward_deterministic():
    model = build(TINY, 1)
    x = torch.rand(1, 3, 40, 48)
    assert torch.equal(enhance(model, x), enhance(model, x))


def test_enhance_restores_training_mode():
    model = build(TINY, 1)
    model.train()
    enhance(model, torch.rand(1, 3, 16, 16))
    assert model.training


@pytest.mark.parametrize("bad", [torch.rand(1, 3, 7, 16), torch.rand(1, 1, 16, 16)])
def test_enhance_rejects_bad_shapes(bad):
    with pytest.raises(ValueError):
        enhance(build(TINY, 0), bad)


def test_enhance_rejects_non_finite():
    x = torch.rand(1, 3, 16, 16)
    x[0, 0, 0, 0] = float("inf")
    with pytest.raises(ValueError, match="non-finite"):
        enhance(build(TINY, 0), x)


@pytest.mark.parametrize("variant", VARIANTS)
def test_tiny_network_gradients(variant, gen):
    model = build(make_variant(TINY, variant), 0)
    assert finite_difference_check(model, rand64(gen, 1, 3, 16, 16), eps=1e-4) < 1e-3


def test_gradient_check_detects_wrong_gradient(gen):
    class Broken(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return x**2

        @staticmethod
        def backward(ctx, g):
            return g  # wrong: should be 2x * g

    err = finite_difference_check(lambda x: Broken.apply(x), rand64(gen, 1, 1, 4, 4) + 1)
    assert err > 0.1

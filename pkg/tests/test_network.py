import numpy as np
import pytest

from cpseg import tensor as T
from cpseg.network import layers as L
from cpseg.network.model import ModelConfig, Network, Supervision
from cpseg.network.params import (CheckpointError, ParameterStore, load_into, read_checkpoint,
                                  save_checkpoint)
from cpseg.tensor import Tensor

DESK = dict(channel_scale=0.25, patch_size=32)


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


@pytest.fixture(scope="module")
def desk_net():
    return Network(ModelConfig(**DESK), seed=3)


@pytest.fixture(scope="module")
def desk_input():
    return Tensor(np.random.default_rng(5).standard_normal((2, 1, 16, 16, 16)).astype(np.float32))


# --- building blocks -------------------------------------------------------------

def test_lone_conv_count():
    s = ParameterStore()
    L.Conv(s, "c", 16, 1, 1, np.random.default_rng(0))
    assert s.count() == 17


def test_residual_zero_branch_is_identity(rng):
    s = ParameterStore()
    blk = L.ResidualBlock(s, "rb", 3, 3, rng)
    for layer in (blk.layer1, blk.layer2):
        layer.conv.weight.data[:] = 0
        layer.conv.bias.data[:] = 0
        layer.bn.set_identity()
    x = rng.standard_normal((2, 3, 4, 4, 4)).astype(np.float32)
    y = blk(Tensor(x), training=False)
    np.testing.assert_array_equal(y.data, x)


def test_residual_shapes_and_projection(rng):
    s = ParameterStore()
    blk = L.ResidualBlock(s, "rb", 2, 5, rng)
    assert blk.proj is not None
    assert blk(Tensor(np.zeros((1, 2, 4, 4, 4))), True).shape == (1, 5, 4, 4, 4)
    assert L.ResidualBlock(ParameterStore(), "rb", 4, 4, rng).proj is None


def test_supervision_head_zero_weights(rng):
    s = ParameterStore()
    head = L.SupervisionHead(s, "h", 16, rng)
    head.conv.weight.data[:] = 0
    y = head(Tensor(rng.standard_normal((1, 16, 4, 4, 4))))
    assert y.shape == (1, 1, 4, 4, 4)
    np.testing.assert_array_equal(y.data, 0.5)


def _attention(rng, channels=16):
    s = ParameterStore()
    mod = L.AttentionModule(s, "att", channels, [3, 5, 7, 9], channels // 4, rng)
    mod.bn_gate.set_identity()
    mod.bn_skip.set_identity()
    return s, mod


@pytest.mark.parametrize("c", [0.0, 0.5, 1.0])
def test_attention_constant_gate(c, rng):
    _, mod = _attention(rng)
    f = rng.standard_normal((1, 16, 4, 4, 4)).astype(np.float32)
    gate = Tensor(np.full((1, 1, 4, 4, 4), c, dtype=np.float32))
    out, a = mod(Tensor(f), training=False, gate=gate)
    np.testing.assert_array_equal(out.data, (np.float32(1 + c)) * f)


def test_attention_live_gate_range_and_shapes(rng):
    _, mod = _attention(rng)
    f = Tensor(rng.standard_normal((2, 16, 6, 6, 6)).astype(np.float32) * 5)
    out, a = mod(f, training=True)
    assert out.shape == f.shape and a.shape == (2, 1, 6, 6, 6)
    assert np.all(a.data > 0) and np.all(a.data < 1)


def test_attention_bad_grouping():
    with pytest.raises(ValueError):
        L.AttentionModule(ParameterStore(), "att", 16, [3, 5, 7], 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        ModelConfig(attention_group_width=3)


def test_attention_layers_share_weights(rng):
    _, mod = _attention(rng)
    for b1, b2 in zip(mod.layer1.blocks, mod.layer2.blocks):
        assert b1.conv.weight is b2.conv.weight
        assert b1.bn is not b2.bn


# --- full model ------------------------------------------------------------------

def test_default_param_count_band():
    n = Network(ModelConfig(), seed=0).param_count()
    assert abs(n - 2_750_000) / 2_750_000 <= 0.15


def test_attention_block_size():
    full = Network(ModelConfig(), seed=0)
    dsr = Network(ModelConfig(attention_enabled=False), seed=0)
    diff = full.param_count() - dsr.param_count()
    assert diff == full.store.count("attention.")
    assert abs(diff - 70_000) / 70_000 <= 0.15


def test_forward_signals_and_ranges(desk_net, desk_input):
    out = desk_net(desk_input, training=True)
    assert out.signals() == 9
    assert len(out.backbone_probs) == len(out.refine_probs) == len(out.attention_maps) == 4
    for p in [out.final_prob, *out.backbone_probs, *out.refine_probs, *out.attention_maps]:
        assert p.shape == (2, 1, 16, 16, 16)
        assert np.all(p.data > 0) and np.all(p.data < 1)


def test_stage_features_shape(desk_net, desk_input):
    feats = desk_net.backbone(desk_input, training=True)
    assert len(feats) == 4
    assert all(f.shape == (2, 4, 16, 16, 16) for f in feats)


def test_full_scale_stage_width():
    net = Network(ModelConfig(), seed=0)
    x = Tensor(np.zeros((1, 1, 16, 16, 16), dtype=np.float32))
    assert all(f.shape == (1, 16, 16, 16, 16) for f in net.backbone(x, True))


def test_indivisible_input_rejected(desk_net):
    with pytest.raises(T.ShapeError):
        desk_net(Tensor(np.zeros((1, 1, 20, 16, 16), dtype=np.float32)))


def test_forward_deterministic(desk_net, desk_input):
    a = desk_net(desk_input, training=False).final_prob.data
    b = desk_net(desk_input, training=False).final_prob.data
    assert np.array_equal(a, b)


def test_stage_features_sensitive_to_encoder(desk_input):
    net = Network(ModelConfig(**DESK), seed=1)
    before = [f.data.copy() for f in net.backbone(desk_input, True)]
    net.store["encoder.1.layer1.conv.weight"].data *= 1.5
    after = net.backbone(desk_input, True)
    assert all(not np.array_equal(a, b.data) for a, b in zip(before, after))


def test_dead_path_detector(desk_input):
    from cpseg.training.losses import SupervisionWeights, total_loss
    net = Network(ModelConfig(**DESK), seed=2)
    g = (np.random.default_rng(0).random((2, 1, 16, 16, 16)) < 0.2).astype(np.float32)
    loss, _ = total_loss(net(desk_input, True), g, "saf", SupervisionWeights((0.8, 0.7, 0.6, 0.5),
                                                                              (0.8, 0.7, 0.6, 0.5), 1.0), 3.0)
    T.backward(loss)
    live = sum(int(np.any(t.grad != 0)) * t.data.size for t in net.store.params.values() if t.grad is not None)
    assert live / net.param_count() >= 0.99


def test_dsrnet_has_no_attention_path(desk_input):
    net = Network(ModelConfig(attention_enabled=False, **DESK), seed=4)
    assert net.store.count("attention.") == 0
    out = net(desk_input, training=True)
    assert out.attention_maps == [] and len(out.refine_probs) == 4
    # the refine heads read the stage features directly
    feats = net.backbone(desk_input, training=True)
    for head, f, p in zip(net.refine_sup, feats, out.refine_probs):
        np.testing.assert_array_equal(head(f).data, p.data)


def test_sam_requires_attention():
    with pytest.raises(ValueError):
        ModelConfig(attention_enabled=False, supervision_strategy="sam")


def test_supervision_parse_aliases():
    assert Supervision.parse("output-only") is Supervision.OUTPUT_ONLY
    assert Supervision.parse("SAF") is Supervision.SAF
    with pytest.raises(ValueError):
        Supervision.parse("nonsense")


def test_config_roundtrip():
    cfg = ModelConfig(channel_scale=0.5, supervision_strategy="sam")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# --- checkpoints -------------------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path, desk_net, desk_input):
    desk_net(desk_input, training=True)  # populate running statistics
    path = tmp_path / "m.ckpt"
    save_checkpoint(desk_net.store, path, {"model": desk_net.config.to_dict()}, seed=3)
    manifest, params, buffers = read_checkpoint(path)
    assert manifest["format_version"] == 1 and manifest["seed"] == 3
    fresh = Network(ModelConfig(**DESK), seed=99)
    load_into(fresh.store, params, buffers)
    for k, t in desk_net.store.params.items():
        assert np.array_equal(t.data, fresh.store[k].data)
    for k, v in desk_net.store.buffers.items():
        assert np.array_equal(v, fresh.store.get_buffer(k))
    a = desk_net(desk_input, training=False).final_prob.data
    b = fresh(desk_input, training=False).final_prob.data
    assert np.array_equal(a, b)


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        read_checkpoint(p)


def test_checkpoint_shape_mismatch(tmp_path):
    a = Network(ModelConfig(**DESK), seed=0)
    b = Network(ModelConfig(channel_scale=0.5, patch_size=32), seed=0)
    path = tmp_path / "a.ckpt"
    save_checkpoint(a.store, path, {}, 0)
    _, params, buffers = read_checkpoint(path)
    with pytest.raises(CheckpointError):
        load_into(b.store, params, buffers)


def test_store_duplicate_paths():
    s = ParameterStore()
    s.add("x", np.zeros(2))
    with pytest.raises(KeyError):
        s.add("x", np.zeros(2))

import numpy as np
import pytest
import torch

from mind.backbone import (
    MIND,
    AblationFlags,
    ModalityFusion,
    ModelConfig,
    SelfAttentionLayer,
    encode_decode,
    fuse_modalities,
    mind_forward,
    self_attention,
)
from mind.errors import ConfigError, DimensionError

DT = torch.float64
SMALL = ModelConfig(base_channels=8, embed_dim=16, transformer_layers=1, window=7)


def _model(flags=None, config=SMALL, seed=0):
    torch.manual_seed(seed)
    return MIND(config, flags).eval()


@pytest.mark.parametrize("flags", list(AblationFlags.all_combinations()), ids=str)
def test_untrained_model_is_identity(flags):
    model = _model(flags)
    y = np.random.default_rng(5).random((32, 32))
    with torch.no_grad():
        out = mind_forward(y, model)
    assert out.denoised.dtype == torch.float64
    assert np.array_equal(out.denoised.numpy()[0, 0], y)
    assert np.array_equal(out.coarse.numpy()[0, 0], y)


def test_zero_coarse_head_passes_input():
    y = np.random.default_rng(0).random((16, 16))
    with torch.no_grad():
        coarse, _ = encode_decode(y, _model())
    assert np.array_equal(coarse.numpy()[0, 0], y)


@pytest.mark.parametrize("hw", [(16, 16), (32, 48), (64, 16)])
def test_output_shape_matches_input(hw):
    model = _model()
    torch.nn.init.normal_(model.head.weight, std=0.01)
    with torch.no_grad():
        out = model(np.random.default_rng(0).random(hw))
    assert out.denoised.shape == (1, 1, *hw) and out.sigma.shape == (1, 1, *hw)


def test_all_flags_off_single_scale_any_size():
    model = _model(AblationFlags(False, False, False, False))
    y = np.random.default_rng(0).random((13, 11))
    with torch.no_grad():
        out = model(y)
    assert out.denoised.shape == (1, 1, 13, 11)


def test_indivisible_size_rejected():
    with pytest.raises(DimensionError):
        _model()(np.zeros((18, 16)))


@pytest.mark.parametrize("h, w, p", [(8, 8, 2), (16, 32, 4), (12, 20, 4)])
def test_token_count(h, w, p):
    fusion = ModalityFusion(16, p).double()
    x = torch.rand(1, 1, h, w, dtype=DT)
    assert fusion(x, x, x).shape == (1, 3 * (h // p) * (w // p), 16)


def test_identical_modalities_give_identical_blocks():
    fusion = ModalityFusion(16, 2).double()
    with torch.no_grad():
        fusion.modality_tag.zero_()
    x = torch.rand(1, 1, 8, 8, dtype=DT)
    z = fusion(x, x, x)[0]
    torch.testing.assert_close(z[:16], z[16:32], rtol=0, atol=0)
    torch.testing.assert_close(z[:16], z[32:], rtol=0, atol=0)


def test_zero_projection_leaves_position_and_tag():
    fusion = ModalityFusion(16, 2).double()
    with torch.no_grad():
        fusion.proj.weight.zero_()
        fusion.proj.bias.zero_()
    x = torch.rand(1, 1, 8, 8, dtype=DT)
    z = fusion(x, 2 * x, x + 1)[0]
    from mind.backbone import sinusoidal_positions

    pos = sinusoidal_positions(4, 4, 16, DT)
    for m in range(3):
        torch.testing.assert_close(z[16 * m : 16 * (m + 1)], pos + fusion.modality_tag[m])


def test_fuse_modalities_shape_check():
    with pytest.raises(DimensionError):
        fuse_modalities(np.zeros((8, 8)), np.zeros((8, 8)), np.zeros((8, 4)), _model())


def test_single_token_attention_is_one():
    layer = SelfAttentionLayer(16).double()
    assert layer.attention(torch.randn(1, 1, 16, dtype=DT)).item() == 1.0


def test_two_identical_tokens_split_evenly():
    layer = SelfAttentionLayer(16).double()
    t = torch.randn(1, 16, dtype=DT).expand(2, 16)
    torch.testing.assert_close(layer.attention(t), torch.full((2, 2), 0.5, dtype=DT), rtol=0, atol=0)


def test_rows_sum_to_one():
    torch.manual_seed(0)
    layer = SelfAttentionLayer(16).double()
    a = layer.attention(3 * torch.randn(48, 16, dtype=DT))
    assert torch.max(torch.abs(a.sum(-1) - 1)) < 1e-6
    assert torch.all(a >= 0)


def test_permutation_equivariance():
    torch.manual_seed(1)
    layer = SelfAttentionLayer(16).double()
    z = torch.randn(10, 16, dtype=DT)
    perm = torch.randperm(10)
    torch.testing.assert_close(self_attention(z[perm], layer), self_attention(z, layer)[perm])


def test_parameter_count_same_in_both_scale_modes():
    on = sum(p.numel() for p in _model(AblationFlags()).parameters())
    off = sum(p.numel() for p in _model(AblationFlags(use_multiscale=False)).parameters())
    assert on == off


@pytest.mark.parametrize("flag", ["use_naab", "use_nle", "use_multiscale", "use_crossmodal"])
def test_each_flag_changes_diagnostics(flag):
    y = np.random.default_rng(3).random((32, 32))
    full = _model()
    torch.nn.init.normal_(full.head.weight, std=0.1)
    torch.nn.init.normal_(full.encoder.coarse_head.weight, std=0.1)
    with torch.no_grad():
        a = full(y).diagnostics
        b = full(y, AblationFlags(**{flag: False})).diagnostics
    changed = [
        k
        for k in a
        if (a[k] is None) != (b.get(k) is None)
        or (a[k] is not None and not torch.equal(a[k], b[k]))
    ]
    assert changed, flag


def test_spatial_map_half_at_init():
    with torch.no_grad():
        out = _model()(np.random.default_rng(0).random((16, 16)))
    assert torch.all(out.diagnostics["spatial"] == 0.5)


def test_bad_config():
    with pytest.raises(ConfigError):
        ModelConfig(base_channels=6, r=4)
    assert ModelConfig(scales=3, patch=4).multiple == 4
    assert ModelConfig(scales=4, patch=2).multiple == 8


@pytest.mark.parametrize("name", ["self_attention", "encode_decode", "mind_forward"])
def test_gradients(name):
    from mind.gradcheck import REGISTRY, grad_check

    assert grad_check(name, seed=0) < REGISTRY[name]["tol"]

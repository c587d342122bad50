import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mind.errors import ConfigError, DimensionError, ParameterError
from mind.objective import (
    DEFAULT_ALPHA,
    Discriminator,
    LossReport,
    LossWeightsConfig,
    PerceptualExtractor,
    adversarial_from_confidence,
    lambda_weights,
    loss_adversarial,
    loss_edge,
    loss_mse,
    loss_perceptual,
    loss_ssim,
    ssim,
    total_loss,
)

DT = torch.float64


def test_zero_sigma_gives_alpha_exactly():
    assert lambda_weights(0.0) == (1.0, 0.8, 0.6, 0.4, 0.1)


def test_ten_percent_weight():
    assert abs(lambda_weights(10.0)[0] - 0.22313016014842982) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 100), st.floats(1e-3, 50))
def test_weights_strictly_decrease(s, ds):
    lo, hi = lambda_weights(s), lambda_weights(s + ds)
    assert all(b < a or (a == 0.0 and b == 0.0) for a, b in zip(lo, hi))


def test_negative_sigma_rejected():
    with pytest.raises(ParameterError):
        lambda_weights(-1e-9)


def test_per_term_betas():
    cfg = LossWeightsConfig(beta_decay=(0.0, 0.1, 0.0, 0.0, 0.0))
    lam = lambda_weights(10.0, cfg)
    assert lam[0] == 1.0 and lam[1] == pytest.approx(0.8 * math.exp(-1.0))


def test_config_validation():
    with pytest.raises(ConfigError):
        LossWeightsConfig(alpha=(1.0, 2.0))
    with pytest.raises(ConfigError):
        LossWeightsConfig(beta_decay=(0.1, 0.1))


def test_mse_values():
    x = torch.rand(16, 16, dtype=DT)
    assert loss_mse(x, x).item() == 0.0
    assert loss_mse(x + 0.1, x).item() == pytest.approx(0.01, abs=1e-15)


def test_mse_gradient_closed_form():
    x = torch.rand(6, 6, dtype=DT)
    xhat = torch.rand(6, 6, dtype=DT, requires_grad=True)
    loss_mse(xhat, x).backward()
    torch.testing.assert_close(xhat.grad[0, 0] if xhat.grad.dim() == 4 else xhat.grad, 2 * (xhat.detach() - x) / 36)


def test_ssim_constant_pair():
    a = torch.full((16, 16), 0.4, dtype=DT)
    b = torch.full((16, 16), 0.5, dtype=DT)
    expected = (2 * 0.4 * 0.5 + 1e-4) / (0.16 + 0.25 + 1e-4)
    assert ssim(a, b).item() == pytest.approx(expected, abs=1e-12)
    assert abs(ssim(a, b).item() - 0.97568) < 1e-4
    assert loss_ssim(a, b).item() == pytest.approx(1 - expected, abs=1e-12)


def test_ssim_identity_and_symmetry():
    a = torch.rand(20, 20, dtype=DT)
    b = torch.rand(20, 20, dtype=DT)
    assert loss_ssim(a, a).item() == pytest.approx(0.0, abs=1e-12)
    assert abs(loss_ssim(a, b).item() - loss_ssim(b, a).item()) < 1e-12


def test_ssim_needs_full_window():
    with pytest.raises(DimensionError):
        loss_ssim(torch.rand(8, 8), torch.rand(8, 8))


def test_edge_ignores_constant_offset():
    x = torch.rand(12, 12, dtype=DT)
    assert loss_edge(x, x).item() == 0.0
    assert loss_edge(x + 0.2, x).item() == pytest.approx(0.0, abs=1e-12)


def test_perceptual_frozen_and_seeded():
    a, b = PerceptualExtractor(seed=4), PerceptualExtractor(seed=4)
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q) and not p.requires_grad
    x = torch.rand(1, 1, 16, 16)
    y = torch.rand(1, 1, 16, 16)
    assert loss_perceptual(x, x, a).item() == 0.0
    assert loss_perceptual(x, y, a).item() == loss_perceptual(x, y, b).item()
    assert not torch.equal(PerceptualExtractor(seed=5).layers[0].weight, a.layers[0].weight)


def test_perceptual_weight_scale():
    # unit-variance initializer scaled by fan-in
    w = PerceptualExtractor(seed=0).layers[1].weight
    fan_in = w[0].numel()
    assert float(w.var() * fan_in) == pytest.approx(1.0, rel=0.1)


def test_adversarial_values():
    assert adversarial_from_confidence(torch.tensor([0.5])).item() == pytest.approx(math.log(2), abs=1e-7)
    assert adversarial_from_confidence(torch.tensor([1.0 - 1e-9])).item() < 1e-6
    c = torch.linspace(0.05, 0.95, 10)
    v = [adversarial_from_confidence(ci[None]).item() for ci in c]
    assert all(a > b for a, b in zip(v, v[1:]))


def test_discriminator_range():
    torch.manual_seed(0)
    d = Discriminator()
    p = d(torch.rand(4, 1, 16, 16) * 100)
    assert torch.all((p > 0) & (p < 1))


def test_adversarial_disabled_raises():
    with pytest.raises(ConfigError):
        loss_adversarial(torch.rand(1, 1, 8, 8), Discriminator(), LossWeightsConfig())


def test_total_zero_for_perfect_reconstruction():
    x = torch.rand(1, 1, 16, 16, dtype=DT)
    total, rep = total_loss(x, x, 0.1, extractor=PerceptualExtractor().double())
    assert abs(total.item()) < 1e-12 and abs(rep.total) < 1e-12


def test_total_at_zero_sigma_uses_alpha():
    torch.manual_seed(0)
    x = torch.rand(1, 1, 16, 16, dtype=DT)
    xh = torch.rand(1, 1, 16, 16, dtype=DT)
    ext = PerceptualExtractor().double()
    total, rep = total_loss(xh, x, 0.0, extractor=ext)
    terms = [loss_mse(xh, x), loss_ssim(xh, x), loss_edge(xh, x), loss_perceptual(xh, x, ext)]
    expected = math.fsum(a * t.item() for a, t in zip(DEFAULT_ALPHA, terms))
    assert rep.lambdas == list(DEFAULT_ALPHA)
    assert total.item() == pytest.approx(expected, abs=1e-12)


def test_total_with_discriminator():
    torch.manual_seed(0)
    x = torch.rand(2, 1, 16, 16)
    cfg = LossWeightsConfig(adversarial_enabled=True)
    total, rep = total_loss(x * 0.9, x, 0.05, cfg, PerceptualExtractor(), Discriminator())
    assert rep.adversarial > 0
    assert abs(rep.total - rep.recompute_total()) < 1e-9
    with pytest.raises(ConfigError):
        total_loss(x, x, 0.05, cfg, PerceptualExtractor(), None)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 0.3))
def test_report_recomputes(seed, sigma):
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(1, 1, 16, 16, generator=g)
    xh = torch.rand(1, 1, 16, 16, generator=g)
    total, rep = total_loss(xh, x, sigma)
    assert abs(rep.total - rep.recompute_total()) < 1e-9
    assert abs(total.item() - rep.total) < 1e-6
    assert LossReport.from_dict(rep.to_dict()) == rep


@pytest.mark.parametrize("name", ["loss_mse", "loss_ssim", "loss_edge", "loss_perceptual", "total_loss"])
def test_gradients(name):
    from mind.gradcheck import REGISTRY, grad_check

    assert grad_check(name, seed=0) < REGISTRY[name]["tol"]

"""Central finite-difference checks of autograd gradients in float64.

Each registered component builds a seeded double-precision problem and
returns ``(fn, tensors)``: ``fn()`` recomputes the output and ``tensors`` are
the inputs and parameters whose gradients get checked.  Outputs are reduced
to a scalar by a fixed random projection.
"""

import math

import torch

from .backbone import MIND, ModelConfig, SelfAttentionLayer
from .errors import ConfigError
from .naab import NAAB, channel_attention, modulate, spatial_attention
from .objective import (
    LossWeightsConfig,
    PerceptualExtractor,
    loss_edge,
    loss_mse,
    loss_perceptual,
    loss_ssim,
    total_loss,
)

DT = torch.float64
REGISTRY = {}

# Composite components are checked on a seeded subset of entries per tensor,
# and each entry takes the best agreement over a ladder of step sizes: large
# steps straddle ReLU/clamp kinks, small ones drown in round-off.  A wrong
# analytic gradient disagrees at every step.
COMPOSITE_SAMPLE = 24
COMPOSITE_STEPS = (1e-4, 1e-5, 1e-6)


def register(name, eps=1e-3, tol=1e-4, composite=False):
    def deco(builder):
        REGISTRY[name] = {"builder": builder, "eps": eps, "tol": tol, "composite": composite}
        return builder

    return deco


def _rand(gen, *shape, lo=-1.0, hi=1.0):
    return (lo + (hi - lo) * torch.rand(shape, generator=gen, dtype=DT)).requires_grad_(True)


def _params(module):
    return [p for p in module.parameters() if p.requires_grad]


@register("modulate", tol=1e-6)
def _modulate(gen):
    f, g, b = _rand(gen, 4, 8, 8), _rand(gen, 4, lo=0.5, hi=1.5), _rand(gen, 4)
    return (lambda: modulate(f, g, b)), [f, g, b]


@register("channel_attention")
def _channel_attention(gen):
    f, w1, w2 = _rand(gen, 4, 8, 8), _rand(gen, 1, 4), _rand(gen, 4, 1)
    with torch.no_grad():
        # keep the bottleneck pre-activation away from the ReLU kink
        w1[0] *= torch.sign(w1[0] @ f.mean(dim=(1, 2)))
    return (lambda: channel_attention(f, w1, w2)), [f, w1, w2]


@register("spatial_attention")
def _spatial_attention(gen):
    f = _rand(gen, 4, 8, 8)
    k, b = _rand(gen, 1, 2, 7, 7, lo=-0.3, hi=0.3), _rand(gen, 1)
    return (lambda: spatial_attention(f, k, b)), [f, k, b]


@register("naab_forward")
def _naab(gen):
    torch.manual_seed(int(torch.randint(1 << 30, (1,), generator=gen)))
    block = NAAB(4, r=4).to(DT)
    f, g, b = _rand(gen, 4, 8, 8), _rand(gen, 4, lo=0.5, hi=1.5), _rand(gen, 4)
    with torch.no_grad():
        block.w1[0] *= torch.sign(block.w1[0] @ (g * f.mean(dim=(1, 2)) + b))
    return (lambda: block(f, g, b)[0]), [f, g, b, *_params(block)]


@register("self_attention", eps=1e-5)
def _self_attention(gen):
    torch.manual_seed(int(torch.randint(1 << 30, (1,), generator=gen)))
    layer = SelfAttentionLayer(16).to(DT)
    z = _rand(gen, 1, 8, 16)
    return (lambda: layer(z)), [z, *_params(layer)]


# quadratic: central differences are exact, a wide step only cuts round-off
@register("loss_mse", eps=1e-1, tol=1e-10)
def _mse(gen):
    a, b = _rand(gen, 16, 16, lo=0, hi=1), _rand(gen, 16, 16, lo=0, hi=1)
    return (lambda: loss_mse(a, b)), [a, b]


@register("loss_ssim")
def _ssim(gen):
    a, b = _rand(gen, 16, 16, lo=0, hi=1), _rand(gen, 16, 16, lo=0, hi=1)
    return (lambda: loss_ssim(a, b)), [a, b]


@register("loss_edge", eps=1e-6)
def _edge(gen):
    a, b = _rand(gen, 16, 16, lo=0, hi=1), _rand(gen, 16, 16, lo=0, hi=1)
    return (lambda: loss_edge(a, b)), [a, b]


@register("loss_perceptual", eps=1e-6)
def _perc(gen):
    ext = PerceptualExtractor(seed=0).to(DT)
    a, b = _rand(gen, 16, 16, lo=0, hi=1), _rand(gen, 16, 16, lo=0, hi=1)
    return (lambda: loss_perceptual(a, b, ext)), [a, b]


@register("total_loss", eps=None, tol=1e-3, composite=True)
def _total(gen):
    ext = PerceptualExtractor(seed=0).to(DT)
    a, b = _rand(gen, 16, 16, lo=0, hi=1), _rand(gen, 16, 16, lo=0, hi=1)
    cfg = LossWeightsConfig()
    return (lambda: total_loss(a, b, 0.1, cfg, ext)[0]), [a]


def _small_model(gen):
    torch.manual_seed(int(torch.randint(1 << 30, (1,), generator=gen)))
    cfg = ModelConfig(scales=3, base_channels=8, embed_dim=16, patch=4, transformer_layers=1, r=4, window=15)
    model = MIND(cfg).to(DT)
    with torch.no_grad():
        # non-zero heads so every branch carries gradient
        for head in (model.head, model.encoder.coarse_head):
            head.weight.normal_(0.0, 0.02, generator=gen)
        for h in (model.mapper.head_gamma, model.mapper.head_beta):
            h.weight.normal_(0.0, 0.5, generator=gen)
    return model


@register("encode_decode", eps=None, tol=1e-3, composite=True)
def _encode_decode(gen):
    model = _small_model(gen)
    y = _rand(gen, 1, 1, 16, 16, lo=0.3, hi=0.7)
    return (lambda: model.encode_decode(y)[0]), [y, *_params(model.encoder)]


@register("mind_forward", eps=None, tol=1e-3, composite=True)
def _mind(gen):
    model = _small_model(gen)
    y = _rand(gen, 1, 1, 16, 16, lo=0.3, hi=0.7)
    return (lambda: model(y).denoised), [y, *_params(model)]


def _entries(t, gen, limit):
    n = t.numel()
    if limit is None or n <= limit:
        return range(n)
    return torch.randperm(n, generator=gen)[:limit].tolist()


def grad_check(component, eps=None, seed=0, sample=None):
    """Max relative error |a - f| / max(|a|, |f|, 1e-8) over checked entries."""
    if component not in REGISTRY:
        raise ConfigError(f"unknown gradcheck component {component!r}; known: {sorted(REGISTRY)}")
    entry = REGISTRY[component]
    if sample is None and entry["composite"]:
        sample = COMPOSITE_SAMPLE
    steps = COMPOSITE_STEPS if entry["composite"] and eps is None else (eps or entry["eps"],)
    gen = torch.Generator().manual_seed(seed)
    fn, tensors = entry["builder"](gen)
    out = fn()
    proj = torch.randn(out.shape, generator=gen, dtype=DT)

    def scalar():
        return (fn() * proj).sum()

    grads = torch.autograd.grad(scalar(), tensors, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for t, g in zip(tensors, grads):
            g = torch.zeros_like(t) if g is None else g
            flat, gflat = t.view(-1), g.reshape(-1)
            for i in _entries(t, gen, sample):
                a = gflat[i].item()
                err = math.inf
                for h in steps:
                    orig = flat[i].item()
                    flat[i] = orig + h
                    fp = scalar().item()
                    flat[i] = orig - h
                    fm = scalar().item()
                    flat[i] = orig
                    fd = (fp - fm) / (2 * h)
                    err = min(err, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
                worst = max(worst, err)
    return worst


def run_all(seed=0):
    """``{name: (max_rel_error, tolerance)}`` for every registered component."""
    return {name: (grad_check(name, seed=seed), REGISTRY[name]["tol"]) for name in REGISTRY}


def components():
    return sorted(REGISTRY)


if __name__ == "__main__":  # pragma: no cover
    for name, (err, tol) in run_all().items():
        print(f"{name:20s} {err:.3e}  tol {tol:.0e}  {'ok' if err < tol else 'FAIL'}")

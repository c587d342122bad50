"""Composite training objective with noise-dependent term weights.

Five terms (MSE, 1 - SSIM, edge L1, perceptual, adversarial) are combined as

    total = sum_i lambda_i(sigma) * L_i,   lambda_i(sigma) = alpha_i * exp(-beta_i * sigma)

with ``sigma`` the NLE's full-image mean expressed in percent of the [0, 1]
intensity range.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ._tensor import as_batch
from .errors import ConfigError, DimensionError, ParameterError
from .nle import gradient_magnitude

TERMS = ("mse", "ssim", "edge", "perc", "adv")
DEFAULT_ALPHA = (1.0, 0.8, 0.6, 0.4, 0.1)
DEFAULT_BETA = 0.15
SIGMA_TO_PERCENT = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass
class LossWeightsConfig:
    alpha: tuple = DEFAULT_ALPHA
    beta_decay: object = DEFAULT_BETA  # float, or one value per term
    adversarial_enabled: bool = False

    def __post_init__(self):
        self.alpha = tuple(float(a) for a in self.alpha)
        if len(self.alpha) != len(TERMS):
            raise ConfigError(f"alpha needs {len(TERMS)} entries, got {len(self.alpha)}")
        if isinstance(self.beta_decay, (list, tuple)):
            if len(self.beta_decay) != len(TERMS):
                raise ConfigError(f"beta_decay needs 1 or {len(TERMS)} entries")
            self.beta_decay = tuple(float(b) for b in self.beta_decay)
        else:
            self.beta_decay = float(self.beta_decay)

    @property
    def betas(self):
        if isinstance(self.beta_decay, tuple):
            return self.beta_decay
        return (self.beta_decay,) * len(TERMS)

    def to_dict(self):
        d = asdict(self)
        d["alpha"] = list(self.alpha)
        if isinstance(self.beta_decay, tuple):
            d["beta_decay"] = list(self.beta_decay)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def lambda_weights(sigma, cfg=None):
    """Per-term weights ``alpha_i * exp(-beta_i * sigma)``; ``sigma`` in percent units."""
    cfg = cfg or LossWeightsConfig()
    sigma = float(sigma)
    if not sigma >= 0:
        raise ParameterError(f"sigma must be non-negative, got {sigma}")
    return tuple(a * math.exp(-b * sigma) for a, b in zip(cfg.alpha, cfg.betas))


def _pair(xhat, x, min_size=1):
    xhat, x = as_batch(xhat), as_batch(x)
    if xhat.shape != x.shape:
        raise DimensionError(f"shape mismatch: {tuple(xhat.shape)} vs {tuple(x.shape)}")
    if min(x.shape[-2:]) < min_size:
        raise DimensionError(f"images must be at least {min_size}x{min_size}, got {tuple(x.shape[-2:])}")
    return xhat, x.to(xhat.dtype)


def loss_mse(xhat, x):
    xhat, x = _pair(xhat, x)
    return ((xhat - x) ** 2).mean()


def _gaussian_window(dtype, device):
    r = SSIM_WINDOW // 2
    t = torch.arange(-r, r + 1, dtype=torch.float64)
    g = torch.exp(-(t**2) / (2 * SSIM_SIGMA**2))
    g = g / g.sum()
    return (g[:, None] * g[None, :]).to(dtype=dtype, device=device)[None, None]


def ssim_map(xhat, x):
    """Local SSIM over every fully-contained 11x11 Gaussian window."""
    xhat, x = _pair(xhat, x, min_size=SSIM_WINDOW)
    w = _gaussian_window(xhat.dtype, xhat.device)
    mu_a = F.conv2d(xhat, w)
    mu_b = F.conv2d(x, w)
    var_a = F.conv2d(xhat * xhat, w) - mu_a**2
    var_b = F.conv2d(x * x, w) - mu_b**2
    cov = F.conv2d(xhat * x, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def ssim(xhat, x, per_image=False):
    m = ssim_map(xhat, x)
    return m.mean(dim=(1, 2, 3)) if per_image else m.mean()


def loss_ssim(xhat, x):
    return 1.0 - ssim(xhat, x)


def loss_edge(xhat, x):
    xhat, x = _pair(xhat, x, min_size=3)
    return (gradient_magnitude(xhat) - gradient_magnitude(x)).abs().mean()


class PerceptualExtractor(nn.Module):
    """Frozen, randomly initialised conv stack (1->16->32->32, stride 2).

    Stands in for a pretrained perceptual network.  Weights are drawn once
    from ``N(0, 1/fan_in)`` with a seeded generator and never trained.
    """

    def __init__(self, seed=0, widths=(16, 32, 32)):
        super().__init__()
        self.seed = seed
        gen = torch.Generator().manual_seed(seed)
        layers = []
        cin = 1
        for cout in widths:
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1, bias=False)
            with torch.no_grad():
                w = torch.randn(conv.weight.shape, generator=gen, dtype=torch.float64)
                conv.weight.copy_(w / math.sqrt(cin * 9))
            conv.weight.requires_grad_(False)
            layers.append(conv)
            cin = cout
        self.layers = nn.ModuleList(layers)

    def forward(self, x):
        for i, conv in enumerate(self.layers):
            x = conv(x.to(conv.weight.dtype))
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x


def loss_perceptual(xhat, x, extractor):
    xhat, x = _pair(xhat, x)
    if x.shape[-1] % 8 or x.shape[-2] % 8:
        raise DimensionError(f"perceptual loss needs sides divisible by 8, got {tuple(x.shape[-2:])}")
    return ((extractor(xhat) - extractor(x)) ** 2).mean()


class Discriminator(nn.Module):
    """Minimal conv classifier returning P(real) per image."""

    def __init__(self, width=16):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(1, width, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
        )
        self.fc = nn.Linear(2 * width, 1)

    def forward(self, x):
        h = self.body(as_batch(x).to(self.fc.weight.dtype)).mean(dim=(2, 3))
        return torch.sigmoid(self.fc(h))[:, 0]


ADV_EPS = 1e-7


def adversarial_from_confidence(conf):
    return -torch.log(torch.clamp(conf, ADV_EPS, 1 - ADV_EPS)).mean()


def loss_adversarial(xhat, discriminator, cfg=None):
    """-log D(xhat), averaged over the batch."""
    if cfg is not None and not cfg.adversarial_enabled:
        raise ConfigError("adversarial term is disabled in this configuration")
    return adversarial_from_confidence(discriminator(xhat))


def discriminator_loss(discriminator, real, fake):
    """Standard binary cross-entropy objective for the discriminator step."""
    d_real = torch.clamp(discriminator(real), ADV_EPS, 1 - ADV_EPS)
    d_fake = torch.clamp(discriminator(fake.detach()), ADV_EPS, 1 - ADV_EPS)
    return -(torch.log(d_real) + torch.log(1 - d_fake)).mean()


@dataclass
class LossReport:
    mse: float
    ssim_loss: float
    edge: float
    perceptual: float
    adversarial: float
    lambdas: list
    total: float
    sigma_scalar: float
    step: int = None
    extra: dict = field(default_factory=dict)

    @property
    def terms(self):
        return (self.mse, self.ssim_loss, self.edge, self.perceptual, self.adversarial)

    def recompute_total(self):
        return math.fsum(l * t for l, t in zip(self.lambdas, self.terms))

    def to_dict(self):
        d = asdict(self)
        if not d["extra"]:
            del d["extra"]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def total_loss(xhat, x, sigma_scalar, cfg=None, extractor=None, discriminator=None):
    """Weighted sum of all terms; returns ``(total_tensor, LossReport)``.

    ``sigma_scalar`` is the mean estimated noise sd in [0, 1] units (it is
    converted to percent before weighting) and is treated as a constant.
    """
    cfg = cfg or LossWeightsConfig()
    if isinstance(sigma_scalar, torch.Tensor):
        sigma_scalar = float(sigma_scalar.detach().mean())
    lambdas = lambda_weights(SIGMA_TO_PERCENT * sigma_scalar, cfg)
    xhat, x = _pair(xhat, x)
    extractor = extractor if extractor is not None else PerceptualExtractor()
    terms = [loss_mse(xhat, x), loss_ssim(xhat, x), loss_edge(xhat, x), loss_perceptual(xhat, x, extractor)]
    if cfg.adversarial_enabled:
        if discriminator is None:
            raise ConfigError("adversarial term enabled but no discriminator given")
        terms.append(loss_adversarial(xhat, discriminator, cfg))
    else:
        terms.append(torch.zeros((), dtype=xhat.dtype))
    total = sum(l * t.to(torch.float64) for l, t in zip(lambdas, terms))
    values = [float(t.detach()) for t in terms]
    report = LossReport(
        mse=values[0],
        ssim_loss=values[1],
        edge=values[2],
        perceptual=values[3],
        adversarial=values[4],
        lambdas=list(lambdas),
        total=0.0,
        sigma_scalar=float(sigma_scalar),
    )
    report.total = report.recompute_total()
    return total, report


def lambda_table(cfg, sigmas):
    """Rows ``(sigma, lambda_1..lambda_5)`` for each sigma (percent units)."""
    return np.array([(s, *lambda_weights(s, cfg)) for s in sigmas])

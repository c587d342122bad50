"""Label-free noise level estimation from gradient-residual statistics.

The estimator compares the local energy of the noisy image's gradient with
the gradient of a coarse denoised estimate::

    sigma(i, j) = sqrt(max(0, winmean[|grad Y|^2](i, j) - |grad Xhat(i, j)|^2) / K)

Gradients are normalized by the operator's noise gain, so each axis of white
noise with standard deviation s has variance s^2 and the squared magnitude has
expectation ``K * s^2`` with ``K = 2``.  The result therefore reads directly
in noise-sd units.
"""

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator, TransformerMixin

from ._tensor import as_batch, like_input, reflect_pad, safe_sqrt
from .errors import DimensionError, ParameterError
from .validation import check_image_batch, check_same_shape

# (smoothing taps, derivative taps); kernel = outer(smooth, deriv), scaled to unit noise gain
_STENCILS = {
    "sobel": (np.array([1.0, 2.0, 1.0]), np.array([-1.0, 0.0, 1.0])),
    "scharr": (np.array([3.0, 10.0, 3.0]), np.array([-1.0, 0.0, 1.0])),
}
_GAIN = {k: 1.0 / np.sqrt(np.sum(np.outer(s, d) ** 2)) for k, (s, d) in _STENCILS.items()}
OPERATORS = {k: np.outer(s, d) * _GAIN[k] for k, (s, d) in _STENCILS.items()}

# E[|grad n|^2] / var(n) for unit-gain axes: the two axis variances add.
# tests/test_nle.py re-derives it by Monte-Carlo.
MAGNITUDE_CALIBRATION = 2.0

DEFAULT_WINDOW = 15


def _stencil(operator):
    try:
        return _STENCILS[operator][0], _GAIN[operator]
    except KeyError:
        raise ParameterError(f"operator must be one of {sorted(OPERATORS)}, got {operator!r}") from None


def gradient_components(x, operator="sobel"):
    """(N, 1, H, W) -> (N, 2, H, W) normalized (Gx, Gy) with reflect padding.

    Evaluated separably (central difference, then smoothing), so constant
    regions give exactly zero.
    """
    if x.shape[-1] < 3 or x.shape[-2] < 3:
        raise DimensionError(f"gradient needs at least 3x3 input, got {tuple(x.shape[-2:])}")
    (a, b, _), gain = _stencil(operator)
    p = reflect_pad(x, 1)
    dx = p[..., :, 2:] - p[..., :, :-2]  # (H+2, W)
    dy = p[..., 2:, :] - p[..., :-2, :]  # (H, W+2)
    gx = (a * dx[..., :-2, :] + b * dx[..., 1:-1, :] + a * dx[..., 2:, :]) * gain
    gy = (a * dy[..., :, :-2] + b * dy[..., :, 1:-1] + a * dy[..., :, 2:]) * gain
    return torch.cat([gx, gy], dim=1)


def gradient_magnitude(x, operator="sobel"):
    g = gradient_components(x, operator)
    return safe_sqrt((g * g).sum(dim=1, keepdim=True))


def gradient_map(img, operator="sobel"):
    """Normalized gradient magnitude sqrt(Gx^2 + Gy^2) of an image."""
    return like_input(gradient_magnitude(as_batch(img), operator), img)


def window_mean(x, window):
    pad = window // 2
    return F.avg_pool2d(reflect_pad(x, pad), window, stride=1)


def sigma_map_tensor(noisy, coarse, window=DEFAULT_WINDOW, operator="sobel"):
    """Tensor version of :func:`estimate_sigma_map` on (N, 1, H, W) inputs."""
    if noisy.shape != coarse.shape:
        raise DimensionError(
            f"noisy and coarse differ in shape: {tuple(noisy.shape)} vs {tuple(coarse.shape)}"
        )
    h, w = noisy.shape[-2:]
    if window < 3 or window % 2 == 0 or window > min(h, w):
        raise ParameterError(f"window must be odd, >= 3 and <= {min(h, w)}; got {window}")
    gy = gradient_components(noisy, operator)
    gx = gradient_components(coarse, operator)
    energy = window_mean((gy * gy).sum(dim=1, keepdim=True), window)
    radicand = energy - (gx * gx).sum(dim=1, keepdim=True)
    return safe_sqrt(radicand / MAGNITUDE_CALIBRATION)


def estimate_sigma_map(noisy, coarse, window=DEFAULT_WINDOW, operator="sobel"):
    """Per-pixel noise sd from the noisy image and a coarse clean estimate.

    Only ``noisy`` and ``coarse`` are read; no clean reference is needed.
    """
    if not isinstance(noisy, torch.Tensor):
        check_same_shape(noisy, coarse, ("noisy", "coarse"))
        noisy = np.asarray(noisy, dtype=np.float64)
    sig = sigma_map_tensor(as_batch(noisy), as_batch(coarse), window, operator)
    return like_input(sig, noisy)


def sigma_scalar(sigma):
    """Full-image mean of a sigma map (one value per batch item for 3-D/4-D tensors)."""
    if isinstance(sigma, torch.Tensor):
        if sigma.numel() == 0:
            raise DimensionError("empty sigma map")
        if sigma.dim() == 4:
            return sigma.mean(dim=(1, 2, 3))
        return sigma.mean()
    arr = np.asarray(sigma, dtype=np.float64)
    if arr.size == 0:
        raise DimensionError("empty sigma map")
    return float(arr.mean())


class ModulationMapper(nn.Module):
    """Shallow CNN from a sigma map to per-channel (gamma, beta).

    conv3x3(1->8) -> ReLU -> conv3x3(8->8) -> ReLU -> global mean -> two
    affine heads of width ``channels``.  Heads start at zero so the initial
    modulation is the identity (gamma = 1, beta = 0).
    """

    def __init__(self, channels, hidden=8):
        super().__init__()
        self.channels = channels
        self.conv1 = nn.Conv2d(1, hidden, 3)
        self.conv2 = nn.Conv2d(hidden, hidden, 3)
        self.head_gamma = nn.Linear(hidden, channels)
        self.head_beta = nn.Linear(hidden, channels)
        for head in (self.head_gamma, self.head_beta):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def forward(self, sigma):
        if not torch.all(torch.isfinite(sigma)):
            raise ParameterError("sigma map contains non-finite values")
        h = F.relu(self.conv1(reflect_pad(sigma, 1)))
        h = F.relu(self.conv2(reflect_pad(h, 1)))
        pooled = h.mean(dim=(2, 3))
        gamma = 1.0 + torch.tanh(self.head_gamma(pooled))
        beta = self.head_beta(pooled)
        return gamma, beta


def map_to_modulation(sigma, mapper):
    """Apply ``mapper`` to a sigma map; returns ``(gamma, beta)`` of shape (N, C)."""
    return mapper(as_batch(sigma, dtype=next(mapper.parameters()).dtype))


class NoiseLevelEstimator(TransformerMixin, BaseEstimator):
    """sklearn-style wrapper: ``transform`` maps noisy images to sigma maps.

    Parameters
    ----------
    window : int
        Odd side length of the averaging window.
    operator : {"sobel", "scharr"}
    coarse_sigma : float
        Gaussian blur width used to build the coarse estimate when none is
        supplied to :meth:`transform`.
    """

    def __init__(self, window=DEFAULT_WINDOW, operator="sobel", coarse_sigma=1.5):
        self.window = window
        self.operator = operator
        self.coarse_sigma = coarse_sigma

    def fit(self, X, y=None):
        check_image_batch(X)
        if self.operator not in OPERATORS:
            raise ParameterError(f"unknown operator {self.operator!r}")
        self.n_features_in_ = 1
        return self

    def transform(self, X, coarse=None):
        from .evalkit import baseline_denoise

        noisy = check_image_batch(X)
        if coarse is None:
            coarse = np.stack(
                [baseline_denoise(im, "gaussian_blur", sigma=self.coarse_sigma) for im in noisy]
            )
        else:
            coarse = check_image_batch(coarse, name="coarse")
        out = estimate_sigma_map(noisy, coarse, self.window, self.operator)
        return out[0] if np.ndim(X) == 2 else out

    def score_sigma(self, X, coarse=None):
        """Mean sigma per image."""
        maps = self.transform(X, coarse)
        maps = maps[None] if maps.ndim == 2 else maps
        return maps.mean(axis=(1, 2))

"""Noise-adaptive attention block.

Features are first recalibrated per channel by the noise-derived
``(gamma, beta)``, then gated by a channel attention vector computed from the
recalibrated features and a spatial attention map computed from the original
features (channel-wise mean and max pooled, 7x7 conv, sigmoid).
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from ._tensor import reflect_pad
from .errors import DimensionError, ParameterError


def _batched(f):
    return f[None] if f.dim() == 3 else f


def modulate(f, gamma, beta):
    """F' = gamma * F + beta, broadcast over H x W. Accepts (C,H,W) or (N,C,H,W)."""
    fb = _batched(f)
    gamma = gamma.reshape(-1, gamma.shape[-1]) if gamma.dim() > 1 else gamma[None]
    beta = beta.reshape(-1, beta.shape[-1]) if beta.dim() > 1 else beta[None]
    c = fb.shape[1]
    if gamma.shape[-1] != c or beta.shape[-1] != c:
        raise DimensionError(
            f"modulation has {gamma.shape[-1]}/{beta.shape[-1]} entries for {c} channels"
        )
    out = gamma[:, :, None, None] * fb + beta[:, :, None, None]
    return out[0] if f.dim() == 3 else out


def channel_attention(fprime, w1, w2):
    """alpha = sigmoid(W2 relu(W1 z)), z the spatial mean of each channel.

    ``w1`` is (C/r, C), ``w2`` is (C, C/r).  Returns (N, C) (or (C,) for 3-D input).
    """
    fb = _batched(fprime)
    if w1.shape[1] != fb.shape[1] or w2.shape[0] != fb.shape[1] or w2.shape[1] != w1.shape[0]:
        raise DimensionError(
            f"attention weights {tuple(w1.shape)}, {tuple(w2.shape)} do not fit {fb.shape[1]} channels"
        )
    z = fb.mean(dim=(2, 3))
    alpha = torch.sigmoid(F.linear(F.relu(F.linear(z, w1)), w2))
    return alpha[0] if fprime.dim() == 3 else alpha


def spatial_attention(f, kernel, bias):
    """sigmoid(conv7x7([mean_c F ; max_c F])) with reflect padding -> (N, 1, H, W)."""
    fb = _batched(f)
    pooled = torch.cat(
        [fb.mean(dim=1, keepdim=True), fb.amax(dim=1, keepdim=True)], dim=1
    )
    k = kernel.shape[-1]
    logits = F.conv2d(reflect_pad(pooled, k // 2), kernel, bias)
    a = torch.sigmoid(logits)
    return a[0] if f.dim() == 3 else a


class NAAB(nn.Module):
    """Noise-adaptive attention block with bottleneck ratio ``r``."""

    def __init__(self, channels, r=4, kernel_size=7):
        super().__init__()
        if r < 1 or channels % r:
            raise ParameterError(f"compression ratio {r} must divide channel count {channels}")
        self.channels = channels
        self.r = r
        hidden = channels // r
        self.w1 = nn.Parameter(torch.empty(hidden, channels))
        self.w2 = nn.Parameter(torch.empty(channels, hidden))
        self.spatial_kernel = nn.Parameter(torch.empty(1, 2, kernel_size, kernel_size))
        self.spatial_bias = nn.Parameter(torch.zeros(1))
        self.reset_parameters()

    def reset_parameters(self):
        nn.init.kaiming_uniform_(self.w1, a=5**0.5)
        nn.init.kaiming_uniform_(self.w2, a=5**0.5)
        nn.init.kaiming_uniform_(self.spatial_kernel, a=5**0.5)
        nn.init.zeros_(self.spatial_bias)

    def zero_(self):
        """All-zero weights: both attentions collapse to 0.5."""
        with torch.no_grad():
            for p in self.parameters():
                p.zero_()
        return self

    def forward(self, f, gamma=None, beta=None):
        """Return ``(F_att, alpha, A_spatial)``.

        Without ``gamma``/``beta`` the modulation is the identity.
        """
        fprime = f if gamma is None else modulate(f, gamma, beta)
        alpha = channel_attention(fprime, self.w1, self.w2)
        a_sp = spatial_attention(f, self.spatial_kernel, self.spatial_bias)
        out = fprime * alpha[..., None, None] * a_sp
        return out, alpha, a_sp


def naab_forward(f, gamma, beta, block):
    """Functional form: F_att for feature map ``f`` under modulation ``(gamma, beta)``."""
    return block(f, gamma, beta)[0]

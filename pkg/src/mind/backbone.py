"""The MIND denoising network.

Data flow for a noisy batch ``Y`` of shape (N, 1, H, W)::

    features, Xhat = encode_decode(Y)                  # residual pyramid
    G      = gradient_map(Y)
    sigma  = estimate_sigma_map(Y, Xhat)               # NLE
    gamma, beta = mapper(sigma)
    tokens = fuse_modalities(Y, Xhat, G)               # 3 * (H/p) * (W/p) tokens
    tokens = transformer(tokens)
    features = features + unpatch(tokens)
    features = NAAB(features, gamma, beta)
    denoised = clamp(Y - head(features))

The two reconstruction heads start at zero, so an untrained network returns
its input unchanged.
"""

import math
from dataclasses import asdict, dataclass, fields, replace

import torch
import torch.nn as nn
import torch.nn.functional as F

from ._tensor import as_batch
from .errors import ConfigError, DimensionError
from .naab import NAAB
from .nle import DEFAULT_WINDOW, ModulationMapper, gradient_magnitude, sigma_map_tensor


@dataclass(frozen=True)
class AblationFlags:
    use_naab: bool = True
    use_nle: bool = True
    use_multiscale: bool = True
    use_crossmodal: bool = True

    @classmethod
    def all_combinations(cls):
        names = [f.name for f in fields(cls)]
        for bits in range(2 ** len(names)):
            yield cls(**{n: bool(bits >> i & 1) for i, n in enumerate(names)})


@dataclass
class ModelConfig:
    scales: int = 3
    base_channels: int = 32
    embed_dim: int = 64
    key_dim: int = None  # defaults to embed_dim
    patch: int = 4
    transformer_layers: int = 2
    r: int = 4
    ffn_mult: int = 2
    window: int = DEFAULT_WINDOW
    operator: str = "sobel"

    def __post_init__(self):
        if self.key_dim is None:
            self.key_dim = self.embed_dim
        for name in ("scales", "base_channels", "embed_dim", "key_dim", "patch", "r", "ffn_mult"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.transformer_layers < 0:
            raise ConfigError("transformer_layers must be >= 0")
        if self.base_channels % self.r:
            raise ConfigError(f"r={self.r} must divide base_channels={self.base_channels}")

    @property
    def multiple(self):
        """Input sides must be multiples of this."""
        return math.lcm(2 ** (self.scales - 1), self.patch)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def _conv3(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1, padding_mode="reflect")


class ResBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = _conv3(channels, channels)
        self.conv2 = _conv3(channels, channels)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class EncoderDecoder(nn.Module):
    """Residual pyramid with ``scales`` levels and additive skips.

    In single-scale mode the same weights run with stride 1 and no
    resampling, so both modes have exactly the same parameter count.
    """

    def __init__(self, channels, scales):
        super().__init__()
        self.scales = scales
        self.stem = _conv3(1, channels)
        self.enc = nn.ModuleList(ResBlock(channels) for _ in range(scales))
        self.down = nn.ModuleList(_conv3(channels, channels) for _ in range(scales - 1))
        self.up = nn.ModuleList(_conv3(channels, channels) for _ in range(scales - 1))
        self.dec = nn.ModuleList(ResBlock(channels) for _ in range(scales - 1))
        self.coarse_head = _conv3(channels, 1)
        nn.init.zeros_(self.coarse_head.weight)
        nn.init.zeros_(self.coarse_head.bias)

    def forward(self, y, multiscale=True):
        h = F.relu(self.stem(y))
        skips = []
        for s in range(self.scales):
            h = self.enc[s](h)
            if s < self.scales - 1:
                skips.append(h)
                down = self.down[s]
                stride = 2 if multiscale else 1
                h = F.relu(F.conv2d(F.pad(h, (1, 1, 1, 1), mode="reflect"), down.weight, down.bias, stride=stride))
        for s in reversed(range(self.scales - 1)):
            if multiscale:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = self.up[s](h) + skips[s]
            h = self.dec[s](F.relu(h))
        return h


def sinusoidal_positions(h, w, dim, dtype=torch.float32):
    """Fixed 2-D sin/cos position code, half the channels per axis -> (h*w, dim)."""
    quarter = max(dim // 4, 1)
    freqs = 1.0 / (10000.0 ** (torch.arange(quarter, dtype=torch.float64) / quarter))
    ys = torch.arange(h, dtype=torch.float64)[:, None] * freqs
    xs = torch.arange(w, dtype=torch.float64)[:, None] * freqs
    py = torch.cat([ys.sin(), ys.cos()], dim=1)  # (h, 2q)
    px = torch.cat([xs.sin(), xs.cos()], dim=1)  # (w, 2q)
    pe = torch.cat(
        [py[:, None, :].expand(h, w, -1), px[None, :, :].expand(h, w, -1)], dim=2
    ).reshape(h * w, -1)
    if pe.shape[1] < dim:
        pe = F.pad(pe, (0, dim - pe.shape[1]))
    return pe[:, :dim].to(dtype)


class ModalityFusion(nn.Module):
    """Shared p x p patch projection of (noisy, coarse, gradient) into one sequence."""

    def __init__(self, embed_dim, patch):
        super().__init__()
        self.patch = patch
        self.embed_dim = embed_dim
        self.proj = nn.Conv2d(1, embed_dim, patch, stride=patch)
        self.modality_tag = nn.Parameter(torch.zeros(3, embed_dim))
        nn.init.normal_(self.modality_tag, std=0.02)

    def forward(self, noisy, coarse, grad):
        if not (noisy.shape == coarse.shape == grad.shape):
            raise DimensionError(
                f"modalities differ in shape: {tuple(noisy.shape)}, {tuple(coarse.shape)}, {tuple(grad.shape)}"
            )
        h, w = noisy.shape[-2:]
        if h % self.patch or w % self.patch:
            raise DimensionError(f"image {h}x{w} is not divisible by patch size {self.patch}")
        hp, wp = h // self.patch, w // self.patch
        pos = sinusoidal_positions(hp, wp, self.embed_dim, noisy.dtype).to(noisy.device)
        blocks = []
        for m, img in enumerate((noisy, coarse, grad)):
            tok = self.proj(img).flatten(2).transpose(1, 2)  # (N, hp*wp, D)
            blocks.append(tok + pos + self.modality_tag[m])
        return torch.cat(blocks, dim=1)


class SelfAttentionLayer(nn.Module):
    """Single-head attention + residual + LayerNorm, then FFN + residual + LayerNorm."""

    def __init__(self, embed_dim, key_dim=None, ffn_mult=2):
        super().__init__()
        key_dim = key_dim or embed_dim
        self.key_dim = key_dim
        self.w_q = nn.Linear(embed_dim, key_dim, bias=False)
        self.w_k = nn.Linear(embed_dim, key_dim, bias=False)
        self.w_v = nn.Linear(embed_dim, key_dim, bias=False)
        self.w_o = nn.Linear(key_dim, embed_dim)
        self.norm1 = nn.LayerNorm(embed_dim)
        self.ffn = nn.Sequential(
            nn.Linear(embed_dim, ffn_mult * embed_dim),
            nn.GELU(),
            nn.Linear(ffn_mult * embed_dim, embed_dim),
        )
        self.norm2 = nn.LayerNorm(embed_dim)

    def attention(self, z):
        """Softmax(Q K^T / sqrt(d_k)); rows sum to one."""
        q, k = self.w_q(z), self.w_k(z)
        return torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.key_dim), dim=-1)

    def forward(self, z, return_attention=False):
        attn = self.attention(z)
        z = self.norm1(z + self.w_o(attn @ self.w_v(z)))
        z = self.norm2(z + self.ffn(z))
        return (z, attn) if return_attention else z


def self_attention(z, layer):
    """Apply one transformer layer to a token sequence (L, D) or (N, L, D)."""
    squeeze = z.dim() == 2
    out = layer(z[None] if squeeze else z)
    return out[0] if squeeze else out


@dataclass
class MindOutput:
    denoised: torch.Tensor
    sigma: torch.Tensor
    coarse: torch.Tensor
    diagnostics: dict


class MIND(nn.Module):
    def __init__(self, config=None, flags=None):
        super().__init__()
        self.config = config or ModelConfig()
        self.flags = flags or AblationFlags()
        cfg = self.config
        c = cfg.base_channels
        self.encoder = EncoderDecoder(c, cfg.scales)
        self.mapper = ModulationMapper(c)
        self.fusion = ModalityFusion(cfg.embed_dim, cfg.patch)
        self.transformer = nn.ModuleList(
            SelfAttentionLayer(cfg.embed_dim, cfg.key_dim, cfg.ffn_mult)
            for _ in range(cfg.transformer_layers)
        )
        self.unpatch = nn.ConvTranspose2d(3 * cfg.embed_dim, c, cfg.patch, stride=cfg.patch)
        self.naab = NAAB(c, cfg.r)
        # spatial gate starts flat at 0.5; the channel MLP keeps its random init
        nn.init.zeros_(self.naab.spatial_kernel)
        self.head = _conv3(c, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    @property
    def dtype(self):
        return self.head.weight.dtype

    def required_multiple(self, flags=None):
        """Side-length multiple the enabled paths need (1 when neither resamples)."""
        flags = flags or self.flags
        m = 2 ** (self.config.scales - 1) if flags.use_multiscale else 1
        return math.lcm(m, self.config.patch) if flags.use_crossmodal else m

    def check_input(self, y, flags=None):
        m = self.required_multiple(flags)
        h, w = y.shape[-2:]
        if h % m or w % m:
            raise DimensionError(f"image {h}x{w}: both sides must be multiples of {m}")

    def encode_decode(self, y, flags=None):
        """Return ``(coarse, features)`` for a (N, 1, H, W) batch."""
        flags = flags or self.flags
        self.check_input(y, flags)
        x = y.to(self.dtype)
        feats = self.encoder(x, multiscale=flags.use_multiscale)
        residual = self.encoder.coarse_head(feats)
        coarse = torch.clamp(y - residual.to(y.dtype), 0.0, 1.0)
        return coarse, feats

    def _window(self, h, w):
        win = min(self.config.window, min(h, w))
        return win if win % 2 else win - 1

    def forward(self, noisy, flags=None):
        flags = flags or self.flags
        y = as_batch(noisy)
        self.check_input(y, flags)
        x = y.to(self.dtype)
        coarse, feats = self.encode_decode(y, flags)
        coarse_m = coarse.to(self.dtype)
        diag = {"coarse": coarse}

        if flags.use_nle:
            sigma = sigma_map_tensor(x, coarse_m, self._window(*x.shape[-2:]), self.config.operator)
            gamma, beta = self.mapper(sigma)
        else:
            sigma = torch.zeros_like(x)
            gamma = beta = None
        diag["sigma"] = sigma
        diag["gamma"] = gamma
        diag["beta"] = beta

        if flags.use_crossmodal:
            grad = gradient_magnitude(x, self.config.operator)
            tokens = self.fusion(x, coarse_m, grad)
            for layer in self.transformer:
                tokens = layer(tokens)
            n, _, h, w = x.shape
            p = self.config.patch
            hp, wp = h // p, w // p
            grid = tokens.reshape(n, 3, hp, wp, -1).permute(0, 1, 4, 2, 3).reshape(n, -1, hp, wp)
            feats = feats + self.unpatch(grid)
            diag["tokens"] = tokens

        if flags.use_naab:
            feats, alpha, a_sp = self.naab(feats, gamma, beta)
            diag["alpha"] = alpha
            diag["spatial"] = a_sp
        diag["features"] = feats

        residual = self.head(feats)
        denoised = torch.clamp(y - residual.to(y.dtype), 0.0, 1.0)
        return MindOutput(denoised=denoised, sigma=sigma, coarse=coarse, diagnostics=diag)

    def with_flags(self, **kw):
        self.flags = replace(self.flags, **kw)
        return self


def mind_forward(noisy, model, flags=None):
    """Run the full pipeline; returns :class:`MindOutput` (tensors in N,1,H,W layout)."""
    return model(noisy, flags)


def encode_decode(noisy, model, flags=None):
    return model.encode_decode(as_batch(noisy), flags)


def fuse_modalities(noisy, coarse, grad, model):
    dt = model.dtype
    return model.fusion(as_batch(noisy, dt), as_batch(coarse, dt), as_batch(grad, dt))

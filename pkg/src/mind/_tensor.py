import numpy as np
import torch
import torch.nn.functional as F


def as_batch(img, dtype=torch.float64):
    """(H, W) or (N, H, W) array/tensor -> (N, 1, H, W) tensor."""
    t = img if isinstance(img, torch.Tensor) else torch.as_tensor(np.asarray(img), dtype=dtype)
    if t.dim() == 2:
        t = t[None, None]
    elif t.dim() == 3:
        t = t[:, None]
    return t


def like_input(t, ref):
    """Undo :func:`as_batch`: return a numpy array when ``ref`` was not a tensor."""
    if isinstance(ref, torch.Tensor):
        return t.reshape(ref.shape) if ref.dim() in (2, 3) else t
    arr = t.detach().cpu().numpy()
    ndim = np.ndim(ref)
    if ndim == 2:
        return arr[0, 0]
    if ndim == 3:
        return arr[:, 0]
    return arr


def reflect_pad(x, pad):
    """Reflect padding (edge sample not repeated) that tolerates pad >= size."""
    if pad == 0:
        return x
    h, w = x.shape[-2:]
    if pad < h and pad < w:
        return F.pad(x, (pad, pad, pad, pad), mode="reflect")
    rows = _reflect_index(h, pad, x.device)
    cols = _reflect_index(w, pad, x.device)
    return x[..., rows, :][..., cols]


def _reflect_index(n, pad, device):
    idx = torch.arange(-pad, n + pad, device=device)
    if n == 1:
        return torch.zeros_like(idx)
    period = 2 * (n - 1)
    idx = torch.remainder(idx, period)
    return torch.where(idx >= n, period - idx, idx)


def safe_sqrt(x):
    """sqrt(max(x, 0)) with a zero (not NaN) gradient where x <= 0."""
    pos = x > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, x, torch.ones_like(x))), torch.zeros_like(x))

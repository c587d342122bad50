"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .errors import DimensionError, ParameterError


def check_image(img, *, min_size=3, name="image", clamp=False):
    """Return ``img`` as a contiguous 2-D float64 array.

    Raises :class:`DimensionError` for non-2-D input or when either side is
    shorter than ``min_size``; raises :class:`ParameterError` on non-finite
    values.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < min_size or arr.shape[1] < min_size:
        raise DimensionError(
            f"{name} must be at least {min_size}x{min_size}, got {arr.shape[0]}x{arr.shape[1]}"
        )
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite values")
    if clamp:
        arr = np.clip(arr, 0.0, 1.0)
    return np.ascontiguousarray(arr)


def check_image_batch(X, *, min_size=3, name="X"):
    """Accept a single image (H, W) or a stack (N, H, W); return (N, H, W) float64."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DimensionError(f"{name} must have shape (H, W) or (N, H, W), got {arr.shape}")
    if arr.shape[0] == 0:
        raise DimensionError(f"{name} is empty")
    for i in range(arr.shape[0]):
        check_image(arr[i], min_size=min_size, name=f"{name}[{i}]")
    return np.ascontiguousarray(arr)


def check_same_shape(a, b, names=("a", "b")):
    if np.shape(a) != np.shape(b):
        raise DimensionError(
            f"{names[0]} and {names[1]} differ in shape: {np.shape(a)} vs {np.shape(b)}"
        )


def check_divisible(shape, multiple, what="image"):
    h, w = shape[-2], shape[-1]
    if h % multiple or w % multiple:
        raise DimensionError(
            f"{what} dimensions {h}x{w} must be multiples of {multiple}"
        )

"""Seeded synthetic degradations: Gaussian, Poisson, speckle and motion blur.

All randomness comes from ``numpy.random.Generator(PCG64(seed))``, so the same
``NoiseSpec`` always produces the same output.  Clamping to [0, 1] is the last
step of every family.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionError, ParameterError
from .validation import check_image

KINDS = ("gaussian", "poisson", "speckle", "motion_blur")

# Ranges used by the training curriculum and by strict validation.
LEVEL_RANGES = {
    "gaussian": (0.05, 0.25),
    "speckle": (0.10, 0.30),
    "motion_blur": (5.0, 15.0),
    "poisson": (10.0, 1000.0),
}

DEFAULT_POISSON_PEAK = 255.0


@dataclass
class NoiseSpec:
    kind: str
    level: float
    angle: float = None
    seed: int = 0
    spatial_profile: np.ndarray = None

    def validate(self, shape=None, strict=False):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        level = float(self.level)
        if not math.isfinite(level) or level <= 0:
            if self.kind == "poisson":
                raise ParameterError(f"poisson peak must be positive, got {self.level}")
            raise ParameterError(f"{self.kind} level must be positive, got {self.level}")
        if strict:
            lo, hi = LEVEL_RANGES[self.kind]
            if not lo <= level <= hi:
                raise ParameterError(
                    f"{self.kind} level {level} outside [{lo}, {hi}] (strict mode)"
                )
        if self.spatial_profile is not None:
            if self.kind not in ("gaussian", "speckle"):
                raise ParameterError("spatial_profile applies to gaussian and speckle only")
            prof = np.asarray(self.spatial_profile, dtype=np.float64)
            if shape is not None and prof.shape != tuple(shape):
                raise DimensionError(
                    f"spatial_profile shape {prof.shape} does not match image {tuple(shape)}"
                )
            if np.any(prof < 0) or np.any(prof > 1):
                raise ParameterError("spatial_profile values must lie in [0, 1]")

    def to_dict(self):
        d = asdict(self)
        if self.spatial_profile is not None:
            d["spatial_profile"] = np.asarray(self.spatial_profile).tolist()
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"kind", "level", "angle", "seed", "spatial_profile"}
        if unknown:
            raise ParameterError(f"unknown NoiseSpec fields: {sorted(unknown)}")
        prof = d.get("spatial_profile")
        return cls(
            kind=d["kind"],
            level=float(d["level"]),
            angle=None if d.get("angle") is None else float(d["angle"]),
            seed=int(d.get("seed", 0)),
            spatial_profile=None if prof is None else np.asarray(prof, dtype=np.float64),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def motion_blur_kernel(length, angle):
    """Normalized 1-px-wide line kernel, antialiased by bilinear splatting.

    The segment of the given length is centred on the kernel origin; ``angle``
    is measured counter-clockwise from the +x (column) axis.
    """
    if length <= 0:
        raise ParameterError(f"motion blur length must be positive, got {length}")
    half = (length - 1) / 2.0
    radius = int(math.ceil(half)) + 1
    size = 2 * radius + 1
    k = np.zeros((size, size))
    n = 16 * int(math.ceil(length)) + 1
    t = np.linspace(-half, half, n)
    xs = radius + t * math.cos(angle)
    ys = radius - t * math.sin(angle)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0
    np.add.at(k, (y0, x0), (1 - fx) * (1 - fy))
    np.add.at(k, (y0, x0 + 1), fx * (1 - fy))
    np.add.at(k, (y0 + 1, x0), (1 - fx) * fy)
    np.add.at(k, (y0 + 1, x0 + 1), fx * fy)
    return k / k.sum()


def degrade(img, spec, strict=False):
    """Apply one noise family to a clean image and clamp into [0, 1]."""
    x = check_image(img, min_size=1)
    spec.validate(shape=x.shape, strict=strict)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    level = float(spec.level)

    if spec.kind == "gaussian":
        sigma = level if spec.spatial_profile is None else level * np.asarray(spec.spatial_profile)
        y = x + sigma * rng.standard_normal(x.shape)
    elif spec.kind == "poisson":
        y = rng.poisson(x * level).astype(np.float64) / level
    elif spec.kind == "speckle":
        s = level if spec.spatial_profile is None else level * np.asarray(spec.spatial_profile)
        y = x * (1.0 + s * rng.standard_normal(x.shape))
    else:
        angle = spec.angle if spec.angle is not None else rng.uniform(0.0, math.pi)
        kernel = motion_blur_kernel(level, angle)
        # numpy/torch "reflect" (edge pixel not repeated) is scipy's "mirror"
        y = ndimage.convolve(x, kernel, mode="mirror")
    return np.clip(y, 0.0, 1.0)


def sample_spec(rng, kinds=KINDS, level=None):
    """Draw a curriculum NoiseSpec: kind uniform over ``kinds``, level uniform in range."""
    kind = kinds[int(rng.integers(len(kinds)))]
    if level is None:
        lo, hi = LEVEL_RANGES[kind]
        if kind == "poisson":
            # log-uniform over photon counts
            level = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        else:
            level = float(rng.uniform(lo, hi))
    seed = int(rng.integers(2**63 - 1))
    return NoiseSpec(kind=kind, level=float(level), seed=seed)


def half_profile(shape, low=0.2, high=1.0):
    """Profile that is ``low`` on the left half and ``high`` on the right half."""
    prof = np.full(shape, float(low))
    prof[:, shape[1] // 2 :] = high
    return prof

"""Grayscale image I/O (PGM P5 / PFM Pf), patch extraction and dataset layout.

Images are plain 2-D ``float64`` numpy arrays with values in [0, 1].
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetError, DimensionError, FormatError, SizeMismatchError
from .validation import check_image

logger = logging.getLogger(__name__)

FORMATS = ("pgm8", "pgm16", "pfm")

_TOKEN = re.compile(rb"\S+")


def _header_tokens(data, count):
    """Pull ``count`` whitespace-separated tokens off a Netpbm header.

    Comments (``#`` to end of line) are skipped.  Returns the tokens and the
    offset of the first payload byte (one whitespace char after the last token).
    """
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise FormatError(f"header truncated after {len(tokens)} fields")
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = n if end < 0 else end + 1
            continue
        m = _TOKEN.match(data, pos)
        tok = m.group(0)
        if b"#" in tok:
            tok = tok[: tok.index(b"#")]
        tokens.append(tok)
        pos += len(tok)
    return tokens, pos + 1


def _parse_int(tok, field_name):
    try:
        value = int(tok)
    except ValueError:
        raise FormatError(f"invalid {field_name}: {tok!r}") from None
    if value <= 0:
        raise FormatError(f"invalid {field_name}: {value}")
    return value


def _read_pgm(data):
    (magic, w, h, maxval), offset = _header_tokens(data, 4)
    width = _parse_int(w, "width")
    height = _parse_int(h, "height")
    maxval = _parse_int(maxval, "maxval")
    if maxval > 65535:
        raise FormatError(f"invalid maxval: {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * dtype.itemsize
    payload = data[offset:]
    if len(payload) < expected:
        raise SizeMismatchError(
            f"payload has {len(payload)} bytes, header requires {expected}"
        )
    raw = np.frombuffer(payload[:expected], dtype=dtype).reshape(height, width)
    return raw.astype(np.float64) / maxval


def _read_pfm(data):
    # PFM headers are line based: "Pf\n<w> <h>\n<scale>\n"
    lines = data.split(b"\n", 3)
    if len(lines) < 4:
        raise FormatError("header truncated")
    if lines[0].strip() != b"Pf":
        if lines[0].strip() == b"PF":
            raise FormatError("magic: colour PFM (PF) is not supported")
        raise FormatError(f"magic: {lines[0][:8]!r}")
    dims = lines[1].split()
    if len(dims) != 2:
        raise FormatError(f"dimensions line: {lines[1]!r}")
    width = _parse_int(dims[0], "width")
    height = _parse_int(dims[1], "height")
    try:
        scale = float(lines[2])
    except ValueError:
        raise FormatError(f"invalid scale: {lines[2]!r}") from None
    if scale == 0.0:
        raise FormatError("invalid scale: 0")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    expected = width * height * 4
    payload = lines[3]
    if len(payload) != expected:
        raise SizeMismatchError(
            f"payload has {len(payload)} bytes, header requires {expected}"
        )
    # PFM scanlines run bottom-to-top
    raw = np.frombuffer(payload, dtype=dtype).reshape(height, width)[::-1]
    return raw.astype(np.float64)


def read_image_with_report(path):
    """Read a PGM/PFM file; return ``(image, out_of_range_count)``.

    PGM values are divided by their maxval.  PFM values are clamped into
    [0, 1] and the number of clamped pixels is returned.
    """
    data = Path(path).read_bytes()
    if data[:2] == b"P5":
        return _read_pgm(data), 0
    if data[:2] in (b"Pf", b"PF"):
        img = _read_pfm(data)
        bad = int(np.count_nonzero((img < 0.0) | (img > 1.0) | ~np.isfinite(img)))
        if bad:
            logger.warning("%s: %d pixel(s) outside [0, 1] clamped", path, bad)
            img = np.clip(np.nan_to_num(img, nan=0.0), 0.0, 1.0)
        return img, bad
    raise FormatError(f"magic: unrecognised file signature {data[:2]!r}")


def read_image(path):
    """Read a PGM (P5) or single-channel PFM file as an image in [0, 1]."""
    return read_image_with_report(path)[0]


def read_raw_pfm(path):
    """Read a PFM without clamping (used for non-image maps such as sigma)."""
    data = Path(path).read_bytes()
    return _read_pfm(data)


def quantize(img, maxval):
    """Round-half-up quantization of [0, 1] values onto ``0..maxval``."""
    return np.floor(np.clip(img, 0.0, 1.0) * maxval + 0.5).astype(np.int64)


def write_image(img, path, format="pgm16"):
    """Write ``img`` as ``pgm8``, ``pgm16`` or little-endian ``pfm``."""
    if format not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, got {format!r}")
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"image must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    if format == "pfm":
        payload = np.ascontiguousarray(arr[::-1], dtype="<f4").tobytes()
        header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    else:
        maxval = 255 if format == "pgm8" else 65535
        dtype = "u1" if maxval == 255 else ">u2"
        payload = quantize(arr, maxval).astype(dtype).tobytes()
        header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def format_for_path(path, default="pgm16"):
    """Pick a write format from a file suffix (``.pfm`` vs anything else)."""
    return "pfm" if str(path).lower().endswith(".pfm") else default


@dataclass
class PatchSet:
    """Equal-sized crops plus where each one came from."""

    patches: np.ndarray  # (n, size, size)
    offsets: list = field(default_factory=list)  # [(row, col), ...]
    source: str = ""

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)


def crop_patches(img, size, count, seed, source=""):
    """Draw ``count`` square crops at uniformly random valid offsets."""
    img = check_image(img)
    h, w = img.shape
    if size < 1 or size > min(h, w):
        raise DimensionError(f"patch size {size} does not fit a {h}x{w} image")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, h - size + 1, size=count)
    cols = rng.integers(0, w - size + 1, size=count)
    patches = np.stack([img[r : r + size, c : c + size] for r, c in zip(rows, cols)])
    offsets = [(int(r), int(c)) for r, c in zip(rows, cols)]
    return PatchSet(patches=patches, offsets=offsets, source=source)


@dataclass
class Sample:
    name: str
    clean: np.ndarray
    noisy: np.ndarray = None


def load_dataset(root):
    """Load ``<root>/clean/*.pgm`` paired by filename with ``<root>/noisy/*.pgm``."""
    root = Path(root)
    clean_dir = root / "clean"
    if not clean_dir.is_dir():
        raise DatasetError(f"{clean_dir} does not exist")
    files = sorted(clean_dir.glob("*.pgm"))
    if not files:
        raise DatasetError(f"no .pgm images in {clean_dir}")
    samples = []
    for f in files:
        noisy_path = root / "noisy" / f.name
        noisy = read_image(noisy_path) if noisy_path.exists() else None
        samples.append(Sample(f.stem, read_image(f), noisy))
    return samples


def make_phantom(size, rng):
    """Random piecewise-smooth test image: shapes over a textured background."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    a, b = rng.uniform(-0.3, 0.3, size=2)
    img = 0.45 + a * (xx - 0.5) + b * (yy - 0.5)
    # low-amplitude oriented texture
    for _ in range(rng.integers(1, 3)):
        freq = rng.uniform(2.0, 8.0)
        theta = rng.uniform(0, np.pi)
        amp = rng.uniform(0.03, 0.08)
        img += amp * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)))
    for _ in range(rng.integers(3, 8)):
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        level = rng.uniform(0.1, 0.9)
        if rng.random() < 0.5:
            ry, rx = rng.uniform(0.05, 0.25, size=2)
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            hy, hx = rng.uniform(0.04, 0.2, size=2)
            mask = (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
        img = np.where(mask, level, img)
    return np.clip(img, 0.0, 1.0)


def make_phantom_dataset(root, count=24, size=128, seed=0, format="pgm16"):
    """Write ``count`` phantoms to ``<root>/clean/phantom_XXX.pgm``."""
    clean = Path(root) / "clean"
    clean.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        p = clean / f"phantom_{i:03d}.pgm"
        write_image(make_phantom(size, rng), p, format=format)
        paths.append(p)
    return paths


"""Metrics, classical baselines, paired t-tests, ablation tables and diagnostics."""

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage, stats

from .degrade import NoiseSpec, degrade
from .errors import DatasetError, DimensionError, ParameterError
from .imagedata import write_image
from .objective import LossWeightsConfig, PerceptualExtractor, lambda_weights, ssim as _ssim_t
from .validation import check_image, check_same_shape

logger = logging.getLogger(__name__)

PSNR_IDENTICAL = math.inf


def _mse(a, b):
    a = check_image(a, min_size=1)
    b = check_image(b, min_size=1)
    check_same_shape(a, b, ("xhat", "x"))
    return float(np.mean((a - b) ** 2))


def psnr(xhat, x):
    """PSNR in dB for peak 1.0; ``inf`` for identical images."""
    mse = _mse(xhat, x)
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(1.0 / mse)


def rmse(xhat, x):
    return math.sqrt(_mse(xhat, x))


def ssim(xhat, x):
    """Mean SSIM (11x11 Gaussian window, sigma 1.5), same kernel as the SSIM loss."""
    a = check_image(xhat, min_size=1)
    b = check_image(x, min_size=1)
    check_same_shape(a, b, ("xhat", "x"))
    return float(_ssim_t(torch.as_tensor(a), torch.as_tensor(b)))


_PROXY = {}


def perceptual_distance(xhat, x, seed=0):
    """Feature distance through the frozen random extractor (labelled ``perc_proxy``)."""
    if seed not in _PROXY:
        _PROXY[seed] = PerceptualExtractor(seed).double()
    ext = _PROXY[seed]
    a = torch.as_tensor(check_image(xhat, min_size=1))[None, None]
    b = torch.as_tensor(check_image(x, min_size=1))[None, None]
    with torch.no_grad():
        return float(((ext(a) - ext(b)) ** 2).mean())


def gaussian_kernel1d(sigma):
    radius = max(1, int(math.ceil(4.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t**2) / (2.0 * sigma**2))
    return k / k.sum()


def baseline_denoise(img, method, sigma=1.2, k=3):
    """Classical baselines: separable ``gaussian_blur`` or ``k x k`` ``median``."""
    x = check_image(img, min_size=1)
    if method == "gaussian_blur":
        if sigma <= 0:
            raise ParameterError(f"blur sigma must be positive, got {sigma}")
        kern = gaussian_kernel1d(sigma)
        out = ndimage.convolve1d(x, kern, axis=0, mode="mirror")
        return ndimage.convolve1d(out, kern, axis=1, mode="mirror")
    if method == "median":
        if k < 1 or k % 2 == 0:
            raise ParameterError(f"median size must be odd and positive, got {k}")
        return ndimage.median_filter(x, size=k, mode="mirror")
    raise ParameterError(f"unknown baseline {method!r}")


@dataclass
class TTestResult:
    n: int
    mean_diff: float
    t: float
    df: int
    p: float

    def to_dict(self):
        return asdict(self)


def paired_t_test(a, b):
    """Two-sided paired t-test on ``a - b``.

    Zero spread: ``t = 0, p = 1`` when every difference is zero, otherwise
    ``t = +/-inf, p = 0``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"paired samples must be equal-length vectors, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ParameterError(f"paired t-test needs n >= 2, got {n}")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(n, 0.0, 0.0, df, 1.0)
        return TTestResult(n, mean, math.copysign(math.inf, mean), df, 0.0)
    t = mean / (sd / math.sqrt(n))
    p = float(2.0 * stats.t.sf(abs(t), df))
    return TTestResult(n, mean, t, df, min(1.0, p))


# --- report structures --------------------------------------------------


@dataclass
class MetricsReport:
    method: str
    noise: dict
    seed: int
    per_image: list = field(default_factory=list)  # dicts: psnr, ssim, rmse, perc_proxy, batch
    batches: list = field(default_factory=list)  # per-batch means
    aggregate: dict = field(default_factory=dict)

    METRICS = ("psnr", "ssim", "rmse", "perc_proxy")

    def finalize(self):
        for m in self.METRICS:
            self.aggregate[m] = float(np.mean([r[m] for r in self.per_image]))
        n_batches = max(r["batch"] for r in self.per_image) + 1
        self.batches = []
        for bi in range(n_batches):
            rows = [r for r in self.per_image if r["batch"] == bi]
            self.batches.append({m: float(np.mean([r[m] for r in rows])) for m in self.METRICS})
        return self

    def all_finite(self):
        return all(math.isfinite(v) for v in self.aggregate.values())

    def to_dict(self):
        return asdict(self)


def image_metrics(out, clean):
    return {
        "psnr": psnr(out, clean),
        "ssim": ssim(out, clean),
        "rmse": rmse(out, clean),
        "perc_proxy": perceptual_distance(out, clean),
    }


def _run_method(method, noisy, model):
    if method == "mind":
        with torch.no_grad():
            return model(noisy).denoised.numpy()[0, 0]
    if method == "identity":
        return noisy
    if method.startswith("gaussian_blur"):
        _, _, s = method.partition(":")
        return baseline_denoise(noisy, "gaussian_blur", sigma=float(s or 1.2))
    if method.startswith("median"):
        _, _, k = method.partition(":")
        return baseline_denoise(noisy, "median", k=int(k or 3))
    raise ParameterError(f"unknown method {method!r}")


def split_batches(n_items, n_batches, seed):
    """Disjoint seeded subsets covering ``range(n_items)``."""
    if n_items < n_batches:
        raise DatasetError(f"{n_items} evaluation images cannot fill {n_batches} batches")
    order = np.random.default_rng(seed).permutation(n_items)
    return [sorted(b.tolist()) for b in np.array_split(order, n_batches)]


def evaluate_run(images, model, noise_specs, methods=("mind", "gaussian_blur", "median"), batches=8, seed=0, extra_tests=("psnr", "ssim")):
    """Score every method on every noise spec; returns ``(reports, ttests)``.

    ``images`` are clean test images; each gets its own noise seed
    (``spec.seed + index``).  ``ttests`` maps ``"<spec index>/<metric>/<a> vs <b>"``
    to a :class:`TTestResult` on per-batch means.
    """
    if len(images) == 0:
        raise DatasetError("no evaluation images")
    if batches < 2:
        raise ParameterError("need at least 2 batches for paired t-tests")
    if "mind" in methods and model is None:
        raise ParameterError("method 'mind' requires a model")
    groups = split_batches(len(images), batches, seed)
    batch_of = {i: bi for bi, g in enumerate(groups) for i in g}
    reports = []
    ttests = {}
    for si, spec in enumerate(noise_specs):
        noisy = [
            degrade(x, NoiseSpec(spec.kind, spec.level, spec.angle, spec.seed + i, spec.spatial_profile))
            for i, x in enumerate(images)
        ]
        by_method = {}
        for method in methods:
            rep = MetricsReport(method=method, noise=spec.to_dict(), seed=seed)
            for i, (x, y) in enumerate(zip(images, noisy)):
                row = image_metrics(_run_method(method, y, model), x)
                row["batch"] = batch_of[i]
                rep.per_image.append(row)
            reports.append(rep.finalize())
            by_method[method] = rep
        for ia, ma in enumerate(methods):
            for mb in methods[ia + 1 :]:
                for metric in extra_tests:
                    a = [b[metric] for b in by_method[ma].batches]
                    b = [b[metric] for b in by_method[mb].batches]
                    ttests[f"{si}/{metric}/{ma} vs {mb}"] = paired_t_test(a, b)
    return reports, ttests


def report_json(reports, ttests):
    doc = {
        "reports": [r.to_dict() for r in reports],
        "ttests": {k: v.to_dict() for k, v in ttests.items()},
    }
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


# --- diagnostics --------------------------------------------------------

CURVE_HEADER = ("sigma", "lambda_mse", "lambda_ssim", "lambda_edge", "lambda_perc", "lambda_adv")


def emit_lambda_curve(cfg=None, start=0.0, stop=30.0, step=1.0, path=None):
    """CSV of lambda_i(sigma) for sigma in [start, stop] (percent units)."""
    cfg = cfg or LossWeightsConfig()
    if step <= 0 or stop < start:
        raise ParameterError("empty sigma range")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for i in range(count):
        s = start + i * step
        w.writerow([repr(float(s)), *(repr(v) for v in lambda_weights(s, cfg))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def emit_attention_maps(model, img, outdir):
    """Write ``spatial.pfm``, ``alpha.pfm`` (1 x C row) and ``sigma.pfm``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        out = model(check_image(img))
    diag = out.diagnostics
    c = model.config.base_channels
    spatial = diag["spatial"][0, 0].numpy() if "spatial" in diag else np.ones_like(img)
    alpha = diag["alpha"][0].numpy()[None] if "alpha" in diag else np.ones((1, c))
    sigma = out.sigma[0, 0].numpy()
    paths = {}
    for name, arr in (("spatial", spatial), ("alpha", alpha), ("sigma", sigma)):
        p = outdir / f"{name}.pfm"
        write_image(arr, p, format="pfm")
        paths[name] = p
    return paths


# --- ablation -----------------------------------------------------------

ABLATIONS = (
    ("full", {}),
    ("no_naab", {"use_naab": False}),
    ("no_nle", {"use_nle": False}),
    ("no_multiscale", {"use_multiscale": False}),
    ("no_crossmodal", {"use_crossmodal": False}),
)
STRESS_LEVELS = (0.05, 0.25)


def ablation_rows(models, images, base_spec, batches=8, seed=0):
    """Seven rows: five flag configurations at ``base_spec`` plus two stress levels.

    ``models`` maps configuration name -> trained model.
    """
    rows = []

    def row(name, model, spec):
        rep = evaluate_run(images, model, [spec], methods=("mind",), batches=batches, seed=seed)[0][0]
        agg = rep.aggregate
        return {"config": name, "noise": spec.to_dict(), "psnr": agg["psnr"], "ssim": agg["ssim"], "perc_proxy": agg["perc_proxy"]}

    for name, _ in ABLATIONS:
        rows.append(row(name, models[name], base_spec))
    for level in STRESS_LEVELS:
        spec = NoiseSpec("gaussian", level, seed=base_spec.seed)
        rows.append(row(f"stress_sigma_{level:.2f}", models["full"], spec))
    return rows


def ablation_table_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["config", "noise", "level", "psnr", "ssim", "perc_proxy"])
    for r in rows:
        w.writerow([r["config"], r["noise"]["kind"], r["noise"]["level"], f"{r['psnr']:.4f}", f"{r['ssim']:.5f}", f"{r['perc_proxy']:.6f}"])
    return buf.getvalue()

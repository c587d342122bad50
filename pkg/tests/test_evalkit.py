import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mind.degrade import NoiseSpec
from mind.errors import DatasetError, DimensionError, ParameterError
from mind.evalkit import (
    CURVE_HEADER,
    ablation_rows,
    ablation_table_csv,
    baseline_denoise,
    emit_attention_maps,
    emit_lambda_curve,
    evaluate_run,
    gaussian_kernel1d,
    paired_t_test,
    psnr,
    report_json,
    rmse,
    split_batches,
    ssim,
)
from mind.imagedata import read_image, read_raw_pfm


def _t_df2_pvalue(t):
    # closed-form Student t CDF for two degrees of freedom
    return 2 * (1 - 0.5 * (1 + t / math.sqrt(t * t + 2)))


def test_psnr_values():
    x = np.random.default_rng(0).random((16, 16)) * 0.8
    assert psnr(x, x) == math.inf
    assert psnr(x + 0.1, x) == pytest.approx(20.0, abs=1e-9)
    y = np.random.default_rng(1).random((16, 16))
    assert psnr(x, y) == psnr(y, x)


def test_rmse_and_ssim_basics():
    x = np.random.default_rng(0).random((16, 16)) * 0.8
    assert rmse(x, x) == 0.0 and ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    assert rmse(x + 0.1, x) == pytest.approx(0.1, abs=1e-12)
    y = np.random.default_rng(1).random((16, 16))
    assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-12)


def test_ssim_constant_pair():
    assert abs(ssim(np.full((16, 16), 0.4), np.full((16, 16), 0.5)) - 0.97568) < 1e-4


def test_metric_shape_mismatch():
    with pytest.raises(DimensionError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_baselines():
    c = np.full((9, 9), 0.3)
    np.testing.assert_array_equal(baseline_denoise(c, "median", k=3), c)
    imp = np.zeros((9, 9))
    imp[4, 4] = 1.0
    np.testing.assert_array_equal(baseline_denoise(imp, "median", k=3), 0.0)
    for s in (0.8, 1.2, 1.6):
        assert abs(gaussian_kernel1d(s).sum() - 1) < 1e-9
    np.testing.assert_allclose(baseline_denoise(c, "gaussian_blur", sigma=1.2), c, atol=1e-15)
    with pytest.raises(ParameterError):
        baseline_denoise(c, "median", k=4)
    with pytest.raises(ParameterError):
        baseline_denoise(c, "wiener")


def test_t_test_closed_form():
    r = paired_t_test([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    assert r.df == 2 and r.n == 3
    assert r.t == pytest.approx(2 * math.sqrt(3), abs=1e-12)
    assert abs(r.p - _t_df2_pvalue(r.t)) < 1e-12
    assert abs(r.p - 0.0742) < 1e-4


def test_t_test_degenerate_cases():
    r = paired_t_test([1.0, 2.0], [1.0, 2.0])
    assert (r.t, r.p) == (0.0, 1.0)
    r = paired_t_test([2.0, 3.0, 4.0], [1.0, 2.0, 3.0])
    assert r.p == 0.0 and r.t == math.inf
    with pytest.raises(ParameterError):
        paired_t_test([1.0], [2.0])
    with pytest.raises(DimensionError):
        paired_t_test([1.0, 2.0], [1.0, 2.0, 3.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=20), st.integers(0, 2**31))
def test_t_test_matches_scipy(a, seed):
    b = np.random.default_rng(seed).normal(size=len(a))
    r = paired_t_test(a, b)
    assert 0.0 <= r.p <= 1.0
    d = np.asarray(a) - b
    if np.std(d) > 1e-6:
        ref = stats.ttest_rel(a, b)
        assert r.p == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-12)


def test_false_positive_rate():
    rng = np.random.default_rng(2024)
    hits = sum(paired_t_test(rng.normal(size=8), rng.normal(size=8)).p < 0.05 for _ in range(1000))
    assert 0.03 <= hits / 1000 <= 0.07


@pytest.mark.parametrize("seed", range(5))
def test_psnr_falls_with_noise(seed):
    from mind.degrade import degrade
    from mind.imagedata import make_phantom

    x = make_phantom(64, np.random.default_rng(seed))
    vals = [psnr(degrade(x, NoiseSpec("gaussian", s, seed=seed)), x) for s in (0.05, 0.10, 0.25)]
    assert vals[0] > vals[1] > vals[2]


def test_split_batches():
    groups = split_batches(20, 8, seed=3)
    assert len(groups) == 8 and sorted(sum(groups, [])) == list(range(20))
    assert split_batches(20, 8, seed=3) == groups
    with pytest.raises(DatasetError):
        split_batches(5, 8, seed=0)


@pytest.fixture(scope="module")
def untrained():
    from mind.estimator import MindDenoiser

    return MindDenoiser.untrained(base_channels=8, embed_dim=16, transformer_layers=1).model_


@pytest.fixture(scope="module")
def small_set():
    from mind.imagedata import make_phantom

    rng = np.random.default_rng(0)
    return [make_phantom(32, rng) for _ in range(16)]


def test_evaluate_run_structure(untrained, small_set):
    specs = [NoiseSpec("gaussian", 0.1, seed=1), NoiseSpec("poisson", 50.0, seed=2)]
    methods = ("mind", "identity", "gaussian_blur:1.2", "median:3")
    reports, tests = evaluate_run(small_set, untrained, specs, methods, batches=4, seed=0)
    assert len(reports) == len(methods) * len(specs)
    for rep in reports:
        assert len(rep.per_image) == 16 and len(rep.batches) == 4
        for m in rep.METRICS:
            assert abs(rep.aggregate[m] - np.mean([r[m] for r in rep.per_image])) < 1e-9
    # untrained model is the identity, so it ties with the identity method exactly
    by = {(r.method, r.noise["kind"]): r for r in reports}
    assert by["mind", "gaussian"].aggregate == by["identity", "gaussian"].aggregate
    assert tests["0/psnr/mind vs identity"].p == 1.0
    assert report_json(reports, tests).endswith("\n")


def test_self_comparison_has_p_one(small_set):
    reports, tests = evaluate_run(small_set, None, [NoiseSpec("gaussian", 0.1)], ("identity", "identity"), batches=4)
    assert all(t.p == 1.0 for t in tests.values())


def test_lambda_curve():
    text = emit_lambda_curve()
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == CURVE_HEADER and len(rows) == 32
    vals = np.array(rows[1:], dtype=float)
    assert tuple(vals[0, 1:]) == (1.0, 0.8, 0.6, 0.4, 0.1)
    assert abs(vals[10, 1] - math.exp(-1.5)) < 1e-9
    assert np.all(np.diff(vals[:, 1:], axis=0) < 0)


def test_attention_maps(untrained, tmp_path):
    img = np.random.default_rng(0).random((32, 32))
    paths = emit_attention_maps(untrained, img, tmp_path)
    np.testing.assert_array_equal(read_image(paths["spatial"]), 0.5)
    assert read_raw_pfm(paths["alpha"]).shape == (1, 8)
    assert read_raw_pfm(paths["sigma"]).shape == (32, 32)


def test_ablation_table(untrained, small_set):
    names = ("full", "no_naab", "no_nle", "no_multiscale", "no_crossmodal")
    rows = ablation_rows({n: untrained for n in names}, small_set, NoiseSpec("gaussian", 0.1, seed=3), batches=2)
    assert [r["config"] for r in rows] == [*names, "stress_sigma_0.05", "stress_sigma_0.25"]
    table = ablation_table_csv(rows)
    assert table.splitlines()[0] == "config,noise,level,psnr,ssim,perc_proxy"
    assert len(table.splitlines()) == 8

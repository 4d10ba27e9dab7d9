import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from demul.metrics import (
    SNR_CAP_DB,
    MetricError,
    MetricReport,
    evaluate,
    mse,
    pcorr,
    pcorr_with_lag,
    snr_db,
    ssim,
)


def mse_loop_reference(a, b):
    acc = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        acc += (float(x) - float(y)) ** 2
    return acc / a.size


class TestMse:
    def test_identical(self):
        a = np.random.default_rng(0).standard_normal((16, 16))
        assert mse(a, a) == 0.0

    def test_small_example(self):
        assert mse(np.array([0.0, 0.0]), np.array([1.0, 3.0])) == 5.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((8, 9)), rng.standard_normal((8, 9))
        assert abs(mse(a, b) - mse_loop_reference(a, b)) <= 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(MetricError):
            mse(np.zeros((2, 2)), np.zeros((2, 3)))


class TestSnr:
    def test_identical_hits_cap(self):
        a = np.random.default_rng(0).standard_normal((8, 8))
        assert snr_db(a, a) == SNR_CAP_DB

    def test_zero_estimate_is_zero_db(self):
        a = np.random.default_rng(1).standard_normal((8, 8))
        assert abs(snr_db(a, np.zeros_like(a))) < 1e-12

    def test_additive_noise_matches_direct_formula(self):
        rng = np.random.default_rng(2)
        ref = rng.standard_normal((32, 32))
        noise = rng.standard_normal((32, 32))
        eps = 1e-3
        got = snr_db(ref, ref + eps * noise)
        want = 10 * np.log10((ref**2).sum() / ((eps * noise) ** 2).sum())
        assert abs(got - want) <= 1e-9

    def test_zero_reference_rejected(self):
        with pytest.raises(MetricError):
            snr_db(np.zeros((4, 4)), np.ones((4, 4)))

    @given(st.floats(0.1, 100.0))
    @settings(max_examples=25, deadline=None)
    def test_joint_scaling_invariance(self, c):
        rng = np.random.default_rng(3)
        ref, est = rng.standard_normal((12, 12)), rng.standard_normal((12, 12))
        assert abs(snr_db(ref, est) - snr_db(c * ref, c * est)) < 1e-9


class TestSsim:
    def test_identical_is_one(self):
        a = np.random.default_rng(0).standard_normal((32, 32))
        assert ssim(a, a) == 1.0

    def test_negated_is_negative(self):
        # band-limited zero-local-mean wiggles: the anti-correlated structure
        # term controls the sign (noise with large local means would not)
        i = np.arange(32)
        a = np.cos(np.pi * i)[None, :] * (0.5 + 0.02 * np.cos(0.2 * i))[:, None]
        assert ssim(a, -a) < 0.0

    def test_constant_shift_matches_luminance_closed_form(self):
        c, delta, L = 0.3, 0.2, 2.0
        a = np.full((24, 24), c)
        b = np.full((24, 24), c + delta)
        c1 = (0.01 * L) ** 2
        want = (2 * c * (c + delta) + c1) / (c * c + (c + delta) ** 2 + c1)
        assert abs(ssim(a, b) - want) <= 1e-9

    def test_too_small_image(self):
        with pytest.raises(MetricError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((20, 20)), rng.standard_normal((20, 20))
        assert ssim(a, b) == ssim(b, a)
        assert -1.0 <= ssim(a, b) <= 1.0


class TestPcorr:
    def test_identical_is_one_at_zero_lag(self):
        a = np.random.default_rng(0).standard_normal((64, 256))
        val, lag = pcorr_with_lag(a, a)
        assert lag == (0, 0)
        assert abs(val - 1.0) <= 1e-12

    def test_locates_constructed_shift(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((64, 256))
        b = np.zeros_like(a)
        b[:, 3:] = a[:, :-3]  # b delayed by 3 samples along time
        val, lag = pcorr_with_lag(a, b)
        assert lag == (0, 3)
        assert val >= 1.0 - 0.02

    def test_independent_noise_is_small(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((64, 256))
        b = rng.standard_normal((64, 256))
        assert abs(pcorr(a, b)) < 0.2

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        a, b = rng.standard_normal((32, 32)), rng.standard_normal((32, 32))
        assert abs(pcorr(a, b) - pcorr(2.5 * a, b)) < 1e-12
        assert abs(pcorr(a, b) - pcorr(a, 7.0 * b)) < 1e-12

    def test_constant_rejected(self):
        with pytest.raises(MetricError):
            pcorr(np.ones((16, 16)), np.random.default_rng(0).standard_normal((16, 16)))


@given(arrays(np.float64, (16, 16), elements=st.floats(-1, 1)),
       arrays(np.float64, (16, 16), elements=st.floats(-1, 1)))
@settings(max_examples=30, deadline=None)
def test_mse_symmetry(a, b):
    assert mse(a, b) == mse(b, a)


def test_evaluate_and_report():
    rng = np.random.default_rng(4)
    samples = []
    for _ in range(5):
        ref = rng.standard_normal((32, 32))
        est = ref + 0.1 * rng.standard_normal((32, 32))
        samples.append(evaluate(ref, est))
    report = MetricReport.from_samples(samples)
    assert report.n == 5
    for name in ("mse", "snr_db", "ssim", "pcorr"):
        m, s = report.row(name)
        assert np.isfinite(m) and s >= 0.0
    assert -1.0 <= report.mean["ssim"] <= 1.0
    assert -1.0 <= report.mean["pcorr"] <= 1.0

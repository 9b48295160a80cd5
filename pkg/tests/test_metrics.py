import numpy as np
import pytest

from taylorcast.metrics import (
    MetricReport,
    gaussian_window,
    mae,
    mean_ssim_over_clips,
    mse,
    psnr,
    sequence_report,
    ssim,
)


def test_mse_trivia():
    a = np.zeros((1, 8, 8))
    assert mse(a, a) == 0.0
    assert mse(a, np.ones_like(a)) == 1.0


def test_mse_matches_loop_oracle():
    rng = np.random.default_rng(0)
    a = rng.uniform(size=(2, 6, 6))
    b = rng.uniform(size=(2, 6, 6))
    acc = 0.0
    for c in range(2):
        for i in range(6):
            for j in range(6):
                acc += (a[c, i, j] - b[c, i, j]) ** 2
    assert abs(mse(a, b) - acc / a.size) < 1e-12


def test_mae_trivia():
    a = np.zeros((8, 8))
    assert mae(a, a) == 0.0
    assert mae(a, np.ones_like(a)) == 1.0


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        mse(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        ssim(np.zeros((12, 12)), np.zeros((13, 13)))


def test_psnr_identical_is_capped_at_100():
    a = np.full((16, 16), 0.25)
    assert psnr(a, a) == 100.0


def test_psnr_known_value():
    a = np.zeros((16, 16))
    b = np.full((16, 16), 0.5)
    # mse = 0.25, psnr = 10*log10(1/0.25) = 6.0206 dB
    assert psnr(a, b) == pytest.approx(6.020599913, abs=1e-6)


def test_gaussian_window_normalized():
    w = gaussian_window(11, 1.5)
    assert w.shape == (11, 11)
    assert abs(w.sum() - 1.0) < 1e-12
    assert w[5, 5] == w.max()


def test_ssim_self_is_exactly_one():
    rng = np.random.default_rng(5)
    x = rng.uniform(size=(1, 16, 16))
    assert ssim(x, x) == 1.0


def test_ssim_symmetric():
    rng = np.random.default_rng(6)
    a = rng.uniform(size=(16, 16))
    b = rng.uniform(size=(16, 16))
    assert ssim(a, b) == ssim(b, a)


def test_ssim_constant_offset_matches_luminance_oracle():
    # constant images: variance terms vanish, leaving the luminance ratio
    mu_a, mu_b, c1 = 0.25, 0.75, (0.01 * 1.0) ** 2
    a = np.full((16, 16), mu_a)
    b = np.full((16, 16), mu_b)
    expected = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    assert ssim(a, b) == pytest.approx(expected, abs=1e-9)


def test_ssim_range_in_minus_one_one_and_scale_awareness():
    rng = np.random.default_rng(7)
    a = rng.uniform(size=(20, 20))
    b = rng.uniform(size=(20, 20))
    v = ssim(a, b)
    assert -1.0 <= v <= 1.0
    scaled = ssim(a * 255.0, b * 255.0, data_range=255.0)
    assert scaled == pytest.approx(v, abs=1e-9)


def test_window_larger_than_frame_rejected():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)), window_size=11)


def test_mae_bounded_by_sqrt_mse():
    rng = np.random.default_rng(8)
    for _ in range(20):
        a = rng.uniform(size=(5, 5))
        b = rng.uniform(size=(5, 5))
        assert mae(a, b) <= np.sqrt(mse(a, b)) + 1e-12


def test_mse_mae_permutation_invariant():
    rng = np.random.default_rng(9)
    a = rng.uniform(size=36)
    b = rng.uniform(size=36)
    perm = rng.permutation(36)
    assert mse(a.reshape(6, 6), b.reshape(6, 6)) == pytest.approx(
        mse(a[perm].reshape(6, 6), b[perm].reshape(6, 6)), abs=1e-15
    )
    assert mae(a.reshape(6, 6), b.reshape(6, 6)) == pytest.approx(
        mae(a[perm].reshape(6, 6), b[perm].reshape(6, 6)), abs=1e-15
    )


def test_report_means_are_arithmetic_means():
    rng = np.random.default_rng(10)
    preds = rng.uniform(size=(4, 1, 16, 16))
    targets = rng.uniform(size=(4, 1, 16, 16))
    report = sequence_report(preds, targets)
    assert len(report.mse) == 4
    assert report.mean_mse == pytest.approx(float(np.mean(report.mse)), abs=0)
    assert report.mean_ssim == pytest.approx(float(np.mean(report.ssim)), abs=0)
    assert all(-1.0 <= s <= 1.0 for s in report.ssim)
    assert all(v >= 0.0 for v in report.mse + report.mae)


def test_mean_ssim_over_clips_is_one_for_identical():
    rng = np.random.default_rng(11)
    batch = rng.uniform(size=(2, 3, 1, 16, 16))
    assert mean_ssim_over_clips(batch, batch.copy()) == 1.0

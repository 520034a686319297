import math

import numpy as np
import pytest

from dpsr.metrics import (EvalOptions, MetricReport, MetricRow, compare_pair,
                          crop_border, evaluate_dataset, load_image,
                          psnr, rgb_to_y, save_image, ssim)

# ---------------------------------------------------------------------------
# brute-force oracles, independent of the implementations under test


def psnr_oracle(a, b):
    se = 0.0
    n = 0
    for x, y in zip(a.ravel(), b.ravel()):
        se += (float(x) - float(y)) ** 2
        n += 1
    mse = se / n
    return math.inf if mse == 0 else 10 * math.log10(1 / mse)


def ssim_oracle(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03):
    coords = np.arange(window) - (window - 1) / 2
    g = np.exp(-coords**2 / (2 * sigma**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = k1**2, k2**2
    h, wd = a.shape
    vals = []
    for y in range(h - window + 1):
        for x in range(wd - window + 1):
            pa = a[y:y + window, x:x + window]
            pb = b[y:y + window, x:x + window]
            mu_a = (w * pa).sum()
            mu_b = (w * pb).sum()
            va = (w * pa * pa).sum() - mu_a**2
            vb = (w * pb * pb).sum() - mu_b**2
            cov = (w * pa * pb).sum() - mu_a * mu_b
            vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                        / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


class TestLuma:
    def test_black(self):
        assert rgb_to_y(np.zeros((2, 2, 3)))[0, 0] == pytest.approx(16 / 255)

    def test_white(self):
        assert rgb_to_y(np.ones((2, 2, 3)))[0, 0] == pytest.approx(235 / 255)

    def test_mid_gray(self):
        y = rgb_to_y(np.full((1, 1, 3), 0.5))
        assert y[0, 0] == pytest.approx((219 * 0.5 + 16) / 255)

    def test_range_subset(self, rng):
        y = rgb_to_y(rng.random((32, 32, 3)))
        assert y.min() >= 16 / 255 - 1e-12 and y.max() <= 235 / 255 + 1e-12

    def test_requires_rgb(self):
        with pytest.raises(ValueError):
            rgb_to_y(np.zeros((4, 4)))


class TestCropBorder:
    def test_sizes(self, rng):
        assert crop_border(rng.random((128, 128))).shape == (120, 120)
        assert crop_border(rng.random((100, 60, 3))).shape == (92, 52, 3)

    def test_too_small(self, rng):
        with pytest.raises(ValueError):
            crop_border(rng.random((8, 8)))


class TestPSNR:
    def test_identical_inf(self, rng):
        a = rng.random((16, 16))
        assert psnr(a, a.copy()) == math.inf

    def test_constant_pair(self):
        a = np.full((8, 8), 0.5)
        b = np.full((8, 8), 0.25)
        assert psnr(a, b) == pytest.approx(10 * math.log10(1 / 0.0625), abs=1e-9)

    def test_oracle_agreement(self, rng):
        for _ in range(50):
            a = rng.random((12, 12))
            b = rng.random((12, 12))
            assert psnr(a, b) == pytest.approx(psnr_oracle(a, b), abs=1e-9)

    def test_symmetry(self, rng):
        a, b = rng.random((16, 16)), rng.random((16, 16))
        assert psnr(a, b) == psnr(b, a)

    def test_monotone_under_noise_ladder(self, rng):
        base = rng.random((32, 32))
        noise = rng.standard_normal((32, 32))
        prev = math.inf
        for amp in (0.01, 0.02, 0.05, 0.1, 0.2):
            val = psnr(base, np.clip(base + amp * noise, 0, 1))
            assert val <= prev
            prev = val

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            psnr(rng.random((4, 4)), rng.random((5, 5)))


class TestSSIM:
    def test_identical_is_one(self, rng):
        a = rng.random((24, 24))
        assert ssim(a, a.copy()) == pytest.approx(1.0, abs=1e-12)

    def test_constant_closed_form(self):
        a = np.full((16, 16), 0.5)
        b = np.full((16, 16), 0.25)
        expected = (2 * 0.125 + 1e-4) / (0.3125 + 1e-4)  # luminance-only, zero variance
        assert ssim(a, b) == pytest.approx(expected, abs=1e-4)

    def test_oracle_agreement(self, rng):
        for _ in range(10):
            a = rng.random((16, 16))
            b = np.clip(a + 0.1 * rng.standard_normal((16, 16)), 0, 1)
            assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-6)

    def test_symmetry_and_bound(self, rng):
        a, b = rng.random((16, 16)), rng.random((16, 16))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
        assert ssim(a, b) <= 1.0

    def test_too_small(self, rng):
        with pytest.raises(ValueError):
            ssim(rng.random((8, 8)), rng.random((8, 8)))


class TestLpipsPlugin:
    def test_absent_plugin_reported_absent(self, rng):
        a = rng.random((32, 32, 3))
        _, _, lp = compare_pair(a, a.copy(), EvalOptions(lpips_plugin=None))
        assert lp is None

    def test_fake_plugin_used(self, rng):
        fake = lambda x, y: float(np.abs(x - y).mean())
        a = rng.random((32, 32, 3))
        b = rng.random((32, 32, 3))
        _, _, lp = compare_pair(a, b, EvalOptions(lpips_plugin=fake))
        assert lp == pytest.approx(float(np.abs(a - b).mean()))
        _, _, lp0 = compare_pair(a, a.copy(), EvalOptions(lpips_plugin=fake))
        assert lp0 == pytest.approx(0.0, abs=1e-6)

    def test_lpips_border_option(self, rng):
        calls = []
        fake = lambda x, y: calls.append(x.shape) or 0.0
        a = rng.random((32, 32, 3))
        compare_pair(a, a, EvalOptions(lpips_plugin=fake))
        compare_pair(a, a, EvalOptions(lpips_plugin=fake, lpips_border=4))
        assert calls == [(32, 32, 3), (24, 24, 3)]


class TestProtocol:
    def test_disabling_border_or_y_changes_values(self, rng):
        a = rng.random((40, 40, 3))
        b = np.clip(a + 0.05 * rng.standard_normal((40, 40, 3)), 0, 1)
        base = compare_pair(a, b, EvalOptions())
        no_border = compare_pair(a, b, EvalOptions(border=0))
        no_y = compare_pair(a, b, EvalOptions(y_channel=False))
        assert base[0] != no_border[0] and base[0] != no_y[0]
        assert base[1] != no_border[1] and base[1] != no_y[1]


class TestEvaluateDataset:
    def _write_pairs(self, tmp_path, rng, n=3):
        sr_dir = tmp_path / "sr"
        hr_dir = tmp_path / "hr"
        sr_dir.mkdir()
        hr_dir.mkdir()
        for i in range(n):
            hr = rng.random((40, 40, 3))
            sr = np.clip(hr + 0.02 * rng.standard_normal((40, 40, 3)), 0, 1)
            save_image(hr_dir / f"im{i}.png", hr)
            save_image(sr_dir / f"im{i}.png", sr)
        return sr_dir, hr_dir

    def test_report_structure(self, tmp_path, rng):
        sr_dir, hr_dir = self._write_pairs(tmp_path, rng)
        report = evaluate_dataset(sr_dir, hr_dir)
        assert len(report.rows) == 3
        assert report.metadata == {"border": 4, "y_channel": True, "scale": 4, "lpips": False}
        assert report.mean_psnr == pytest.approx(np.mean([r.psnr_db for r in report.rows]))
        assert [r.image for r in report.rows] == sorted(r.image for r in report.rows)

    def test_unmatched_files_listed(self, tmp_path, rng):
        sr_dir, hr_dir = self._write_pairs(tmp_path, rng)
        (sr_dir / "extra.png").write_bytes((hr_dir / "im0.png").read_bytes())
        with pytest.raises(ValueError, match="extra.png"):
            evaluate_dataset(sr_dir, hr_dir)

    def test_csv_roundtrip(self, tmp_path, rng):
        sr_dir, hr_dir = self._write_pairs(tmp_path, rng)
        report = evaluate_dataset(sr_dir, hr_dir)
        report.write_csv(tmp_path / "r.csv")
        back = MetricReport.read_csv(tmp_path / "r.csv")
        for a, b in zip(report.rows, back.rows):
            assert (a.image, a.psnr_db, a.ssim, a.lpips) == (b.image, b.psnr_db, b.ssim, b.lpips)


class TestImageIO:
    def test_roundtrip_quantization(self, tmp_path, rng):
        im = rng.random((16, 16, 3))
        save_image(tmp_path / "x.png", im)
        back = load_image(tmp_path / "x.png")
        assert np.abs(back - im).max() <= 0.5 / 255 + 1e-9

    def test_round_half_away_from_zero(self, tmp_path):
        im = np.full((4, 4, 3), 127.5 / 255)
        save_image(tmp_path / "y.png", im)
        back = load_image(tmp_path / "y.png")
        assert np.allclose(back, 128 / 255)

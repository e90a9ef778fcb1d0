import math

import numpy as np
import pytest

from blrf.errors import ContractError
from blrf.metrics import MetricReport, psnr, ssim


def naive_psnr(a, b):
    diff = (a - b).ravel()
    mse = float(np.dot(diff, diff)) / diff.size
    return math.inf if mse == 0 else -10.0 * math.log10(mse)


def naive_ssim(a, b, size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Straight sliding-window implementation with explicit loops."""
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    window = np.outer(g, g)
    window /= window.sum()
    c1, c2 = k1 ** 2, k2 ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        for i in range(a.shape[0] - size + 1):
            for j in range(a.shape[1] - size + 1):
                wx = x[i:i + size, j:j + size]
                wy = y[i:i + size, j:j + size]
                mx = (window * wx).sum()
                my = (window * wy).sum()
                vx = (window * wx * wx).sum() - mx * mx
                vy = (window * wy * wy).sum() - my * my
                vxy = (window * wx * wy).sum() - mx * my
                vals.append(((2 * mx * my + c1) * (2 * vxy + c2))
                            / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


class TestPsnr:
    def test_identical_images_sentinel(self, rng):
        a = rng.random((8, 8, 3))
        assert psnr(a, a) == math.inf

    def test_uniform_difference(self):
        a = np.zeros((4, 4, 3))
        b = np.full((4, 4, 3), 0.1)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)

    def test_matches_naive_reference(self, rng):
        a, b = rng.random((12, 9, 3)), rng.random((12, 9, 3))
        assert psnr(a, b) == pytest.approx(naive_psnr(a, b), abs=1e-10)

    def test_symmetry(self, rng):
        a, b = rng.random((6, 6, 3)), rng.random((6, 6, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_monotone_in_noise(self, rng):
        a = rng.random((16, 16, 3))
        vals = []
        for amp in (0.01, 0.05, 0.2):
            noisy = np.clip(a + amp * rng.standard_normal(a.shape), 0, 1)
            vals.append(psnr(a, noisy))
        assert vals[0] > vals[1] > vals[2]

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractError):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    def test_identical_is_one(self, rng):
        a = rng.random((16, 16, 3))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_constant_images_closed_form(self):
        a = np.zeros((12, 12, 3))
        b = np.ones((12, 12, 3))
        # zero variance: map collapses to C1/(1 + C1)
        want = 1e-4 / (1 + 1e-4)
        assert ssim(a, b) == pytest.approx(want, rel=1e-10)

    def test_matches_naive_sliding_window(self, rng):
        a, b = rng.random((14, 13, 3)), rng.random((14, 13, 3))
        assert ssim(a, b) == pytest.approx(naive_ssim(a, b), abs=1e-10)

    def test_symmetry(self, rng):
        a, b = rng.random((12, 12, 3)), rng.random((12, 12, 3))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-13)

    def test_upper_bound(self, rng):
        a = rng.random((16, 16, 3))
        noisy = np.clip(a + 0.05 * rng.standard_normal(a.shape), 0, 1)
        assert ssim(a, noisy) < 1.0

    def test_small_image_rejected(self):
        with pytest.raises(ContractError):
            ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


class TestReport:
    def test_means_are_arithmetic_averages(self):
        rep = MetricReport([0, 1, 2], [30.0, 32.0, 40.0], [0.9, 0.92, 0.95])
        assert rep.mean_psnr == pytest.approx(34.0)
        assert rep.mean_ssim == pytest.approx((0.9 + 0.92 + 0.95) / 3)

    def test_csv_round_trip(self, tmp_path):
        rep = MetricReport([3, 4], [25.5, math.inf], [0.8, 1.0])
        p = tmp_path / "metrics.csv"
        rep.write_csv(p)
        lines = p.read_text().strip().splitlines()
        assert lines[0] == "frame,psnr_db,ssim"
        assert lines[2].startswith("4,inf")
        assert lines[-1].startswith("mean,")
        # recompute the summary from the rows above
        import csv
        rows = list(csv.DictReader(lines[:-1]))
        ss = [float(r["ssim"]) for r in rows]
        mean_row = lines[-1].split(",")
        assert float(mean_row[2]) == pytest.approx(np.mean(ss), abs=1e-6)

    def test_table_contains_all_frames(self):
        rep = MetricReport([0, 7], [31.0, 29.0], [0.9, 0.8])
        table = rep.table()
        assert "mean" in table and " 7 " in table


@pytest.fixture
def rng():
    return np.random.default_rng(42)

"""Image quality metrics: PSNR and single-scale SSIM.

PSNR assumes float images in [0,1] and reports -10 log10(MSE), with +inf as
the sentinel for identical inputs.  SSIM uses an 11x11 Gaussian window
(sigma 1.5), K1 = 0.01, K2 = 0.03, L = 1, valid-mode windows, averaged over
channels and positions.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import correlate2d

from .errors import ContractError

_WINDOW_SIZE = 11
_WINDOW_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the images are identical."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b) -> float:
    """Mean structural similarity over channels and valid window positions."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if min(a.shape[0], a.shape[1]) < _WINDOW_SIZE:
        raise ContractError(
            f"images must be at least {_WINDOW_SIZE}x{_WINDOW_SIZE} for SSIM")
    window = _gaussian_window(_WINDOW_SIZE, _WINDOW_SIGMA)
    c1 = _K1 ** 2
    c2 = _K2 ** 2
    vals = []
    for ch in range(a.shape[2]):
        x = a[:, :, ch]
        y = b[:, :, ch]
        mu_x = correlate2d(x, window, mode="valid")
        mu_y = correlate2d(y, window, mode="valid")
        xx = correlate2d(x * x, window, mode="valid") - mu_x * mu_x
        yy = correlate2d(y * y, window, mode="valid") - mu_y * mu_y
        xy = correlate2d(x * y, window, mode="valid") - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
        vals.append(num / den)
    return float(np.mean(vals))


@dataclass
class MetricReport:
    frame_ids: list
    psnr_db: list
    ssim_vals: list

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_db))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_vals))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "psnr_db", "ssim"])
            for fid, p, s in zip(self.frame_ids, self.psnr_db, self.ssim_vals):
                writer.writerow([fid, f"{p:.6f}" if math.isfinite(p) else "inf",
                                 f"{s:.6f}"])
            writer.writerow(["mean", f"{self.mean_psnr:.6f}"
                             if math.isfinite(self.mean_psnr) else "inf",
                             f"{self.mean_ssim:.6f}"])

    def table(self) -> str:
        lines = [f"{'frame':>8} {'psnr_db':>10} {'ssim':>8}"]
        for fid, p, s in zip(self.frame_ids, self.psnr_db, self.ssim_vals):
            p_str = f"{p:10.3f}" if math.isfinite(p) else f"{'inf':>10}"
            lines.append(f"{fid:>8} {p_str} {s:8.4f}")
        mp = self.mean_psnr
        mp_str = f"{mp:10.3f}" if math.isfinite(mp) else f"{'inf':>10}"
        lines.append(f"{'mean':>8} {mp_str} {self.mean_ssim:8.4f}")
        return "\n".join(lines)


def compare_frames(renders, references) -> MetricReport:
    """Per-frame PSNR/SSIM for parallel lists of (frame_id, image) pairs."""
    ids, ps, ss = [], [], []
    for (fid, img), (_, ref) in zip(renders, references):
        ids.append(fid)
        ps.append(psnr(img, ref))
        ss.append(ssim(img, ref))
    return MetricReport(ids, ps, ss)

"""Matplotlib report figures written next to the delimited outputs."""

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_figure(log_csv_path, out_path):
    """Loss curves (log scale) and learning-rate schedule from a training log."""
    with open(log_csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return
    iters = np.array([int(r["iter"]) for r in rows])
    cols = {k: np.array([float(r[k]) for r in rows])
            for k in ("photometric", "tv_density", "tv_color", "total", "lr_tensor")}

    fig, (ax, ax_lr) = plt.subplots(2, 1, figsize=(7, 6), sharex=True,
                                    height_ratios=[3, 1])
    for key, style in (("total", "-"), ("photometric", "--"),
                       ("tv_density", ":"), ("tv_color", ":")):
        vals = cols[key]
        if np.any(vals > 0):
            ax.semilogy(iters, np.maximum(vals, 1e-12), style, label=key)
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    ax_lr.plot(iters, cols["lr_tensor"])
    ax_lr.set_xlabel("iteration")
    ax_lr.set_ylabel("lr (tensors)")
    ax_lr.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def save_metrics_figure(report, out_path):
    """Per-frame PSNR and SSIM bars for a MetricReport."""
    finite = [p for p in report.psnr_db if np.isfinite(p)]
    fig, (ax_p, ax_s) = plt.subplots(1, 2, figsize=(9, 3.5))
    x = np.arange(len(report.frame_ids))
    psnr_plot = [p if np.isfinite(p) else (max(finite) if finite else 0.0)
                 for p in report.psnr_db]
    ax_p.bar(x, psnr_plot, color="#4878cf")
    ax_p.set_xticks(x, [str(f) for f in report.frame_ids], fontsize=7)
    ax_p.set_xlabel("frame")
    ax_p.set_ylabel("PSNR (dB)")
    if np.isfinite(report.mean_psnr):
        ax_p.axhline(report.mean_psnr, color="k", ls="--", lw=1,
                     label=f"mean {report.mean_psnr:.2f}")
        ax_p.legend(fontsize=8)
    ax_s.bar(x, report.ssim_vals, color="#6acc65")
    ax_s.set_xticks(x, [str(f) for f in report.frame_ids], fontsize=7)
    ax_s.set_xlabel("frame")
    ax_s.set_ylabel("SSIM")
    ax_s.set_ylim(0.0, 1.02)
    ax_s.axhline(report.mean_ssim, color="k", ls="--", lw=1,
                 label=f"mean {report.mean_ssim:.4f}")
    ax_s.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)

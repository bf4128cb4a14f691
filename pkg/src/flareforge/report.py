"""Figure rendering for the CLI report paths.

Every reporting command writes its structured output (JSON) plus a PNG
figure next to it; these helpers own the figures. Rendering is headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def validation_figure(report, path) -> Path:
    """Bar chart of per-check pass/fail counts for a ValidationReport."""
    path = Path(path)
    checks = report.checks
    names = [c.name for c in checks]
    passed = [c.passed for c in checks]
    failed = [c.failed for c in checks]
    x = np.arange(len(names))

    fig, ax = plt.subplots(figsize=(7, 3.2))
    ax.bar(x - 0.18, passed, width=0.36, label="passed", color="#2a9d48")
    ax.bar(x + 0.18, failed, width=0.36, label="failed", color="#c23a3a")
    for i, c in enumerate(checks):
        if c.not_applicable:
            ax.text(i, 0.1, "n/a", ha="center", color="gray")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("entries")
    title = "validation: ok" if report.ok else "validation: FAILED"
    if report.missing_files:
        title += f" ({len(report.missing_files)} missing files)"
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def eval_figure(report, path) -> Path:
    """PSNR/SSIM histograms for an EvalReport."""
    path = Path(path)
    psnrs = [p.psnr for p in report.per_pair]
    ssims = [p.ssim for p in report.per_pair]
    refl = [p.reflective_psnr for p in report.per_pair
            if p.reflective_psnr is not None]

    fig, axes = plt.subplots(1, 3 if refl else 2, figsize=(10 if refl else 7, 3))
    axes[0].hist(psnrs, bins=min(20, max(5, len(psnrs))), color="#33658a")
    axes[0].set_title(f"PSNR (mean {np.mean(psnrs):.2f} dB)")
    axes[0].set_xlabel("dB")
    axes[1].hist(ssims, bins=min(20, max(5, len(ssims))), color="#558b6e")
    axes[1].set_title(f"SSIM (mean {np.mean(ssims):.4f})")
    if refl:
        axes[2].hist(refl, bins=min(20, max(5, len(refl))), color="#9b5d8f")
        axes[2].set_title(f"ghost-region PSNR (mean {np.mean(refl):.2f} dB)")
        axes[2].set_xlabel("dB")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def rejection_figure(result, path) -> Path:
    """Loss curve plus per-view ghost MSE before/after fitting."""
    path = Path(path)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.semilogy(result.loss_history, color="#33658a")
    ax1.set_title("fit loss")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("MSE")

    views = np.arange(len(result.injected_mse))
    ax2.bar(views - 0.2, result.injected_mse, width=0.4, label="injected",
            color="#c23a3a")
    ax2.bar(views + 0.2, result.refit_mse, width=0.4, label="after fit",
            color="#2a9d48")
    ax2.set_title(f"ghost-region MSE (ratio {result.mse_ratio:.3f}, "
                  f"bg {result.background_psnr:.1f} dB)")
    ax2.set_xlabel("view")
    ax2.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def view_montage(result, path, max_views: int = 4) -> Path:
    """Rows = clean / with ghosts / refit; columns = views."""
    path = Path(path)
    n = min(max_views, result.clean_views.shape[0])
    fig, axes = plt.subplots(3, n, figsize=(2.2 * n, 6.8))
    rows = [("clean", result.clean_views), ("ghosted", result.injected_views),
            ("refit", result.refit_views)]
    for r, (label, stack) in enumerate(rows):
        for c in range(n):
            ax = axes[r][c] if n > 1 else axes[r]
            ax.imshow(np.clip(stack[c], 0, 1))
            ax.set_xticks(())
            ax.set_yticks(())
            if c == 0:
                ax.set_ylabel(label)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def dataset_preview(manifest, path, max_pairs: int = 4) -> Path:
    """Input/GT strips of a dataset's first few pairs."""
    from .pipeline import load_png

    path = Path(path)
    entries = manifest.entries[:max_pairs]
    n = len(entries)
    fig, axes = plt.subplots(2, n, figsize=(2.2 * n, 4.6), squeeze=False)
    for c, entry in enumerate(entries):
        axes[0][c].imshow(load_png(manifest.root / entry["paths"]["input"]))
        axes[1][c].imshow(load_png(manifest.root / entry["paths"]["gt"]))
        for r in range(2):
            axes[r][c].set_xticks(())
            axes[r][c].set_yticks(())
    axes[0][0].set_ylabel("input")
    axes[1][0].set_ylabel("ground truth")
    fig.suptitle(manifest.variant.name)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

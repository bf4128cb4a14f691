"""Paired-image scoring: PSNR, SSIM, and ghost-region-masked variants.

Everything works in the 8-bit domain (peak 255); float inputs are taken
as already scaled to 0..255. The reflective-flare evaluation crops to the
bounding boxes of the ghost mask's connected components, so scattering
residue elsewhere cannot dilute the score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, signal

from .errors import ParameterError

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 255.0


def _as_float(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64)


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 for identical inputs.

    mask, when given, selects pixels (broadcast over channels).
    """
    a, b = _as_float(a), _as_float(b)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape[:mask.ndim]:
            raise ParameterError("mask shape incompatible with images")
        if not mask.any():
            raise ParameterError("empty mask")
        diff = diff[mask]
    mse = float(np.mean(diff**2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(255.0**2 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """SSIM over all fully-interior 11x11 windows of one channel."""
    win = _gaussian_window()
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2

    def filt(x):
        return signal.fftconvolve(x, win, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean structural similarity, 11x11 Gaussian windows (sigma 1.5).

    Multichannel images average the per-channel scores. mask selects the
    window centers to keep; it is cropped to the valid interior.
    """
    a, b = _as_float(a), _as_float(b)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ParameterError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    channels = [(a, b)] if a.ndim == 2 else [
        (a[..., c], b[..., c]) for c in range(a.shape[2])]

    crop = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        half = SSIM_WINDOW // 2
        crop = mask[half:-half, half:-half]
        if not crop.any():
            raise ParameterError("mask leaves no interior windows")

    scores = []
    for ca, cb in channels:
        m = _ssim_map(ca, cb)
        scores.append(float(np.mean(m[crop])) if crop is not None else float(np.mean(m)))
    return float(np.mean(scores))


@dataclass
class PairScores:
    """Scores for one restored image against its ground truth."""

    psnr: float
    ssim: float
    reflective_psnr: float | None = None
    reflective_ssim: float | None = None
    reflective_applicable: bool = False

    def to_dict(self) -> dict:
        return {
            "psnr": self.psnr,
            "ssim": self.ssim,
            "reflective_psnr": self.reflective_psnr,
            "reflective_ssim": self.reflective_ssim,
            "reflective_applicable": self.reflective_applicable,
        }


@dataclass
class EvalReport:
    """Per-pair scores plus mean/std aggregates."""

    per_pair: list

    def _agg(self, values):
        vals = [v for v in values if v is not None]
        if not vals:
            return {"mean": None, "std": None, "count": 0}
        return {"mean": float(np.mean(vals)), "std": float(np.std(vals)),
                "count": len(vals)}

    def to_dict(self) -> dict:
        return {
            "per_pair": [p.to_dict() for p in self.per_pair],
            "aggregate": {
                "psnr": self._agg(p.psnr for p in self.per_pair),
                "ssim": self._agg(p.ssim for p in self.per_pair),
                "reflective_psnr": self._agg(p.reflective_psnr for p in self.per_pair),
                "reflective_ssim": self._agg(p.reflective_ssim for p in self.per_pair),
            },
        }


def _ghost_boxes(ghost_mask: np.ndarray, min_side: int = SSIM_WINDOW):
    """Bounding boxes of the mask's connected components, grown to fit SSIM."""
    labels, count = ndimage.label(ghost_mask)
    h, w = ghost_mask.shape
    boxes = []
    for sl in ndimage.find_objects(labels):
        if sl is None:
            continue
        ys, xs = sl
        y0, y1, x0, x1 = ys.start, ys.stop, xs.start, xs.stop
        while y1 - y0 < min_side and (y0 > 0 or y1 < h):
            y0, y1 = max(y0 - 1, 0), min(y1 + 1, h)
        while x1 - x0 < min_side and (x0 > 0 or x1 < w):
            x0, x1 = max(x0 - 1, 0), min(x1 + 1, w)
        if y1 - y0 >= min_side and x1 - x0 >= min_side:
            boxes.append((slice(y0, y1), slice(x0, x1)))
    return boxes


def masked_reflective_eval(pair, restored: np.ndarray) -> PairScores:
    """Score a restoration, isolating the reflective-flare regions.

    pair is a DataPair (or anything with .gt and .masks["ghost"]). An
    empty ghost mask marks the reflective scores "not applicable" rather
    than failing.
    """
    gt = np.asarray(pair.gt)
    restored = np.asarray(restored)
    full_psnr = psnr(restored, gt)
    full_ssim = ssim(restored, gt)
    ghost_mask = np.asarray(pair.masks["ghost"], dtype=bool)
    boxes = _ghost_boxes(ghost_mask)
    if not ghost_mask.any() or not boxes:
        return PairScores(psnr=full_psnr, ssim=full_ssim)
    box_psnr = [psnr(restored[b], gt[b]) for b in boxes]
    box_ssim = [ssim(restored[b], gt[b]) for b in boxes]
    return PairScores(
        psnr=full_psnr,
        ssim=full_ssim,
        reflective_psnr=float(np.mean(box_psnr)),
        reflective_ssim=float(np.mean(box_ssim)),
        reflective_applicable=True,
    )

"""Evaluation metrics: PSNR, SSIM, segmentation IoU/accuracy, photometric loss.

All functions are pure and deterministic. Images are float arrays in
[0, 1]; label maps are integer arrays or LabelMap instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import ShapeError, SizeError
from .masks import LabelMap

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images, capped at 100."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def _to_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ np.asarray(LUMA_WEIGHTS)
    if img.ndim == 2:
        return img
    raise ShapeError(f"expected HxW or HxWx3 image, got shape {img.shape}")


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(a, b) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5).

    RGB inputs are converted to luminance first; the score is the mean
    over fully valid window positions.
    """
    a, b = _check_pair(a, b)
    x = _to_gray(a)
    y = _to_gray(b)
    if min(x.shape) < SSIM_WINDOW:
        raise SizeError(
            f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)

    def filt(img):
        return signal.correlate2d(img, win, mode="valid")

    mu_x = filt(x)
    mu_y = filt(y)
    var_x = filt(x * x) - mu_x ** 2
    var_y = filt(y * y) - mu_y ** 2
    cov = filt(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


def rgb_loss(rendered, reference, lambda_dssim: float = 0.2) -> float:
    """Photometric loss: (1 - lambda) L1 + lambda (1 - SSIM) / 2.

    Reported for monitoring only; nothing in this pipeline optimizes it.
    """
    a, b = _check_pair(rendered, reference)
    l1 = float(np.mean(np.abs(a - b)))
    return (1.0 - lambda_dssim) * l1 + lambda_dssim * 0.5 * (1.0 - ssim(a, b))


@dataclass
class SegReport:
    """Per-class IoU/accuracy and their means over ground-truth classes."""

    per_class_iou: dict[int, float]
    per_class_acc: dict[int, float]
    miou: float
    macc: float
    counts: dict[int, dict[str, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "macc": self.macc,
            "per_class_iou": {str(k): v for k, v in self.per_class_iou.items()},
            "per_class_acc": {str(k): v for k, v in self.per_class_acc.items()},
            "counts": {str(k): v for k, v in self.counts.items()},
        }


def miou_macc(pred, gt, present_labels_only: bool = True) -> SegReport:
    """Mean IoU and mean per-class accuracy for a predicted label map.

    Classes are the labels present in the ground truth; with
    ``present_labels_only`` disabled, labels present only in the
    prediction are scored too (their IoU and accuracy are 0).
    """
    pred_arr = pred.labels if isinstance(pred, LabelMap) else np.asarray(pred)
    gt_arr = gt.labels if isinstance(gt, LabelMap) else np.asarray(gt)
    if pred_arr.shape != gt_arr.shape:
        raise ShapeError(f"prediction shape {pred_arr.shape} != ground truth {gt_arr.shape}")
    pred_flat = pred_arr.reshape(-1).astype(np.int64)
    gt_flat = gt_arr.reshape(-1).astype(np.int64)

    labels = np.unique(gt_flat)
    if not present_labels_only:
        labels = np.union1d(labels, np.unique(pred_flat))

    iou: dict[int, float] = {}
    acc: dict[int, float] = {}
    counts: dict[int, dict[str, int]] = {}
    for lab in labels.tolist():
        p = pred_flat == lab
        g = gt_flat == lab
        inter = int(np.count_nonzero(p & g))
        union = int(np.count_nonzero(p | g))
        n_gt = int(np.count_nonzero(g))
        n_pred = int(np.count_nonzero(p))
        iou[lab] = inter / union if union else 0.0
        acc[lab] = inter / n_gt if n_gt else 0.0
        counts[lab] = {"intersection": inter, "union": union, "gt": n_gt, "pred": n_pred}

    values_iou = list(iou.values())
    values_acc = list(acc.values())
    return SegReport(
        per_class_iou=iou,
        per_class_acc=acc,
        miou=float(np.mean(values_iou)) if values_iou else 0.0,
        macc=float(np.mean(values_acc)) if values_acc else 0.0,
        counts=counts,
    )

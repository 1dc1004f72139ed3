"""Image quality metrics and style-based reference pairing."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import InsufficientDatasetError, ShapeMismatchError, TooSmallError
from .image import ImageBuffer, luminance, rgb_to_lab
from .scoring import PromptSet, kl_selection_score, prompt_distribution

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    delta_e: float

    def as_dict(self) -> dict:
        return {"psnr": self.psnr, "ssim": self.ssim, "delta_e": self.delta_e}


def _check_shapes(a: ImageBuffer, b: ImageBuffer) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"image shapes differ: {a.data.shape} vs {b.data.shape}")


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """10*log10(1/MSE) over all channel values; identical images report the cap."""
    _check_shapes(a, b)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def _ssim_window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * SSIM_SIGMA**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    """Single-scale SSIM on luminance, averaged over valid window positions."""
    _check_shapes(a, b)
    if min(a.height, a.width) < SSIM_WINDOW:
        raise TooSmallError(f"SSIM needs at least {SSIM_WINDOW} pixels per side")
    x = luminance(a).astype(np.float64)
    y = luminance(b).astype(np.float64)
    window = _ssim_window()

    mu_x = convolve2d(x, window, mode="valid")
    mu_y = convolve2d(y, window, mode="valid")
    xx = convolve2d(x * x, window, mode="valid") - mu_x**2
    yy = convolve2d(y * y, window, mode="valid") - mu_y**2
    xy = convolve2d(x * y, window, mode="valid") - mu_x * mu_y

    c1 = SSIM_K1**2  # dynamic range is 1.0
    c2 = SSIM_K2**2
    ssim_map = ((2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    )
    return float(ssim_map.mean())


def delta_e(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean per-pixel Euclidean distance in CIELAB (CIE76)."""
    _check_shapes(a, b)
    diff = rgb_to_lab(a) - rgb_to_lab(b)
    return float(np.sqrt((diff * diff).sum(axis=2)).mean())


def metric_report(pred: ImageBuffer, gt: ImageBuffer) -> MetricReport:
    return MetricReport(psnr=psnr(pred, gt), ssim=ssim(pred, gt), delta_e=delta_e(pred, gt))


def build_reference_pairs(dataset, provider, prompts: PromptSet, m: int) -> list:
    """For each image, the indices of its m most style-similar companions.

    Similarity is symmetric KL divergence between prompt distributions; ties
    break toward lower index, and an image is never paired with itself.
    """
    dataset = list(dataset)
    if len(dataset) <= m:
        raise InsufficientDatasetError(
            f"need more than {m} images to pick {m} references, got {len(dataset)}"
        )
    dists = [prompt_distribution(provider, img, prompts) for img in dataset]
    n = len(dataset)
    sym = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = kl_selection_score(dists[i], dists[j]) + kl_selection_score(dists[j], dists[i])
            sym[i, j] = sym[j, i] = d
    pairs = []
    for i in range(n):
        order = sorted(j for j in range(n) if j != i)
        order.sort(key=lambda j: sym[i, j])  # stable: index breaks ties
        pairs.append(order[:m])
    return pairs

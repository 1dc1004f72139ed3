"""The seven photometric operations and sequential program execution.

Every kernel is pointwise except texture, clamps its output to [0, 1], and
returns the input unchanged at parameter 0. Parameters live in [-1, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .errors import ParamOutOfRangeError
from .image import ImageBuffer, luminance


class FilterKind(str, Enum):
    EXPOSURE = "exposure"
    CONTRAST = "contrast"
    HIGHLIGHT = "highlight"
    SHADOW = "shadow"
    SATURATION = "saturation"
    TEMPERATURE = "temperature"
    TEXTURE = "texture"

    def __str__(self) -> str:
        return self.value


CANONICAL_FILTER_NAMES = tuple(kind.value for kind in FilterKind)


@dataclass(frozen=True)
class RetouchStep:
    """One (filter, parameter) adjustment; param is unitless in [-1, 1]."""

    filter: FilterKind
    param: float

    def __post_init__(self):
        if not (isinstance(self.param, (int, float)) and math.isfinite(self.param)):
            raise ParamOutOfRangeError(f"parameter must be a finite number, got {self.param!r}")
        if abs(self.param) > 1.0:
            raise ParamOutOfRangeError(f"|param| must be <= 1, got {self.param}")
        object.__setattr__(self, "filter", FilterKind(self.filter))
        object.__setattr__(self, "param", float(self.param))


def _clamp01(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def texture_sigma(height: int, width: int) -> float:
    """Blur scale for the texture filter, proportional to the longest side."""
    return max(1.0, 0.002 * max(height, width))


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(field: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; kernel radius ceil(3*sigma)."""
    k = _gaussian_kernel(sigma)
    out = ndimage.convolve1d(field.astype(np.float64), k, axis=0, mode="reflect")
    return ndimage.convolve1d(out, k, axis=1, mode="reflect")


def _scalar_mean(img: ImageBuffer) -> np.float32:
    return np.float32(img.data.mean(dtype=np.float64))


def apply_filter(img: ImageBuffer, step: RetouchStep) -> ImageBuffer:
    """Apply one photometric operation, returning a new clamped buffer."""
    f = np.float32(step.param)
    if f == 0.0:
        return img
    x = img.data

    if step.filter is FilterKind.EXPOSURE:
        out = _clamp01(x * np.float32(2.0 ** float(f)))
    elif step.filter is FilterKind.CONTRAST:
        mu = _scalar_mean(img)
        out = _clamp01(mu + (x - mu) * (np.float32(1.0) + f))
    elif step.filter is FilterKind.HIGHLIGHT:
        mask = _clamp01(2.0 * luminance(img) - 1.0)
        out = _clamp01(x + np.float32(0.5) * f * mask[:, :, None])
    elif step.filter is FilterKind.SHADOW:
        mask = _clamp01(1.0 - 2.0 * luminance(img))
        out = _clamp01(x + np.float32(0.5) * f * mask[:, :, None])
    elif step.filter is FilterKind.SATURATION:
        lum = luminance(img)[:, :, None]
        out = _clamp01(lum + (x - lum) * (np.float32(1.0) + f))
    elif step.filter is FilterKind.TEMPERATURE:
        out = x.copy()
        out[:, :, 0] = _clamp01(x[:, :, 0] * (np.float32(1.0) + np.float32(0.25) * f))
        out[:, :, 2] = _clamp01(x[:, :, 2] * (np.float32(1.0) - np.float32(0.25) * f))
    elif step.filter is FilterKind.TEXTURE:
        # High-pass on mean-centered values: identical to x - blur(x) in exact
        # arithmetic, but keeps constant fields exactly unchanged in floats.
        mu = float(_scalar_mean(img))
        sigma = texture_sigma(img.height, img.width)
        centered = x.astype(np.float64) - mu
        detail = centered - gaussian_blur(centered, sigma)
        out = _clamp01(x.astype(np.float64) + float(f) * detail).astype(np.float32)
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown filter {step.filter!r}")

    return ImageBuffer(data=out.astype(np.float32), source_depth=img.source_depth)


def execute_program(img: ImageBuffer, program) -> ImageBuffer:
    """Run steps left to right; an empty program returns the image unchanged.

    Accepts a RetouchProgram or any iterable of RetouchStep.
    """
    steps = getattr(program, "steps", program)
    for step in steps:
        img = apply_filter(img, step)
    return img

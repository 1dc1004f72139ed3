"""Image buffers, color conversions, and per-image statistics.

All images are held as immutable float32 rasters of shape (H, W, 3) with
sRGB-encoded intensities in [0, 1]. Integer source files are normalized by
their maximum code value on load and re-quantized on save.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, fields

import cv2
import numpy as np
from scipy import ndimage

from .errors import DecodeError

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
JPEG_MAGIC = b"\xff\xd8\xff"

# Rec.601 luma weights; the rewrite in luminance() keeps gray pixels exact.
LUMA_R, LUMA_G = 0.299, 0.587

# sRGB (D65) to XYZ, IEC 61966-2-1 primaries. The white point below is the
# matrix's own white (its row sums), so (1,1,1) maps to L=100, a=b=0.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE_XYZ = np.array([0.95047, 1.0, 1.08883])

_LAPLACIAN_4 = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class ImageBuffer:
    """Immutable H x W x 3 float32 raster with intensities in [0, 1]."""

    data: np.ndarray
    source_depth: int = 8
    warnings: tuple = ()

    def __post_init__(self):
        arr = self.data
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if arr.dtype != np.float32:
            raise ValueError(f"expected float32 data, got {arr.dtype}")
        if not arr.flags.writeable:
            return
        arr.setflags(write=False)

    @classmethod
    def from_array(cls, arr, source_depth: int = 8, warnings: tuple = ()) -> "ImageBuffer":
        """Build a buffer from any array-like, clipping into [0, 1]."""
        data = np.clip(np.asarray(arr, dtype=np.float32), 0.0, 1.0)
        return cls(data=data, source_depth=source_depth, warnings=warnings)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def same_pixels(self, other: "ImageBuffer") -> bool:
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class ImageStats:
    """Scalar statistics handed to agents, all computed over the full image."""

    pixel_mean: float
    pixel_median: float
    pixel_std: float
    p10_low: float
    p10_high: float
    mean_r: float
    mean_g: float
    mean_b: float
    laplacian_variance: float
    sat_mean: float
    sat_std: float
    sat_min: float
    sat_max: float
    lab_l_mean: float
    lab_b_mean: float

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def mean_stats(stats_list) -> ImageStats:
    """Field-wise arithmetic mean of several ImageStats."""
    stats_list = list(stats_list)
    if not stats_list:
        raise ValueError("mean_stats needs at least one ImageStats")
    names = [f.name for f in fields(ImageStats)]
    return ImageStats(
        **{n: float(np.mean([getattr(s, n) for s in stats_list])) for n in names}
    )


def decode_image_bytes(raw: bytes, origin: str = "<bytes>") -> ImageBuffer:
    """Decode PNG (8/16-bit) or JPEG (8-bit) bytes into a normalized buffer.

    Alpha channels are dropped with a note in ``warnings``; anything that is
    not a decodable PNG/JPEG raises DecodeError.
    """
    if not (raw.startswith(PNG_MAGIC) or raw.startswith(JPEG_MAGIC)):
        raise DecodeError(f"{origin}: not a PNG or JPEG file")
    arr = cv2.imdecode(np.frombuffer(raw, np.uint8), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise DecodeError(f"{origin}: file does not decode")

    if arr.dtype == np.uint8:
        scale, depth = 255.0, 8
    elif arr.dtype == np.uint16:
        scale, depth = 65535.0, 16
    else:
        raise DecodeError(f"{origin}: unsupported sample type {arr.dtype}")

    warnings = ()
    if arr.ndim == 2:
        arr = np.stack([arr, arr, arr], axis=-1)
    elif arr.shape[2] == 4:
        arr = arr[:, :, :3]
        warnings = ("alpha channel dropped",)
    arr = arr[:, :, ::-1]  # BGR -> RGB
    data = (arr.astype(np.float32) / np.float32(scale)).clip(0.0, 1.0)
    return ImageBuffer(data=data, source_depth=depth, warnings=warnings)


def load_image(path) -> ImageBuffer:
    """Read a PNG (8/16-bit) or JPEG (8-bit) file into a normalized buffer.

    Raises OSError if the file is missing or unreadable.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    return decode_image_bytes(raw, origin=str(path))


def encode_png_bytes(img: ImageBuffer, depth: int = 8) -> bytes:
    """PNG-encode with round-half-up quantization at the given bit depth."""
    if depth == 8:
        codes = np.floor(img.data * 255.0 + 0.5).astype(np.uint8)
    elif depth == 16:
        codes = np.floor(img.data.astype(np.float64) * 65535.0 + 0.5).astype(np.uint16)
    else:
        raise ValueError(f"depth must be 8 or 16, got {depth}")
    ok, encoded = cv2.imencode(".png", codes[:, :, ::-1])
    if not ok:
        raise ValueError("PNG encoding failed")
    return encoded.tobytes()


def save_image(img: ImageBuffer, path, depth: int = 8) -> None:
    """Write the buffer as a PNG at the given bit depth (8 or 16).

    Quantization is round-half-up, so a load of the written file reproduces
    each intensity within half a code step.
    """
    payload = encode_png_bytes(img, depth)
    with open(path, "wb") as fh:
        fh.write(payload)


def luminance(img: ImageBuffer) -> np.ndarray:
    """Rec.601 luma per pixel as an (H, W) float32 field.

    Written as B + wr*(R-B) + wg*(G-B) so gray pixels map to their own value
    exactly in float arithmetic.
    """
    r = img.data[:, :, 0]
    g = img.data[:, :, 1]
    b = img.data[:, :, 2]
    return b + np.float32(LUMA_R) * (r - b) + np.float32(LUMA_G) * (g - b)


def _srgb_to_linear(x: np.ndarray) -> np.ndarray:
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def rgb_to_lab(img: ImageBuffer) -> np.ndarray:
    """Convert sRGB-encoded values to CIELAB (D65), shape (H, W, 3) float64."""
    linear = _srgb_to_linear(img.data.astype(np.float64))
    xyz = linear @ _RGB_TO_XYZ.T
    t = xyz / _WHITE_XYZ
    delta = 6.0 / 29.0
    f = np.where(t > delta**3, np.cbrt(t), t / (3.0 * delta**2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[:, :, 0] = 116.0 * f[:, :, 1] - 16.0
    lab[:, :, 1] = 500.0 * (f[:, :, 0] - f[:, :, 1])
    lab[:, :, 2] = 200.0 * (f[:, :, 1] - f[:, :, 2])
    return lab


def hsv_saturation(img: ImageBuffer) -> np.ndarray:
    """HSV saturation channel: (max - min) / max, with 0 where max == 0."""
    cmax = img.data.max(axis=2)
    cmin = img.data.min(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        sat = np.where(cmax > 0.0, (cmax - cmin) / cmax, 0.0)
    return sat.astype(np.float32)


def compute_stats(img: ImageBuffer) -> ImageStats:
    """Populate every ImageStats field from the full-resolution image."""
    flat = np.sort(img.data.astype(np.float64), axis=None)
    n = flat.size
    k = max(1, n // 10)

    lum = luminance(img).astype(np.float64)
    lap = ndimage.convolve(lum, _LAPLACIAN_4, mode="reflect")

    sat = hsv_saturation(img).astype(np.float64)
    lab = rgb_to_lab(img)

    return ImageStats(
        pixel_mean=float(flat.mean()),
        pixel_median=float(np.median(flat)),
        pixel_std=float(flat.std()),
        p10_low=float(flat[:k].mean()),
        p10_high=float(flat[-k:].mean()),
        mean_r=float(img.data[:, :, 0].mean(dtype=np.float64)),
        mean_g=float(img.data[:, :, 1].mean(dtype=np.float64)),
        mean_b=float(img.data[:, :, 2].mean(dtype=np.float64)),
        laplacian_variance=float(lap.var()),
        sat_mean=float(sat.mean()),
        sat_std=float(sat.std()),
        sat_min=float(sat.min()),
        sat_max=float(sat.max()),
        lab_l_mean=float(lab[:, :, 0].mean()),
        lab_b_mean=float(lab[:, :, 2].mean()),
    )

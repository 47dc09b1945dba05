"""Image tensors, file I/O and the fixed resampling operators.

All images are H x W x C float64 arrays in [0, 1], channel-last. Resampling
uses a Catmull-Rom bicubic kernel (a = -0.5) with edge replication; when
downscaling, the kernel support is widened by the inverse factor so the
result is anti-aliased. Every operator here clamps its output back into
[0, 1] because cubic interpolation overshoots.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import cv2
import numpy as np

from .errors import FormatError

# BT.601 luma coefficients, full range.
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


class ColorSpace(enum.Enum):
    RGB = "rgb"
    LUMA = "luma"


@dataclass(frozen=True)
class ImageTensor:
    """H x W x C floating-point image, channel-last.

    ``data`` must be finite. Operators in this module keep values in [0, 1];
    intermediate products elsewhere (wavelet bands, unclamped network output)
    may leave that range.
    """

    data: np.ndarray
    color_space: ColorSpace = ColorSpace.RGB

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"image must be HxWxC, got shape {data.shape}")
        h, w, c = data.shape
        if h < 1 or w < 1:
            raise ValueError(f"empty image of shape {data.shape}")
        if c not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {c}")
        if not np.isfinite(data).all():
            raise ValueError("image contains non-finite values")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def clamp01(data: np.ndarray) -> np.ndarray:
    return np.clip(data, 0.0, 1.0)


def to_luma(img: ImageTensor) -> ImageTensor:
    """BT.601 full-range luminance as a single-channel image."""
    if img.color_space is ColorSpace.LUMA:
        return img
    y = img.data @ _LUMA
    return ImageTensor(clamp01(y[..., None]), ColorSpace.LUMA)


def load_image(path) -> ImageTensor:
    """Load an 8- or 16-bit PNG/JPEG/TIFF as an RGB image in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FormatError(f"unsupported or unreadable image format: {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise FormatError(f"{path}: unsupported sample type {raw.dtype}")
    data = raw.astype(np.float64) / scale
    if data.ndim == 2:
        data = np.repeat(data[..., None], 3, axis=2)
    elif data.shape[2] == 4:  # drop alpha
        data = data[..., :3][..., ::-1]
    elif data.shape[2] == 3:
        data = data[..., ::-1]  # BGR -> RGB
    else:
        raise FormatError(f"{path}: unsupported channel layout {raw.shape}")
    return ImageTensor(clamp01(data), ColorSpace.RGB)


def save_image(img: ImageTensor, path, bit_depth: int = 8) -> None:
    """Write an image as PNG/JPEG/TIFF; ``bit_depth`` 16 keeps HR precision."""
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    data = clamp01(img.data)
    if img.channels == 1:
        data = np.repeat(data, 3, axis=2)
    maxv = 255 if bit_depth == 8 else 65535
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    quant = np.floor(data * maxv + 0.5).astype(dtype)
    ok = cv2.imwrite(str(path), quant[..., ::-1])
    if not ok:
        raise FormatError(f"could not encode image to {path}")


def _cubic_kernel(x: np.ndarray) -> np.ndarray:
    """Catmull-Rom cubic (a = -0.5), support [-2, 2]."""
    a = -0.5
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    out = np.zeros_like(ax)
    near = ax <= 1.0
    far = (ax > 1.0) & (ax < 2.0)
    out[near] = (a + 2.0) * ax3[near] - (a + 3.0) * ax2[near] + 1.0
    out[far] = a * ax3[far] - 5.0 * a * ax2[far] + 8.0 * a * ax[far] - 4.0 * a
    return out


def _axis_taps(n_in: int, n_out: int, factor: float):
    """Tap indices and normalized weights for one resampled axis.

    Returns (idx, w) of shape (n_out, k): output i is sum_k w[i,k] * in[idx[i,k]].
    Downscaling widens the kernel by 1/factor; indices are clamped to the
    edge (replication) and weights renormalized to sum to 1 so constants are
    reproduced exactly.
    """
    scale = min(factor, 1.0)
    support = 2.0 / scale
    centers = (np.arange(n_out, dtype=np.float64) + 0.5) / factor - 0.5
    lo = np.ceil(centers - support).astype(np.int64)
    k = int(np.floor(2.0 * support)) + 2
    offsets = np.arange(k, dtype=np.int64)
    idx = lo[:, None] + offsets[None, :]
    w = _cubic_kernel((centers[:, None] - idx) * scale)
    idx = np.clip(idx, 0, n_in - 1)
    w = w / w.sum(axis=1, keepdims=True)
    return idx, w


def _resample_axis0(data: np.ndarray, n_out: int, factor: float) -> np.ndarray:
    n_in = data.shape[0]
    if n_out == n_in and factor == 1.0:
        return data
    idx, w = _axis_taps(n_in, n_out, factor)
    out = np.zeros((n_out,) + data.shape[1:], dtype=np.float64)
    for t in range(idx.shape[1]):
        out += w[:, t].reshape((n_out,) + (1,) * (data.ndim - 1)) * data[idx[:, t]]
    return out


def bicubic_resize(img: ImageTensor, factor) -> ImageTensor:
    """Resample by ``factor`` (float or Fraction) along both axes."""
    factor = float(Fraction(factor)) if not isinstance(factor, float) else factor
    if not factor > 0:
        raise ValueError(f"factor must be positive, got {factor}")
    h_out = int(math.floor(img.height * factor + 0.5))
    w_out = int(math.floor(img.width * factor + 0.5))
    if h_out < 1 or w_out < 1:
        raise ValueError(
            f"factor {factor} maps {img.height}x{img.width} to an empty image"
        )
    if factor == 1.0:
        return ImageTensor(clamp01(img.data), img.color_space)
    data = _resample_axis0(img.data, h_out, factor)
    data = _resample_axis0(data.transpose(1, 0, 2), w_out, factor).transpose(1, 0, 2)
    return ImageTensor(clamp01(data), img.color_space)


def _check_scale(s: int) -> None:
    if s not in (2, 4, 8, 16):
        raise ValueError(f"scale must be one of 2, 4, 8, 16, got {s}")


def degrade_bicubic(hr: ImageTensor, s: int) -> ImageTensor:
    """Fixed bicubic downscale producing the low-resolution counterpart."""
    _check_scale(s)
    if hr.height % s or hr.width % s:
        raise ValueError(
            f"image dims {hr.height}x{hr.width} not divisible by {s}; crop first"
        )
    return bicubic_resize(hr, Fraction(1, s))


def down_up(img: ImageTensor, s: int) -> ImageTensor:
    """Bicubic downscale then upscale by ``s``; a fixed low-pass at scale s."""
    _check_scale(s)
    if img.height % s or img.width % s:
        raise ValueError(
            f"image dims {img.height}x{img.width} not divisible by {s}; crop first"
        )
    return bicubic_resize(bicubic_resize(img, Fraction(1, s)), s)


def crop_aligned(img: ImageTensor, s: int) -> ImageTensor:
    """Center-crop so both spatial dims are divisible by ``s``."""
    if s < 1:
        raise ValueError(f"alignment must be >= 1, got {s}")
    h2 = (img.height // s) * s
    w2 = (img.width // s) * s
    if h2 == 0 or w2 == 0:
        raise ValueError(
            f"image {img.height}x{img.width} too small to align to multiple of {s}"
        )
    top = (img.height - h2) // 2
    left = (img.width - w2) // 2
    return ImageTensor(img.data[top : top + h2, left : left + w2], img.color_space)

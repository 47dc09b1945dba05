"""Single-level Haar analysis/synthesis.

The 2x2 kernels are outer products of the 1-D filters
``L = (1/sqrt(2)) [1, 1]`` and ``H = (1/sqrt(2)) [-1, 1]``, with the first
factor filtering rows (the vertical axis) and the second filtering columns.
The transform is orthonormal, so the synthesis operator is also the adjoint
of the analysis operator. ``haar_inverse`` is exact and intentionally does
not clamp.

Because these are stride-2 valid convolutions with 2x2 supports, both
directions reduce to index arithmetic on the four pixel phases; the same
formulas are provided for torch tensors so gradients can flow through the
HH extraction used by the texture objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .imaging import ColorSpace, ImageTensor

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
FILTER_LOW = np.array([1.0, 1.0]) * _INV_SQRT2
FILTER_HIGH = np.array([-1.0, 1.0]) * _INV_SQRT2

KERNEL_LL = np.outer(FILTER_LOW, FILTER_LOW)
KERNEL_LH = np.outer(FILTER_LOW, FILTER_HIGH)
KERNEL_HL = np.outer(FILTER_HIGH, FILTER_LOW)
KERNEL_HH = np.outer(FILTER_HIGH, FILTER_HIGH)


@dataclass(frozen=True)
class WaveletBands:
    """The four stride-2 sub-bands, each (H/2) x (W/2) x C."""

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    def __post_init__(self):
        shape = self.ll.shape
        for name in ("lh", "hl", "hh"):
            if getattr(self, name).shape != shape:
                raise ValueError(
                    f"band {name} has shape {getattr(self, name).shape}, expected {shape}"
                )


def _phases(data: np.ndarray):
    a = data[0::2, 0::2]
    b = data[0::2, 1::2]
    c = data[1::2, 0::2]
    d = data[1::2, 1::2]
    return a, b, c, d


def haar_forward(img) -> WaveletBands:
    """Decompose an even-sized image into LL/LH/HL/HH bands."""
    data = img.data if isinstance(img, ImageTensor) else np.asarray(img, dtype=np.float64)
    h, w = data.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"haar_forward needs even dims, got {h}x{w}")
    a, b, c, d = _phases(data)
    return WaveletBands(
        ll=(a + b + c + d) / 2.0,
        lh=(-a + b - c + d) / 2.0,
        hl=(-a - b + c + d) / 2.0,
        hh=(a - b - c + d) / 2.0,
    )


def haar_inverse(bands: WaveletBands) -> ImageTensor:
    """Exact orthonormal reconstruction; output is not clamped."""
    ll, lh, hl, hh = bands.ll, bands.lh, bands.hl, bands.hh
    h, w = ll.shape[:2]
    out = np.empty((2 * h, 2 * w) + ll.shape[2:], dtype=np.float64)
    out[0::2, 0::2] = (ll - lh - hl + hh) / 2.0
    out[0::2, 1::2] = (ll + lh - hl - hh) / 2.0
    out[1::2, 0::2] = (ll - lh + hl - hh) / 2.0
    out[1::2, 1::2] = (ll + lh + hl + hh) / 2.0
    return ImageTensor(out)


def extract_hh(img: ImageTensor) -> ImageTensor:
    """Diagonal high-frequency band of an image, as an (H/2)x(W/2) image.

    Values lie in [-1, 1] for inputs in [0, 1] and are invariant to adding
    a constant to the input.
    """
    bands = haar_forward(img)
    return ImageTensor(bands.hh, img.color_space)


def remap_hh(hh: np.ndarray) -> np.ndarray:
    """Affine remap of an HH band into [0, 1] for feature extractors.

    This remap (v -> v/2 + 0.5) is part of the texture-objective definition.
    """
    return hh / 2.0 + 0.5


def extract_hh_torch(x: torch.Tensor) -> torch.Tensor:
    """HH band of a (B, C, H, W) tensor; differentiable."""
    if x.shape[-2] % 2 or x.shape[-1] % 2:
        raise ValueError(f"extract_hh needs even dims, got {tuple(x.shape[-2:])}")
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return (a - b - c + d) / 2.0


def remap_hh_torch(hh: torch.Tensor) -> torch.Tensor:
    return hh / 2.0 + 0.5

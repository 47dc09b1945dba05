"""Quantitative evaluation: PSNR, SSIM, NIQE and the perceptual index.

PSNR and SSIM are computed on the BT.601 luminance of the full images,
without border cropping. SSIM uses the classic 11x11 Gaussian window
(sigma 1.5, K1=0.01, K2=0.03) over valid window positions.

NIQE fits a multivariate Gaussian to natural-scene-statistics features
(GGD fit of the locally normalized luminance plus AGGD fits of its four
orientation products, at two scales) over 96x96 patches and measures the
Mahalanobis-style distance to a pristine model. The pristine model is not
shipped; fit it from sharp HR tiles with ``fit_niqe``.

The perceptual index combines an externally supplied learned score with
NIQE: PI = 0.5 * ((10 - ma) + niqe).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.ndimage
import scipy.special

from .errors import ConfigurationError
from .imaging import ImageTensor, bicubic_resize, to_luma

# Inverse lookup table for the generalized-Gaussian shape parameter.
_GAMMA_GRID = np.arange(0.2, 10.0, 0.001)
_GAMMA_RATIO = (
    scipy.special.gamma(2.0 / _GAMMA_GRID) ** 2
    / (scipy.special.gamma(1.0 / _GAMMA_GRID) * scipy.special.gamma(3.0 / _GAMMA_GRID))
)


def _luma2d(img: ImageTensor) -> np.ndarray:
    return to_luma(img).data[..., 0]


def psnr(a: ImageTensor, b: ImageTensor) -> float:
    """Peak signal-to-noise ratio in dB on [0, 1] luminance; inf if equal."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    mse = float(np.mean((_luma2d(a) - _luma2d(b)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_1d(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    return g / g.sum()


def _valid_filter(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable correlation with 1-D kernel ``g``, valid positions only."""
    tmp = scipy.ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = scipy.ndimage.correlate1d(tmp, g, axis=1, mode="constant")
    pad = len(g) // 2
    return out[pad:-pad, pad:-pad]


def ssim(a: ImageTensor, b: ImageTensor) -> float:
    """Mean structural similarity on luminance, 11x11 Gaussian window."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    x, y = _luma2d(a), _luma2d(b)
    win = 11
    if min(x.shape) < win:
        raise ValueError(f"images must be at least {win}x{win}, got {x.shape}")
    g = _gaussian_1d(win, 1.5)
    c1, c2 = 0.01**2, 0.03**2

    mu_x = _valid_filter(x, g)
    mu_y = _valid_filter(y, g)
    xx = _valid_filter(x * x, g) - mu_x**2
    yy = _valid_filter(y * y, g) - mu_y**2
    xy = _valid_filter(x * y, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def perceptual_index(ma: float, niqe_score: float) -> float:
    """PI = 0.5 * ((10 - ma) + niqe); lower is better."""
    return 0.5 * ((10.0 - ma) + niqe_score)


# ---------------------------------------------------------------------------
# NIQE
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NiqeModel:
    """Pristine natural-scene-statistics model: feature mean and covariance."""

    mu: np.ndarray
    cov: np.ndarray
    patch_size: int = 96

    def save(self, path) -> None:
        np.savez(path, mu=self.mu, cov=self.cov, patch_size=self.patch_size)

    @classmethod
    def load(cls, path) -> "NiqeModel":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"NIQE model file not found: {path}")
        with np.load(path) as blob:
            return cls(
                mu=blob["mu"], cov=blob["cov"], patch_size=int(blob["patch_size"])
            )


def _gauss_kernel_1d(radius: int = 3, sigma: float = 7.0 / 6.0) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (r / sigma) ** 2)
    return k / k.sum()


def _mscn(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Locally normalized luminance and the local deviation field."""
    k = _gauss_kernel_1d()
    mu = scipy.ndimage.correlate1d(img, k, axis=0, mode="nearest")
    mu = scipy.ndimage.correlate1d(mu, k, axis=1, mode="nearest")
    mu2 = scipy.ndimage.correlate1d(img * img, k, axis=0, mode="nearest")
    mu2 = scipy.ndimage.correlate1d(mu2, k, axis=1, mode="nearest")
    sigma = np.sqrt(np.abs(mu2 - mu * mu))
    return (img - mu) / (sigma + 1.0), sigma


def _ggd_params(x: np.ndarray) -> tuple[float, float]:
    """Moment-matched generalized Gaussian (shape, variance)."""
    var = float(np.mean(x * x))
    mean_abs = float(np.mean(np.abs(x)))
    if var == 0.0 or mean_abs == 0.0:
        return 10.0, 0.0
    rho = mean_abs**2 / var
    alpha = _GAMMA_GRID[np.argmin((_GAMMA_RATIO - rho) ** 2)]
    return float(alpha), var


def _aggd_params(x: np.ndarray) -> tuple[float, float, float, float]:
    """Asymmetric GGD fit: (shape, mean, left variance, right variance)."""
    left = x[x < 0]
    right = x[x >= 0]
    lsq = float(np.mean(left**2)) if left.size else 0.0
    rsq = float(np.mean(right**2)) if right.size else 0.0
    l_std, r_std = math.sqrt(lsq), math.sqrt(rsq)
    gamma_hat = l_std / r_std if r_std > 0 else math.inf
    m2 = float(np.mean(x * x))
    r_hat = float(np.mean(np.abs(x))) ** 2 / m2 if m2 > 0 else math.inf
    if math.isfinite(gamma_hat) and math.isfinite(r_hat):
        rhat_norm = r_hat * (gamma_hat**3 + 1) * (gamma_hat + 1) / (gamma_hat**2 + 1) ** 2
    else:
        rhat_norm = math.inf
    if math.isfinite(rhat_norm):
        alpha = float(_GAMMA_GRID[np.argmin((_GAMMA_RATIO - rhat_norm) ** 2)])
    else:
        alpha = 10.0
    g1 = scipy.special.gamma(1.0 / alpha)
    g2 = scipy.special.gamma(2.0 / alpha)
    g3 = scipy.special.gamma(3.0 / alpha)
    ratio = math.sqrt(g1) / math.sqrt(g3)
    bl = ratio * l_std
    br = ratio * r_std
    mean = (br - bl) * (g2 / g1)
    return alpha, mean, bl, br


def _patch_features(mscn: np.ndarray) -> np.ndarray:
    """18 natural-scene-statistics features of one normalized patch."""
    feats = list(_ggd_params(mscn))
    shifts = (
        np.roll(mscn, 1, axis=1),                      # horizontal neighbor
        np.roll(mscn, 1, axis=0),                      # vertical neighbor
        np.roll(np.roll(mscn, 1, axis=0), 1, axis=1),  # main diagonal
        np.roll(np.roll(mscn, 1, axis=0), -1, axis=1),  # anti diagonal
    )
    for sh in shifts:
        feats.extend(_aggd_params(mscn * sh))
    return np.array(feats, dtype=np.float64)


def _image_features(
    luma: np.ndarray, patch: int, sharpness_fraction: float | None = None
) -> np.ndarray:
    """Per-patch 36-dim features at two scales; optionally keep sharp patches.

    Patch selection (for model fitting) follows the local-deviation rule:
    keep patches whose mean deviation exceeds ``sharpness_fraction`` of the
    sharpest patch.
    """
    h, w = luma.shape
    if h < patch or w < patch:
        return np.empty((0, 36))
    feats_scales = []
    keep = None
    for scale in (1, 2):
        img = luma if scale == 1 else _half_scale(luma)
        mscn, sigma = _mscn(img)
        p = patch // scale
        gh, gw = img.shape[0] // p, img.shape[1] // p
        feats = []
        sharp = []
        for i in range(gh):
            for j in range(gw):
                block = mscn[i * p : (i + 1) * p, j * p : (j + 1) * p]
                feats.append(_patch_features(block))
                if scale == 1:
                    sharp.append(
                        float(np.mean(sigma[i * p : (i + 1) * p, j * p : (j + 1) * p]))
                    )
        feats = np.array(feats)
        if scale == 1 and sharpness_fraction is not None and feats.size:
            sharp = np.array(sharp)
            keep = sharp > sharpness_fraction * sharp.max()
            if not keep.any():
                keep = np.ones(len(feats), dtype=bool)
        if keep is not None:
            feats = feats[keep[: len(feats)]] if len(keep) == len(feats) else feats
        feats_scales.append(feats)
    n = min(len(f) for f in feats_scales)
    return np.hstack([f[:n] for f in feats_scales])


def _half_scale(luma: np.ndarray) -> np.ndarray:
    img = ImageTensor(np.clip(luma, 0.0, 1.0)[..., None])
    h2, w2 = (luma.shape[0] // 2) * 2, (luma.shape[1] // 2) * 2
    img = ImageTensor(img.data[:h2, :w2], img.color_space)
    return bicubic_resize(img, Fraction(1, 2)).data[..., 0]


def fit_niqe(
    corpus,
    patch_size: int = 96,
    sharpness_fraction: float = 0.75,
    min_patches: int = 16,
) -> NiqeModel:
    """Estimate the pristine model from a corpus of sharp images."""
    feats = []
    for img in corpus:
        luma = _luma2d(img)
        f = _image_features(luma, patch_size, sharpness_fraction)
        if f.size:
            feats.append(f)
    if not feats:
        raise ValueError("no usable patches in corpus (images smaller than patch?)")
    feats = np.vstack(feats)
    if len(feats) < min_patches:
        raise ValueError(
            f"insufficient patches to fit a pristine model: {len(feats)} < {min_patches}"
        )
    mu = feats.mean(axis=0)
    cov = np.cov(feats.T)
    return NiqeModel(mu=mu, cov=cov, patch_size=patch_size)


def niqe(img: ImageTensor, model: NiqeModel) -> float:
    """Distance of the image's statistics to the pristine model; >= 0."""
    if not isinstance(model, NiqeModel):
        raise ConfigurationError("niqe needs a fitted NiqeModel")
    luma = _luma2d(img)
    if min(luma.shape) < model.patch_size:
        raise ValueError(
            f"image {luma.shape} smaller than NIQE patch {model.patch_size}"
        )
    feats = _image_features(luma, model.patch_size)
    if feats.size == 0:
        raise ValueError("image yields no NIQE patches")
    mu_d = feats.mean(axis=0)
    cov_d = np.cov(feats.T) if len(feats) > 1 else np.zeros_like(model.cov)
    diff = model.mu - mu_d
    pooled = (model.cov + cov_d) / 2.0
    score = float(np.sqrt(diff @ scipy.linalg.pinv(pooled) @ diff))
    return score


# ---------------------------------------------------------------------------
# Evaluation tables
# ---------------------------------------------------------------------------


def evaluate_pair(
    sr: ImageTensor,
    gt: ImageTensor,
    niqe_model: NiqeModel | None = None,
    ma: float | None = None,
) -> dict:
    """One row of the evaluation table; unavailable entries become None."""
    row: dict = {"psnr": psnr(sr, gt), "ssim": ssim(sr, gt)}
    score = None
    if niqe_model is not None:
        luma = _luma2d(sr)
        if min(luma.shape) >= niqe_model.patch_size:
            score = niqe(sr, niqe_model)
    row["niqe"] = score
    row["ma"] = ma
    row["pi"] = (
        perceptual_index(ma, score) if ma is not None and score is not None else None
    )
    return row

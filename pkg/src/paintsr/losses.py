"""Training objectives.

All losses operate on (B, C, H, W) torch tensors and return 0-dim tensors;
``ImageTensor`` inputs are converted automatically. Elementwise l1 terms use
the mean over elements and Frobenius distances use the root-mean-square over
matrix entries, so the published weight settings stay meaningful regardless
of tile size.

The texture term compares Gram statistics of features extracted from the
diagonal high-frequency band of the output against Gram statistics of the
transferred reference features, per level. The reference side is assembled
by ``matching.transfer_at_level`` from raw reference features (the default);
``symmetric_hh=True`` switches the reference side to HH-filtered reference
features, which restricts usable levels to l >= L-1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from . import matching, wavelet
from .errors import NumericError
from .features import FeatureExtractor, FeaturePyramid, gram, gram_torch
from .imaging import ImageTensor

TERM_NAMES = ("rec", "tex", "deg", "per", "adv")


@dataclass(frozen=True)
class LossWeights:
    """Objective weights; defaults follow the published training recipe."""

    w_rec: float = 1.0
    w_tex: float = 1e-4
    w_deg: float = 1.0
    w_per: float = 1e-4
    w_adv: float = 1e-6
    gp_coef: float = 10.0
    lambda_l: dict[int, float] | None = None  # None -> uniform 1/|levels|

    def __post_init__(self):
        for name in ("w_rec", "w_tex", "w_deg", "w_per", "w_adv", "gp_coef"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def weight(self, term: str) -> float:
        return getattr(self, f"w_{term}")

    def level_weight(self, l: int, levels) -> float:
        if self.lambda_l is not None:
            return float(self.lambda_l[l])
        return 1.0 / len(levels)


@dataclass(frozen=True)
class LossReport:
    """Unweighted per-term values plus the weighted total."""

    rec: float = 0.0
    tex: float = 0.0
    deg: float = 0.0
    per: float = 0.0
    adv: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in TERM_NAMES + ("total",)}


def _as_batch(x, dtype: torch.dtype | None = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        t = x if x.ndim == 4 else x.unsqueeze(0)
    else:
        if isinstance(x, ImageTensor):
            x = x.data
        arr = np.ascontiguousarray(np.asarray(x).transpose(2, 0, 1))
        t = torch.from_numpy(arr).unsqueeze(0)
    return t.to(dtype) if dtype is not None else t


def frobenius_mean(x: torch.Tensor) -> torch.Tensor:
    """Root-mean-square over all entries (size-normalized Frobenius norm)."""
    return torch.sqrt(torch.mean(x * x))


def loss_rec(i_sr, i_gt) -> torch.Tensor:
    """Mean absolute difference."""
    sr, gt = _as_batch(i_sr), _as_batch(i_gt)
    gt = gt.to(sr.dtype)
    if sr.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(gt.shape)}")
    return torch.mean(torch.abs(sr - gt))


def loss_per(i_sr, i_gt, extractor: FeatureExtractor) -> torch.Tensor:
    """Mean over deep feature maps of the RMS difference per map."""
    sr, gt = _as_batch(i_sr, extractor.dtype), _as_batch(i_gt, extractor.dtype)
    if sr.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(gt.shape)}")
    f_sr = extractor.perceptual_features(sr)
    with torch.no_grad():
        f_gt = extractor.perceptual_features(gt.to(sr.dtype))
    diff = f_sr - f_gt
    per_map = torch.sqrt(torch.mean(diff * diff, dim=(2, 3)))
    return per_map.mean()


def texture_gram_targets(
    ref_pyramid: FeaturePyramid,
    match: matching.MatchMap,
    levels,
    symmetric_hh: bool = False,
    extractor: FeatureExtractor | None = None,
) -> dict[int, np.ndarray]:
    """Per-level Gram matrices of the transferred reference features.

    With ``symmetric_hh`` the reference pyramid must have been computed on
    the remapped HH band of the reference; match coordinates are replayed at
    half scale, so only levels >= L-1 are representable.
    """
    targets = {}
    L = ref_pyramid.L
    for l in sorted(set(int(v) for v in levels)):
        if symmetric_hh:
            if l < L - 1:
                raise ValueError(
                    f"symmetric HH texture targets need l >= {L - 1}, got {l}"
                )
            gap = 2 ** (l - (L - 2) - 1)
            f_t = matching.transfer_features(ref_pyramid.level(l), match, gap)
        else:
            f_t = matching.transfer_at_level(ref_pyramid, match, l)
        targets[l] = gram(f_t.data).g
    return targets


def loss_tex_from_targets(
    i_sr,
    gram_targets: dict[int, np.ndarray],
    weights: LossWeights,
    extractor: FeatureExtractor,
    L: int,
) -> torch.Tensor:
    """Texture loss against precomputed Gram targets (the hot path)."""
    sr = _as_batch(i_sr, extractor.dtype)
    levels = sorted(gram_targets)
    hh = wavelet.remap_hh_torch(wavelet.extract_hh_torch(sr))
    feats = extractor.features_for_levels(hh, levels, L)
    total = sr.new_zeros(())
    for l in levels:
        g_sr = gram_torch(feats[l])
        g_ref = torch.from_numpy(gram_targets[l]).to(g_sr.dtype)
        lam = weights.level_weight(l, levels)
        total = total + lam * frobenius_mean(g_sr - g_ref.expand_as(g_sr))
    return total


def loss_tex_wavelet(
    i_sr,
    ref_pyramid: FeaturePyramid,
    match: matching.MatchMap,
    weights: LossWeights,
    extractor: FeatureExtractor,
    levels,
    symmetric_hh: bool = False,
) -> torch.Tensor:
    """High-frequency texture loss over the requested levels.

    Levels must lie in {L-2, L-1, L}: transfer below the matching level is
    undefined. The transferred-feature side carries no gradient.
    """
    L = ref_pyramid.L
    for l in levels:
        if not (L - 2 <= int(l) <= L):
            raise ValueError(f"texture level {l} outside transferable range "
                             f"{{{L - 2}..{L}}}")
    targets = texture_gram_targets(ref_pyramid, match, levels, symmetric_hh)
    return loss_tex_from_targets(i_sr, targets, weights, extractor, L)


def loss_deg(i_sr, i_lr, degrader: torch.nn.Module) -> torch.Tensor:
    """l1 between the degraded output and the LR input.

    The degradation network is frozen here: gradients flow into ``i_sr``
    only, never into the degrader parameters.
    """
    sr, lr = _as_batch(i_sr), _as_batch(i_lr)
    lr = lr.to(sr.dtype)
    flags = [p.requires_grad for p in degrader.parameters()]
    degrader.requires_grad_(False)
    try:
        down = degrader(sr)
    finally:
        for p, flag in zip(degrader.parameters(), flags):
            p.requires_grad_(flag)
    if down.shape != lr.shape:
        raise ValueError(
            f"degraded output {tuple(down.shape)} does not match LR {tuple(lr.shape)}"
        )
    return torch.mean(torch.abs(down - lr))


def loss_adv_g(i_sr, critic: torch.nn.Module) -> torch.Tensor:
    """Generator adversarial loss: negated mean critic score."""
    return -critic(_as_batch(i_sr)).mean()


def gradient_penalty(
    i_gt, i_sr, critic: torch.nn.Module, rng: torch.Generator | None = None
) -> torch.Tensor:
    """WGAN-GP penalty on per-sample random interpolates."""
    gt, sr = _as_batch(i_gt), _as_batch(i_sr)
    sr = sr.to(gt.dtype)
    eps = torch.rand((gt.shape[0], 1, 1, 1), generator=rng, dtype=gt.dtype)
    x_hat = (eps * gt.detach() + (1.0 - eps) * sr.detach()).requires_grad_(True)
    scores = critic(x_hat)
    if scores.grad_fn is None:  # score independent of the input: gradient is zero
        grads = torch.zeros_like(x_hat)
    else:
        grads = torch.autograd.grad(
            outputs=scores,
            inputs=x_hat,
            grad_outputs=torch.ones_like(scores),
            create_graph=True,
            allow_unused=True,
        )[0]
        if grads is None:
            grads = torch.zeros_like(x_hat)
    norms = grads.reshape(grads.shape[0], -1).norm(2, dim=1)
    return torch.mean((norms - 1.0) ** 2)


def loss_adv_d(
    i_gt, i_sr, critic: torch.nn.Module,
    gp_coef: float = 10.0, rng: torch.Generator | None = None,
) -> torch.Tensor:
    """Critic loss: mean score gap plus the gradient penalty."""
    gt, sr = _as_batch(i_gt), _as_batch(i_sr)
    data_term = critic(sr.detach()).mean() - critic(gt).mean()
    return data_term + gp_coef * gradient_penalty(gt, sr, critic, rng)


def total_loss(terms: dict, weights: LossWeights) -> LossReport:
    """Weighted sum of the five objective terms; keeps unweighted values."""
    values = {}
    for name in TERM_NAMES:
        val = terms.get(name, 0.0)
        val = float(val.detach()) if isinstance(val, torch.Tensor) else float(val)
        if not np.isfinite(val):
            raise NumericError(f"loss term {name!r} is not finite: {val}")
        values[name] = val
    total = sum(weights.weight(name) * values[name] for name in TERM_NAMES)
    return LossReport(total=total, **values)

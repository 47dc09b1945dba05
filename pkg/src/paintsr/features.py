"""Multi-level feature extraction and Gram statistics.

A pyramid level ``l`` (1..L) has spatial stride ``2**(L - l)`` relative to
the extractor input, so level L is full resolution. Extractors expose up to
four pyramid stages (strides 1, 2, 4, 8) plus one deeper stage (stride 16)
used only by the perceptual objective.

Two extractors are provided:

* ``Vgg19Extractor`` — the conv1_1..conv5_1 trunk of VGG-19, weights loaded
  from a local state-dict file (torchvision key layout). Taps: relu1_1,
  relu2_1, relu3_1, relu4_1 for the pyramid and relu5_1 for the perceptual
  stage.
* ``FallbackExtractor`` — a small random-but-frozen conv stack fully
  determined by an integer seed, for tests and machines without the weight
  file. Weight draws use a counter-based RNG in a documented order, so two
  processes given the same seed produce bit-identical features.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError
from .imaging import ImageTensor

PYRAMID_STAGES = 4  # strides 1, 2, 4, 8
FALLBACK_WIDTHS = (16, 32, 64, 128)
FALLBACK_PERCEPTUAL_WIDTH = 256
VGG_WIDTHS = (64, 128, 256, 512)


@dataclass(frozen=True)
class FeaturePyramid:
    """Per-level feature maps, channel-last numpy arrays."""

    levels: dict[int, np.ndarray]
    L: int
    extractor_id: str

    def __post_init__(self):
        base = None
        for l, feat in sorted(self.levels.items()):
            if feat.ndim != 3:
                raise ValueError(f"level {l} must be HxWxC, got {feat.shape}")
            stride = 2 ** (self.L - l)
            hw = (feat.shape[0] * stride, feat.shape[1] * stride)
            if base is None:
                base = hw
            elif hw != base:
                raise ValueError(
                    f"level {l} of shape {feat.shape[:2]} breaks the stride-{stride} rule"
                )

    def level(self, l: int) -> np.ndarray:
        if l not in self.levels:
            raise ValueError(f"level {l} not present (have {sorted(self.levels)})")
        return self.levels[l]


@dataclass(frozen=True)
class GramMatrix:
    """Channel inner-product matrix, normalized by spatial position count."""

    g: np.ndarray
    n_positions: int


def gram(feat: np.ndarray) -> GramMatrix:
    """g[i, j] = mean over positions p of feat[p, i] * feat[p, j]."""
    feat = np.asarray(feat, dtype=np.float64)
    if feat.ndim != 3 or feat.size == 0:
        raise ValueError(f"feature map must be non-empty HxWxC, got {feat.shape}")
    h, w, c = feat.shape
    flat = feat.reshape(h * w, c)
    g = flat.T @ flat / float(h * w)
    return GramMatrix(g=g, n_positions=h * w)


def gram_torch(feat: torch.Tensor) -> torch.Tensor:
    """Batched Gram of (B, C, H, W) features -> (B, C, C); differentiable."""
    b, c, h, w = feat.shape
    flat = feat.reshape(b, c, h * w)
    return flat @ flat.transpose(1, 2) / float(h * w)


def _image_to_batch(img: ImageTensor, dtype: torch.dtype) -> torch.Tensor:
    arr = img.data if isinstance(img, ImageTensor) else np.asarray(img)
    t = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))
    return t.unsqueeze(0).to(dtype)


class FeatureExtractor:
    """Common pyramid plumbing; subclasses provide the staged conv trunk."""

    extractor_id: str = "base"
    stage_channels: tuple[int, ...] = ()

    def stage_features(self, x: torch.Tensor, stages) -> dict[int, torch.Tensor]:
        """Feature maps for the requested stages (stride ``2**stage``)."""
        raise NotImplementedError

    def perceptual_features(self, x: torch.Tensor) -> torch.Tensor:
        """The deep (stride-16) map used by the perceptual objective."""
        raise NotImplementedError

    def level_channels(self, L: int, l: int) -> int:
        return self.stage_channels[L - l]

    def features_for_levels(
        self, x: torch.Tensor, levels, L: int
    ) -> dict[int, torch.Tensor]:
        levels = sorted(set(int(l) for l in levels))
        if not levels:
            raise ValueError("empty level set")
        if levels[0] < 1 or levels[-1] > L:
            raise ValueError(f"levels {levels} outside 1..{L}")
        deepest = L - levels[0]
        if deepest >= PYRAMID_STAGES:
            raise ValueError(
                f"level {levels[0]} needs stage {deepest}; extractor has {PYRAMID_STAGES}"
            )
        stride = 2**deepest
        if x.shape[-2] % stride or x.shape[-1] % stride:
            raise ValueError(
                f"input dims {tuple(x.shape[-2:])} not divisible by {stride}"
            )
        staged = self.stage_features(x, [L - l for l in levels])
        return {l: staged[L - l] for l in levels}

    def extract_pyramid(self, img: ImageTensor, levels, L: int) -> FeaturePyramid:
        """Deterministic channel-last pyramid of ``img`` at the given levels."""
        x = _image_to_batch(img, self.dtype)
        with torch.no_grad():
            feats = self.features_for_levels(x, levels, L)
        out = {
            l: f[0].permute(1, 2, 0).cpu().numpy().astype(np.float64)
            for l, f in feats.items()
        }
        return FeaturePyramid(levels=out, L=L, extractor_id=self.extractor_id)

    @property
    def dtype(self) -> torch.dtype:
        return torch.float32


class FallbackExtractor(FeatureExtractor):
    """Seeded random conv stack: 3x3 convs (replicate padding), ReLU, and
    stride-2 average pooling between stages.

    Weights are standard-normal draws from a Philox generator scaled by
    sqrt(2 / fan_in) so activation magnitudes stay comparable across stages;
    biases are zero. Draw order: stage 0 conv, stage 1 conv, ... stage 4
    (perceptual) conv, each C_out x C_in x 3 x 3 in C-order.
    """

    def __init__(self, seed: int = 0, dtype: torch.dtype = torch.float32):
        self.seed = int(seed)
        self._dtype = dtype
        self.extractor_id = f"fallback-seed{self.seed}"
        self.stage_channels = FALLBACK_WIDTHS
        rng = np.random.Generator(np.random.Philox(self.seed))
        widths = (3,) + FALLBACK_WIDTHS + (FALLBACK_PERCEPTUAL_WIDTH,)
        self._convs = []
        for i in range(len(widths) - 1):
            c_in, c_out = widths[i], widths[i + 1]
            w = rng.standard_normal((c_out, c_in, 3, 3), dtype=np.float64)
            w *= np.sqrt(2.0 / (9.0 * c_in))
            conv = nn.Conv2d(c_in, c_out, 3, padding=1, padding_mode="replicate")
            with torch.no_grad():
                conv.weight.copy_(torch.from_numpy(w))
                conv.bias.zero_()
            conv.requires_grad_(False)
            self._convs.append(conv.to(dtype))
        self._pool = nn.AvgPool2d(2)

    @property
    def dtype(self) -> torch.dtype:
        return self._dtype

    def _run_stages(self, x: torch.Tensor, last_stage: int) -> dict[int, torch.Tensor]:
        feats = {}
        for stage in range(last_stage + 1):
            if stage > 0 and min(x.shape[-2:]) >= 2:
                # pooling stops at 1x1 so deep taps exist even for tiny inputs
                x = self._pool(x)
            x = torch.relu(self._convs[stage](x))
            feats[stage] = x
        return feats

    def stage_features(self, x: torch.Tensor, stages) -> dict[int, torch.Tensor]:
        stages = sorted(set(stages))
        feats = self._run_stages(x, stages[-1])
        return {s: feats[s] for s in stages}

    def perceptual_features(self, x: torch.Tensor) -> torch.Tensor:
        return self._run_stages(x, PYRAMID_STAGES)[PYRAMID_STAGES]


# torchvision layout: features.<idx>.weight for the conv trunk.
_VGG_CONV_IDX = (0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28)
_VGG_CONV_PLAN = (
    (3, 64), (64, 64),
    (64, 128), (128, 128),
    (128, 256), (256, 256), (256, 256), (256, 256),
    (256, 512), (512, 512), (512, 512), (512, 512),
    (512, 512),
)
# pyramid taps after convs 0, 2, 4, 8 (relu1_1, relu2_1, relu3_1, relu4_1);
# perceptual tap after conv 12 (relu5_1). Pooling precedes convs 2, 4, 8, 12.
_VGG_STAGE_TAP = {0: 0, 1: 2, 2: 4, 3: 8, 4: 12}
_VGG_POOL_BEFORE = {2, 4, 8, 12}
_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


class Vgg19Extractor(FeatureExtractor):
    """VGG-19 conv trunk; requires a local weight file (torchvision keys)."""

    def __init__(self, weights_path, dtype: torch.dtype = torch.float32):
        path = Path(weights_path)
        if not path.exists():
            raise ConfigurationError(
                f"VGG-19 weight file not found: {path} "
                "(expected a torch state dict with torchvision 'features.*' keys)"
            )
        state = torch.load(path, map_location="cpu", weights_only=True)
        self._dtype = dtype
        self.extractor_id = f"vgg19:{path.name}"
        self.stage_channels = VGG_WIDTHS
        self._convs = []
        for (c_in, c_out), idx in zip(_VGG_CONV_PLAN, _VGG_CONV_IDX):
            conv = nn.Conv2d(c_in, c_out, 3, padding=1)
            try:
                with torch.no_grad():
                    conv.weight.copy_(state[f"features.{idx}.weight"])
                    conv.bias.copy_(state[f"features.{idx}.bias"])
            except KeyError as exc:
                raise ConfigurationError(
                    f"{path}: missing key {exc} (not a VGG-19 state dict?)"
                ) from exc
            conv.requires_grad_(False)
            self._convs.append(conv.to(dtype))
        self._pool = nn.MaxPool2d(2)
        mean = torch.tensor(_IMAGENET_MEAN, dtype=dtype).view(1, 3, 1, 1)
        std = torch.tensor(_IMAGENET_STD, dtype=dtype).view(1, 3, 1, 1)
        self._mean, self._std = mean, std

    @property
    def dtype(self) -> torch.dtype:
        return self._dtype

    def _run(self, x: torch.Tensor, taps: set[int]) -> dict[int, torch.Tensor]:
        x = (x - self._mean.to(x.dtype)) / self._std.to(x.dtype)
        out = {}
        last = max(taps)
        for i, conv in enumerate(self._convs):
            if i in _VGG_POOL_BEFORE and min(x.shape[-2:]) >= 2:
                x = self._pool(x)
            x = torch.relu(conv(x))
            if i in taps:
                out[i] = x
            if i >= last:
                break
        return out

    def stage_features(self, x: torch.Tensor, stages) -> dict[int, torch.Tensor]:
        stages = sorted(set(stages))
        taps = {_VGG_STAGE_TAP[s] for s in stages}
        run = self._run(x, taps)
        return {s: run[_VGG_STAGE_TAP[s]] for s in stages}

    def perceptual_features(self, x: torch.Tensor) -> torch.Tensor:
        return self._run(x, {_VGG_STAGE_TAP[PYRAMID_STAGES]})[_VGG_STAGE_TAP[PYRAMID_STAGES]]


def get_extractor(spec: str, dtype: torch.dtype = torch.float32) -> FeatureExtractor:
    """Build an extractor from a config string.

    ``fallback:<seed>`` or ``vgg19:<weights-path>``.
    """
    kind, _, arg = spec.partition(":")
    if kind == "fallback":
        return FallbackExtractor(seed=int(arg or 0), dtype=dtype)
    if kind == "vgg19":
        if not arg:
            raise ConfigurationError("vgg19 extractor needs a weight path: vgg19:<path>")
        return Vgg19Extractor(arg, dtype=dtype)
    raise ConfigurationError(f"unknown extractor spec: {spec!r}")


def extract_pyramid(
    img: ImageTensor, levels, extractor: FeatureExtractor, L: int
) -> FeaturePyramid:
    """Module-level convenience wrapper around ``extractor.extract_pyramid``."""
    return extractor.extract_pyramid(img, levels, L)

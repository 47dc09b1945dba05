"""Trainable components and their serializable parameter sets.

Four architectures:

* ``upscaler``   — image-to-feature upscaler: conv head, residual trunk with
  a long skip, then one sub-pixel (pixel-shuffle) 2x stage per octave of the
  scale factor. No normalization layers anywhere.
* ``fusion``     — fuses upscaled features with transferred reference
  features: residual branch over the channel concatenation, added back onto
  the upscaled features, then a single reconstruction conv to RGB.
* ``degrader``   — learned HR->LR mapping: one stride-2 conv stage per
  octave, then a conv to RGB.
* ``critic``     — WGAN critic: five stride-2 convs with width doubling from
  32, global average pooling, and a linear map to an unbounded scalar.

``generator`` is the composite of ``upscaler`` + ``fusion`` stored in one
parameter set with prefixed tensor names.

Checkpoints are single files in the shared container format (magic
``PSRCKPT1``), carrying arch id, config, version and a payload checksum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .container import read_container, write_container
from .errors import ConfigurationError
from .imaging import ColorSpace, ImageTensor, clamp01

CHECKPOINT_MAGIC = b"PSRCKPT1"
CHECKPOINT_VERSION = 1

_NORM_TYPES = (
    nn.modules.batchnorm._BatchNorm,
    nn.modules.instancenorm._InstanceNorm,
    nn.GroupNorm,
    nn.LayerNorm,
    nn.LocalResponseNorm,
)


@dataclass
class NetworkParams:
    """Opaque, serializable parameter set for one architecture."""

    arch_id: str
    config: dict
    state: dict[str, np.ndarray]
    version: int = CHECKPOINT_VERSION
    tags: dict = field(default_factory=dict)

    def require(self, arch_id: str) -> "NetworkParams":
        if self.arch_id != arch_id:
            raise ConfigurationError(
                f"expected {arch_id!r} parameters, got {self.arch_id!r}"
            )
        return self


class ResidualBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(torch.relu(self.conv1(x)))


class FeatureUpscaler(nn.Module):
    """LR image -> feature map at s times the resolution; no normalization."""

    def __init__(self, s: int, width: int = 64, n_blocks: int = 8, c_out: int = 64):
        super().__init__()
        if s < 2 or s & (s - 1):
            raise ConfigurationError(f"scale must be a power of two >= 2, got {s}")
        self.s = s
        self.head = nn.Conv2d(3, width, 3, padding=1)
        self.blocks = nn.ModuleList(ResidualBlock(width) for _ in range(n_blocks))
        self.trunk = nn.Conv2d(width, width, 3, padding=1)
        stages = []
        for _ in range(int(math.log2(s))):
            stages.append(nn.Conv2d(width, 4 * width, 3, padding=1))
            stages.append(nn.PixelShuffle(2))
            stages.append(nn.Conv2d(width, width, 3, padding=1))
        self.stages = nn.Sequential(*stages)
        self.out = nn.Conv2d(width, c_out, 3, padding=1)

    def forward(self, x):
        h = self.head(x)
        y = h
        for block in self.blocks:
            y = block(y)
        y = self.trunk(y) + h
        return self.out(self.stages(y))


class FusionHead(nn.Module):
    """Residual fusion of upscaled and transferred features, then RGB."""

    def __init__(self, c_ref: int, c_sr: int = 64, width: int = 64, n_blocks: int = 4):
        super().__init__()
        self.entry = nn.Conv2d(c_sr + c_ref, width, 3, padding=1)
        self.blocks = nn.ModuleList(ResidualBlock(width) for _ in range(n_blocks))
        self.exit = nn.Conv2d(width, c_sr, 3, padding=1)
        self.rec = nn.Conv2d(c_sr, 3, 3, padding=1)

    def residual_branch(self, f_sr, f_t):
        y = self.entry(torch.cat([f_sr, f_t], dim=1))
        for block in self.blocks:
            y = block(y)
        return self.exit(y)

    def forward(self, f_sr, f_t):
        return self.rec(self.residual_branch(f_sr, f_t) + f_sr)


class Generator(nn.Module):
    """Upscaler + fusion head trained as one unit."""

    def __init__(self, s: int, c_ref: int, width: int = 64, n_blocks: int = 8,
                 c_feat: int = 64, fusion_blocks: int = 4):
        super().__init__()
        self.upscaler = FeatureUpscaler(s, width=width, n_blocks=n_blocks, c_out=c_feat)
        self.fusion = FusionHead(c_ref, c_sr=c_feat, width=width, n_blocks=fusion_blocks)

    def forward(self, lr, f_t):
        f_sr = self.upscaler(lr)
        return self.fusion(f_sr, f_t)


class DegradationNet(nn.Module):
    """Learned HR -> LR mapping; one stride-2 stage per octave, no norm.

    Initialized so the first three channels of every stage carry a 2x2 box
    average and the head conv reads them back out: the untrained network is
    already a crude downscaler and optimization only refines it.
    """

    def __init__(self, s: int, base_width: int = 32, max_width: int = 64):
        super().__init__()
        if s < 2 or s & (s - 1):
            raise ConfigurationError(f"scale must be a power of two >= 2, got {s}")
        if base_width < 3:
            raise ConfigurationError("degrader width must be at least 3")
        self.s = s
        convs = []
        c_in = 3
        width = base_width
        for _ in range(int(math.log2(s))):
            convs.append(nn.Conv2d(c_in, width, 3, stride=2, padding=1))
            c_in, width = width, min(width * 2, max_width)
        self.convs = nn.ModuleList(convs)
        self.act = nn.LeakyReLU(0.2)
        self.out = nn.Conv2d(c_in, 3, 3, padding=1)
        with torch.no_grad():
            for conv in self.convs:
                conv.weight *= 0.25
                for ch in range(3):
                    conv.weight[ch].zero_()
                    conv.weight[ch, ch, 1:, 1:] = 0.25
                conv.bias.zero_()
            self.out.weight *= 0.25
            for ch in range(3):
                self.out.weight[ch].zero_()
                self.out.weight[ch, ch, 1, 1] = 1.0
            self.out.bias.zero_()

    def forward(self, x):
        for conv in self.convs:
            x = self.act(conv(x))
        return self.out(x)


class Critic(nn.Module):
    """WGAN critic: unbounded scalar score, no sigmoid, no normalization."""

    def __init__(self, base_width: int = 32, n_stages: int = 5):
        super().__init__()
        stages = []
        c_in = 3
        width = base_width
        for _ in range(n_stages):
            stages.append(nn.Conv2d(c_in, width, 3, stride=2, padding=1))
            stages.append(nn.LeakyReLU(0.2))
            c_in, width = width, width * 2
        self.stages = nn.Sequential(*stages)
        self.fc = nn.Linear(c_in, 1)

    def forward(self, x):
        y = self.stages(x)
        y = y.mean(dim=(2, 3))
        return self.fc(y).squeeze(1)


_DEFAULTS = {
    "upscaler": {"s": 8, "width": 64, "n_blocks": 8, "c_out": 64},
    "fusion": {"c_ref": 16, "c_sr": 64, "width": 64, "n_blocks": 4},
    "generator": {"s": 8, "c_ref": 16, "width": 64, "n_blocks": 8,
                  "c_feat": 64, "fusion_blocks": 4},
    "degrader": {"s": 8, "base_width": 32, "max_width": 64},
    "critic": {"base_width": 32, "n_stages": 5},
}

_ARCHS = {
    "upscaler": FeatureUpscaler,
    "fusion": FusionHead,
    "generator": Generator,
    "degrader": DegradationNet,
    "critic": Critic,
}


def _construct(arch_id: str, config: dict) -> nn.Module:
    if arch_id not in _ARCHS:
        raise ConfigurationError(f"unknown architecture {arch_id!r}")
    cfg = dict(_DEFAULTS[arch_id])
    unknown = set(config) - set(cfg)
    if unknown:
        raise ConfigurationError(f"{arch_id}: unknown config keys {sorted(unknown)}")
    cfg.update(config)
    return _ARCHS[arch_id](**cfg)


def init_params(arch_id: str, config: dict | None = None, seed: int = 0) -> NetworkParams:
    """Seeded default initialization for an architecture."""
    config = dict(config or {})
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        module = _construct(arch_id, config)
    return params_from_module(module, arch_id, config)


def params_from_module(module: nn.Module, arch_id: str, config: dict) -> NetworkParams:
    state = {
        k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()
    }
    return NetworkParams(arch_id=arch_id, config=dict(config), state=state)


def build_module(params: NetworkParams, dtype: torch.dtype = torch.float32) -> nn.Module:
    """Reconstruct the torch module for a parameter set."""
    module = _construct(params.arch_id, params.config)
    tensors = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in params.state.items()}
    missing = set(module.state_dict()) ^ set(tensors)
    if missing:
        raise ConfigurationError(
            f"{params.arch_id}: parameter names do not match architecture: {sorted(missing)}"
        )
    module.load_state_dict(tensors)
    return module.to(dtype)


def assert_no_normalization(module: nn.Module) -> None:
    """Structural guarantee that a module contains no normalization layers."""
    for m in module.modules():
        if isinstance(m, _NORM_TYPES):
            raise ConfigurationError(f"normalization layer found: {type(m).__name__}")


def save_params(params: NetworkParams, path) -> None:
    meta = {
        "kind": "network_params",
        "arch_id": params.arch_id,
        "config": params.config,
        "version": params.version,
        "tags": params.tags,
    }
    write_container(path, CHECKPOINT_MAGIC, meta, params.state)


def load_params(path) -> NetworkParams:
    meta, arrays = read_container(path, CHECKPOINT_MAGIC)
    if meta.get("kind") != "network_params":
        raise ConfigurationError(f"{path}: not a network checkpoint")
    return NetworkParams(
        arch_id=meta["arch_id"],
        config=meta["config"],
        state=arrays,
        version=int(meta["version"]),
        tags=meta.get("tags", {}),
    )


def split_generator(params: NetworkParams) -> tuple[NetworkParams, NetworkParams]:
    """Split composite generator parameters into upscaler and fusion sets."""
    params.require("generator")
    cfg = dict(_DEFAULTS["generator"])
    cfg.update(params.config)
    up_cfg = {"s": cfg["s"], "width": cfg["width"], "n_blocks": cfg["n_blocks"],
              "c_out": cfg["c_feat"]}
    fu_cfg = {"c_ref": cfg["c_ref"], "c_sr": cfg["c_feat"], "width": cfg["width"],
              "n_blocks": cfg["fusion_blocks"]}
    up_state = {k[len("upscaler."):]: v for k, v in params.state.items()
                if k.startswith("upscaler.")}
    fu_state = {k[len("fusion."):]: v for k, v in params.state.items()
                if k.startswith("fusion.")}
    return (
        NetworkParams("upscaler", up_cfg, up_state, params.version),
        NetworkParams("fusion", fu_cfg, fu_state, params.version),
    )


def _to_batch(img: ImageTensor, dtype=torch.float32) -> torch.Tensor:
    arr = np.ascontiguousarray(img.data.transpose(2, 0, 1))
    return torch.from_numpy(arr).unsqueeze(0).to(dtype)


def upscale_features(lr: ImageTensor, params: NetworkParams) -> np.ndarray:
    """Run the feature upscaler; returns an (sH, sW, C_f) channel-last map."""
    params.require("upscaler")
    module = build_module(params)
    with torch.no_grad():
        out = module(_to_batch(lr))
    return out[0].permute(1, 2, 0).numpy().astype(np.float64)


def fuse_reconstruct(
    f_sr: np.ndarray, f_t, params: NetworkParams, clamp: bool = True
) -> ImageTensor:
    """Fuse features and reconstruct RGB. ``clamp`` only at inference."""
    params.require("fusion")
    data = f_t if isinstance(f_t, np.ndarray) else f_t.data
    if f_sr.shape[:2] != data.shape[:2]:
        raise ValueError(
            f"spatial mismatch: f_sr {f_sr.shape[:2]} vs f_t {data.shape[:2]}"
        )
    module = build_module(params)
    a = torch.from_numpy(np.ascontiguousarray(f_sr.transpose(2, 0, 1))).unsqueeze(0).float()
    b = torch.from_numpy(np.ascontiguousarray(data.transpose(2, 0, 1))).unsqueeze(0).float()
    with torch.no_grad():
        out = module(a, b)[0].permute(1, 2, 0).numpy().astype(np.float64)
    return ImageTensor(clamp01(out) if clamp else out, ColorSpace.RGB)


def degrade_net(img: ImageTensor, params: NetworkParams) -> ImageTensor:
    """Apply the learned degradation network; output (H/s, W/s, 3)."""
    params.require("degrader")
    s = int(params.config.get("s", _DEFAULTS["degrader"]["s"]))
    if img.height % s or img.width % s:
        raise ValueError(f"image dims {img.height}x{img.width} not divisible by {s}")
    module = build_module(params)
    with torch.no_grad():
        out = module(_to_batch(img))[0].permute(1, 2, 0).numpy().astype(np.float64)
    return ImageTensor(clamp01(out), ColorSpace.RGB)


def discriminate(img: ImageTensor, params: NetworkParams) -> float:
    """Critic score; unbounded real."""
    params.require("critic")
    module = build_module(params)
    with torch.no_grad():
        return float(module(_to_batch(img))[0])

"""Training phases and the end-to-end super-resolution pipeline.

Three phases, run in order:

1. ``train_degrader``      — fit the learned HR->LR network on (hr, lr)
   pairs with Adam; returns the best-validation parameters.
2. ``pretrain_generator``  — reconstruction + texture objectives only.
3. ``train_full``          — all five objectives with alternating critic /
   generator updates (WGAN-GP); the degrader stays frozen throughout.

Everything is deterministic for a fixed config: seeds are set at phase
entry, the batch order is a pure function of (seed, phase, epoch), and the
gradient-penalty draws come from the global torch generator whose state is
captured in session checkpoints, so a resumed run replays the exact
trajectory of an uninterrupted one.

Matching and transfer are computed per triple at load time and cached,
in memory and optionally on disk keyed by content hash and extractor id.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses, matching, networks
from .dataset import TrainingTriple
from .errors import ConfigurationError, NumericError, TrainingError
from .features import FeatureExtractor, get_extractor
from .imaging import ColorSpace, ImageTensor, bicubic_resize, clamp01, down_up
from .losses import LossWeights
from .networks import NetworkParams

log = logging.getLogger(__name__)

SESSION_MAGIC = b"PSRSESS1"
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Declarative description of one training run."""

    s: int = 8
    batch_size: int = 4
    seed: int = 0
    lr_rate: float = 1e-4
    pretrain_epochs: int = 2
    full_epochs: int = 20
    deg_epochs: int = 2
    critic_steps_per_gen: int = 1
    critic_warmup_steps: int = 5
    critic_warmup_until: int = 500
    weights: LossWeights = field(default_factory=LossWeights)
    extractor: str = "fallback:77"
    patch_size: int = 3
    match_stride: int = 1
    tex_levels: tuple[int, ...] | None = None  # None -> (L-2, L-1, L)
    symmetric_hh_targets: bool = False
    gen_width: int = 64
    gen_blocks: int = 8
    gen_feat: int = 64
    fusion_blocks: int = 4
    deg_width: int = 32
    critic_width: int = 32
    deterministic: bool = True
    cache_dir: str | None = None

    def __post_init__(self):
        if self.s < 2 or self.s & (self.s - 1):
            raise ValueError(f"s must be a power of two >= 2, got {self.s}")
        for name in ("pretrain_epochs", "full_epochs", "deg_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def L(self) -> int:
        return int(math.log2(self.s))

    @property
    def match_level(self) -> int:
        return self.L - 2

    @property
    def texture_levels(self) -> tuple[int, ...]:
        if self.tex_levels is not None:
            return tuple(self.tex_levels)
        return (self.L - 2, self.L - 1, self.L)

    def n_critic(self, gen_step: int) -> int:
        if self.critic_steps_per_gen == 0:
            return 0
        if gen_step < self.critic_warmup_until:
            return self.critic_warmup_steps
        return self.critic_steps_per_gen


@dataclass
class TrainResult:
    params: NetworkParams
    history: list[dict]
    critic: NetworkParams | None = None


def seed_everything(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)


def _phase_seed(seed: int, phase: str) -> int:
    h = hashlib.sha256(f"{seed}|{phase}".encode()).digest()
    return int.from_bytes(h[:8], "little") % 2**63


def _epoch_order(seed: int, phase: str, epoch: int, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=[_phase_seed(seed, phase), epoch]))
    return rng.permutation(n)


def _chw(img: ImageTensor, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.data.transpose(2, 0, 1))).to(dtype)


def _append_log(log_path, record: dict) -> None:
    if log_path is None:
        return
    with open(log_path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _atomic_save(save_fn, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    save_fn(tmp)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Matching/transfer preparation and cache
# ---------------------------------------------------------------------------


@dataclass
class PreparedTriple:
    """Per-triple constants for the generator phases."""

    lr: torch.Tensor  # (3, h, w)
    hr: torch.Tensor  # (3, H, W)
    f_t: torch.Tensor  # (C_ref, H, W), no gradient ever flows into this
    gram_targets: dict[int, np.ndarray]


def _triple_cache_key(triple: TrainingTriple, cfg: TrainConfig, extractor_id: str) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(triple.lr.data).tobytes())
    h.update(np.ascontiguousarray(triple.ref.data).tobytes())
    tag = (
        f"{cfg.s}|{extractor_id}|{cfg.patch_size}|{cfg.match_stride}"
        f"|{cfg.texture_levels}|{cfg.symmetric_hh_targets}|{cfg.weights.w_tex != 0}"
    )
    h.update(tag.encode())
    return h.hexdigest()


def compute_match(
    lr: ImageTensor, ref: ImageTensor, cfg: TrainConfig, extractor: FeatureExtractor
) -> matching.MatchMap:
    """Frequency-matched coarse-level patch match between input and reference."""
    L = cfg.L
    if ref.height % cfg.s or ref.width % cfg.s:
        raise ValueError(
            f"reference dims {ref.height}x{ref.width} not divisible by s={cfg.s}; "
            "crop first"
        )
    min_ref = cfg.patch_size * 4
    if ref.height < min_ref or ref.width < min_ref:
        raise ValueError(
            f"reference {ref.height}x{ref.width} too small to tile the target; "
            f"needs at least {min_ref}x{min_ref}"
        )
    lr_up = bicubic_resize(lr, cfg.s)
    ref_du = down_up(ref, cfg.s)
    query = extractor.extract_pyramid(lr_up, [L - 2], L).level(L - 2)
    refmap = extractor.extract_pyramid(ref_du, [L - 2], L).level(L - 2)
    return matching.match_features(
        query, refmap, cfg.patch_size, cfg.match_stride, level=L - 2
    )


def prepare_triple(
    triple: TrainingTriple, cfg: TrainConfig, extractor: FeatureExtractor
) -> PreparedTriple:
    L = cfg.L
    match = compute_match(triple.lr, triple.ref, cfg, extractor)
    want_tex = cfg.weights.w_tex != 0
    levels = set(cfg.texture_levels) | {L} if want_tex else {L}
    if cfg.symmetric_hh_targets and want_tex:
        ref_pyr = extractor.extract_pyramid(triple.ref, [L], L)
        hh = wavelet_hh_image(triple.ref)
        hh_pyr = extractor.extract_pyramid(hh, sorted(set(cfg.texture_levels)), L)
        targets = losses.texture_gram_targets(
            hh_pyr, match, cfg.texture_levels, symmetric_hh=True
        )
    else:
        ref_pyr = extractor.extract_pyramid(triple.ref, sorted(levels), L)
        targets = (
            losses.texture_gram_targets(ref_pyr, match, cfg.texture_levels)
            if want_tex
            else {}
        )
    f_t = matching.transfer_at_level(ref_pyr, match, L)
    return PreparedTriple(
        lr=_chw(triple.lr),
        hr=_chw(triple.hr),
        f_t=torch.from_numpy(f_t.data.transpose(2, 0, 1).copy()).float(),
        gram_targets=targets,
    )


def wavelet_hh_image(img: ImageTensor) -> ImageTensor:
    """Remapped HH band of an image, ready for the feature extractor."""
    from . import wavelet

    hh = wavelet.extract_hh(img)
    return ImageTensor(wavelet.remap_hh(hh.data), img.color_space)


class TripleBank:
    """Prepared triples with an in-memory and optional on-disk cache."""

    def __init__(self, triples, cfg: TrainConfig, extractor: FeatureExtractor):
        self.cfg = cfg
        self.extractor = extractor
        self.triples = list(triples)
        if not self.triples:
            raise ValueError("empty triple set")
        self._prepared: dict[int, PreparedTriple] = {}
        self._disk = Path(cfg.cache_dir) if cfg.cache_dir else None
        if self._disk is not None:
            self._disk.mkdir(parents=True, exist_ok=True)

    def __len__(self) -> int:
        return len(self.triples)

    def get(self, i: int) -> PreparedTriple:
        if i not in self._prepared:
            self._prepared[i] = self._load(self.triples[i])
        return self._prepared[i]

    def _load(self, triple: TrainingTriple) -> PreparedTriple:
        if self._disk is None:
            return prepare_triple(triple, self.cfg, self.extractor)
        key = _triple_cache_key(triple, self.cfg, self.extractor.extractor_id)
        path = self._disk / f"{key}.npz"
        if path.exists():
            with np.load(path) as blob:
                return PreparedTriple(
                    lr=torch.from_numpy(blob["lr"]),
                    hr=torch.from_numpy(blob["hr"]),
                    f_t=torch.from_numpy(blob["f_t"]),
                    gram_targets={
                        int(k[5:]): blob[k] for k in blob.files if k.startswith("gram_")
                    },
                )
        prep = prepare_triple(triple, self.cfg, self.extractor)
        arrays = {
            "lr": prep.lr.numpy(),
            "hr": prep.hr.numpy(),
            "f_t": prep.f_t.numpy(),
        }
        arrays.update({f"gram_{l}": g for l, g in prep.gram_targets.items()})
        tmp = path.with_name(path.name + ".tmp.npz")
        np.savez(tmp, **arrays)
        os.replace(tmp, path)
        return prep

    def batch(self, indices) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, dict]:
        items = [self.get(int(i)) for i in indices]
        lr = torch.stack([it.lr for it in items])
        hr = torch.stack([it.hr for it in items])
        f_t = torch.stack([it.f_t for it in items])
        levels = sorted(items[0].gram_targets)
        targets = {
            l: np.stack([it.gram_targets[l] for it in items]) for l in levels
        }
        return lr, hr, f_t, targets


# ---------------------------------------------------------------------------
# Degradation network training
# ---------------------------------------------------------------------------


def train_degrader(
    pairs,
    cfg: TrainConfig,
    max_steps: int | None = None,
    log_path=None,
) -> TrainResult:
    """Fit the HR->LR degrader with Adam; returns the best-validation params.

    ``pairs`` is a sequence of (hr, lr) ``ImageTensor`` tuples. With
    ``max_steps`` set, epochs cycle until the step budget is spent.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty pair set")
    seed_everything(_phase_seed(cfg.seed, "degrader"), cfg.deterministic)
    config = {"s": cfg.s, "base_width": cfg.deg_width}
    params = networks.init_params("degrader", config, seed=_phase_seed(cfg.seed, "deg-init"))
    total_steps = _phase_steps(len(pairs), cfg.batch_size, cfg.deg_epochs, max_steps)
    if total_steps == 0:
        return TrainResult(params=params, history=[])

    n_val = max(1, len(pairs) // 10) if len(pairs) >= 5 else 0
    order = _epoch_order(cfg.seed, "deg-split", 0, len(pairs))
    val_idx = set(order[:n_val].tolist())
    train_items = [pairs[i] for i in range(len(pairs)) if i not in val_idx]
    val_items = [pairs[i] for i in sorted(val_idx)]
    if not train_items:
        train_items, val_items = pairs, []

    hr_all = torch.stack([_chw(hr) for hr, _ in train_items])
    lr_all = torch.stack([_chw(lr) for _, lr in train_items])
    module = networks.build_module(params)
    opt = torch.optim.Adam(module.parameters(), lr=cfg.lr_rate, betas=ADAM_BETAS, eps=ADAM_EPS)

    def validation_l1() -> float:
        if not val_items:
            return float("nan")
        with torch.no_grad():
            tot = 0.0
            for hr, lr in val_items:
                out = module(_chw(hr).unsqueeze(0))
                tot += float(torch.mean(torch.abs(out - _chw(lr).unsqueeze(0))))
        return tot / len(val_items)

    history: list[dict] = []
    best_val = math.inf
    best_state = {k: v.detach().clone() for k, v in module.state_dict().items()}
    step = 0
    epoch = 0
    while step < total_steps:
        order = _epoch_order(cfg.seed, "degrader", epoch, len(train_items))
        for start in range(0, len(train_items), cfg.batch_size):
            if step >= total_steps:
                break
            idx = order[start : start + cfg.batch_size]
            hr_b, lr_b = hr_all[idx], lr_all[idx]
            out = module(hr_b)
            loss = torch.mean(torch.abs(out - lr_b))
            value = float(loss.detach())
            if not np.isfinite(value):
                raise TrainingError(f"degrader loss diverged (non-finite) at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            record = {"step": step, "phase": "degrader", "l1": value,
                      "wall_time": time.time()}
            history.append(record)
            _append_log(log_path, record)
            step += 1
        epoch += 1
        val = validation_l1()
        if val_items and val < best_val:
            best_val = val
            best_state = {k: v.detach().clone() for k, v in module.state_dict().items()}
    if not val_items:
        best_state = module.state_dict()
    module.load_state_dict(best_state)
    return TrainResult(
        params=networks.params_from_module(module, "degrader", config),
        history=history,
    )


def _phase_steps(n_items: int, batch: int, epochs: int, max_steps: int | None) -> int:
    per_epoch = math.ceil(n_items / batch)
    budget = per_epoch * epochs
    if max_steps is not None:
        return max_steps
    return budget


# ---------------------------------------------------------------------------
# Generator phases
# ---------------------------------------------------------------------------


def _generator_config(cfg: TrainConfig, extractor: FeatureExtractor) -> dict:
    return {
        "s": cfg.s,
        "c_ref": extractor.level_channels(cfg.L, cfg.L),
        "width": cfg.gen_width,
        "n_blocks": cfg.gen_blocks,
        "c_feat": cfg.gen_feat,
        "fusion_blocks": cfg.fusion_blocks,
    }


def _check_generator_config(params: NetworkParams, cfg: TrainConfig,
                            extractor: FeatureExtractor) -> None:
    params.require("generator")
    want = _generator_config(cfg, extractor)
    got = dict(want)
    got.update(params.config)
    if got["s"] != cfg.s:
        raise ConfigurationError(
            f"generator trained for s={got['s']}, config requests s={cfg.s}"
        )
    if got["c_ref"] != want["c_ref"]:
        raise ConfigurationError(
            f"generator expects {got['c_ref']} reference channels, extractor "
            f"{extractor.extractor_id} provides {want['c_ref']}"
        )


def _gen_step_losses(
    module, batch, cfg: TrainConfig, extractor, degrader_module, critic_module,
    phase: str,
) -> tuple[torch.Tensor, dict]:
    lr_b, hr_b, ft_b, targets = batch
    w = cfg.weights
    sr = module(lr_b, ft_b)
    terms: dict[str, torch.Tensor] = {}
    terms["rec"] = losses.loss_rec(sr, hr_b)
    if w.w_tex != 0 and targets:
        terms["tex"] = losses.loss_tex_from_targets(sr, targets, w, extractor, cfg.L)
    if phase == "full":
        if w.w_deg != 0 and degrader_module is not None:
            terms["deg"] = losses.loss_deg(sr, lr_b, degrader_module)
        if w.w_per != 0:
            terms["per"] = losses.loss_per(sr, hr_b, extractor)
        if w.w_adv != 0 and critic_module is not None:
            terms["adv"] = losses.loss_adv_g(sr, critic_module)
    total = sr.new_zeros(())
    for name, val in terms.items():
        total = total + w.weight(name) * val
    return total, terms


def _run_generator_phase(
    phase: str,
    bank: TripleBank,
    cfg: TrainConfig,
    gen_module,
    extractor,
    degrader_module=None,
    critic_module=None,
    opt_g=None,
    opt_d=None,
    max_steps: int | None = None,
    out_dir=None,
    log_path=None,
    start_step: int = 0,
    session_every: int = 0,
    history: list[dict] | None = None,
) -> list[dict]:
    epochs = cfg.pretrain_epochs if phase == "pretrain" else cfg.full_epochs
    total_steps = _phase_steps(len(bank), cfg.batch_size, epochs, max_steps)
    history = history if history is not None else []
    step = start_step
    per_epoch = math.ceil(len(bank) / cfg.batch_size)
    while step < total_steps:
        epoch = step // per_epoch
        order = _epoch_order(cfg.seed, phase, epoch, len(bank))
        pos = (step % per_epoch) * cfg.batch_size
        for start in range(pos, len(bank), cfg.batch_size):
            if step >= total_steps:
                break
            batch = bank.batch(order[start : start + cfg.batch_size])
            if phase == "full" and critic_module is not None:
                for _ in range(cfg.n_critic(step)):
                    with torch.no_grad():
                        sr_fixed = gen_module(batch[0], batch[2])
                    d_loss = losses.loss_adv_d(
                        batch[1], sr_fixed, critic_module, cfg.weights.gp_coef
                    )
                    if not torch.isfinite(d_loss):
                        raise TrainingError(f"critic loss non-finite at step {step}")
                    opt_d.zero_grad()
                    d_loss.backward()
                    opt_d.step()
            total, terms = _gen_step_losses(
                gen_module, batch, cfg, extractor, degrader_module, critic_module, phase
            )
            try:
                report = losses.total_loss(terms, cfg.weights)
            except NumericError as exc:
                raise TrainingError(f"step {step}: {exc}") from exc
            opt_g.zero_grad()
            total.backward()
            opt_g.step()
            record = {"step": step, "phase": phase, **report.as_dict(),
                      "wall_time": time.time()}
            history.append(record)
            _append_log(log_path, record)
            step += 1
            if session_every and out_dir is not None and step % session_every == 0:
                _save_session(out_dir, phase, step, cfg, gen_module, critic_module,
                              opt_g, opt_d, extractor)
        finished_epoch = step // per_epoch
        if out_dir is not None and step % per_epoch == 0 and step > 0:
            params = networks.params_from_module(
                gen_module, "generator", _generator_config(cfg, extractor)
            )
            params.tags = {"phase": phase, "epoch": finished_epoch}
            _atomic_save(
                lambda p: networks.save_params(params, p),
                Path(out_dir) / f"{phase}_epoch{finished_epoch}.ckpt",
            )
    return history


def pretrain_generator(
    triples,
    cfg: TrainConfig,
    degrader: NetworkParams,
    extractor: FeatureExtractor | None = None,
    max_steps: int | None = None,
    out_dir=None,
    log_path=None,
) -> TrainResult:
    """Phase 2: optimize the generator on reconstruction + texture terms."""
    degrader.require("degrader")
    extractor = extractor or get_extractor(cfg.extractor)
    seed_everything(_phase_seed(cfg.seed, "pretrain"), cfg.deterministic)
    bank = TripleBank(triples, cfg, extractor)
    gen_config = _generator_config(cfg, extractor)
    params = networks.init_params(
        "generator", gen_config, seed=_phase_seed(cfg.seed, "gen-init")
    )
    total = _phase_steps(len(bank), cfg.batch_size, cfg.pretrain_epochs, max_steps)
    if total == 0:
        return TrainResult(params=params, history=[])
    module = networks.build_module(params)
    opt_g = torch.optim.Adam(module.parameters(), lr=cfg.lr_rate,
                             betas=ADAM_BETAS, eps=ADAM_EPS)
    history = _run_generator_phase(
        "pretrain", bank, cfg, module, extractor,
        opt_g=opt_g, max_steps=max_steps, out_dir=out_dir, log_path=log_path,
    )
    return TrainResult(
        params=networks.params_from_module(module, "generator", gen_config),
        history=history,
    )


def train_full(
    triples,
    cfg: TrainConfig,
    degrader: NetworkParams,
    init: NetworkParams,
    extractor: FeatureExtractor | None = None,
    max_steps: int | None = None,
    out_dir=None,
    log_path=None,
    session_every: int = 0,
    resume_from=None,
) -> TrainResult:
    """Phase 3: adversarial training with all objectives; degrader frozen."""
    degrader.require("degrader")
    extractor = extractor or get_extractor(cfg.extractor)
    _check_generator_config(init, cfg, extractor)
    seed_everything(_phase_seed(cfg.seed, "full"), cfg.deterministic)
    bank = TripleBank(triples, cfg, extractor)
    gen_module = networks.build_module(init)
    degrader_module = networks.build_module(degrader)
    degrader_module.requires_grad_(False)
    critic_config = {"base_width": cfg.critic_width}
    critic_params = networks.init_params(
        "critic", critic_config, seed=_phase_seed(cfg.seed, "critic-init")
    )
    critic_module = networks.build_module(critic_params)
    opt_g = torch.optim.Adam(gen_module.parameters(), lr=cfg.lr_rate,
                             betas=ADAM_BETAS, eps=ADAM_EPS)
    opt_d = torch.optim.Adam(critic_module.parameters(), lr=cfg.lr_rate,
                             betas=ADAM_BETAS, eps=ADAM_EPS)
    start_step = 0
    history: list[dict] = []
    if resume_from is not None:
        start_step = _load_session(
            resume_from, "full", cfg, gen_module, critic_module, opt_g, opt_d
        )
    history = _run_generator_phase(
        "full", bank, cfg, gen_module, extractor,
        degrader_module=degrader_module, critic_module=critic_module,
        opt_g=opt_g, opt_d=opt_d, max_steps=max_steps, out_dir=out_dir,
        log_path=log_path, start_step=start_step, session_every=session_every,
        history=history,
    )
    gen_params = networks.params_from_module(
        gen_module, "generator", _generator_config(cfg, extractor)
    )
    return TrainResult(
        params=gen_params,
        history=history,
        critic=networks.params_from_module(critic_module, "critic", critic_config),
    )


# ---------------------------------------------------------------------------
# Session checkpoints (resumable training state)
# ---------------------------------------------------------------------------


def _opt_arrays(opt, prefix: str) -> dict[str, np.ndarray]:
    arrays = {}
    for idx, st in opt.state_dict()["state"].items():
        for name, val in st.items():
            arr = val.detach().cpu().numpy() if torch.is_tensor(val) else np.asarray(val)
            arrays[f"{prefix}/{idx}/{name}"] = arr
    return arrays


def _restore_opt(opt, arrays: dict[str, np.ndarray], prefix: str) -> None:
    state: dict[int, dict] = {}
    for key, arr in arrays.items():
        if not key.startswith(prefix + "/"):
            continue
        _, idx, name = key.split("/", 2)
        state.setdefault(int(idx), {})[name] = torch.from_numpy(arr.copy())
    if not state:
        return
    sd = opt.state_dict()
    sd["state"] = state
    opt.load_state_dict(sd)


def _save_session(out_dir, phase, step, cfg, gen_module, critic_module,
                  opt_g, opt_d, extractor) -> None:
    from .container import write_container

    arrays: dict[str, np.ndarray] = {}
    for k, v in gen_module.state_dict().items():
        arrays[f"gen/{k}"] = v.detach().cpu().numpy()
    if critic_module is not None:
        for k, v in critic_module.state_dict().items():
            arrays[f"critic/{k}"] = v.detach().cpu().numpy()
    arrays.update(_opt_arrays(opt_g, "optg"))
    if opt_d is not None:
        arrays.update(_opt_arrays(opt_d, "optd"))
    arrays["rng/torch"] = torch.get_rng_state().numpy()
    meta = {
        "kind": "train_session",
        "phase": phase,
        "step": step,
        "seed": cfg.seed,
        "s": cfg.s,
        "gen_config": _generator_config(cfg, extractor),
    }
    path = Path(out_dir) / f"session_{phase}_step{step}.ckpt"
    _atomic_save(lambda p: write_container(p, SESSION_MAGIC, meta, arrays), path)


def _load_session(path, phase, cfg, gen_module, critic_module, opt_g, opt_d) -> int:
    from .container import read_container

    meta, arrays = read_container(path, SESSION_MAGIC)
    if meta.get("kind") != "train_session":
        raise ConfigurationError(f"{path}: not a training session checkpoint")
    if meta.get("phase") != phase:
        raise ConfigurationError(
            f"{path}: session is for phase {meta.get('phase')!r}, expected {phase!r}"
        )
    gen_state = {k[4:]: torch.from_numpy(v.copy())
                 for k, v in arrays.items() if k.startswith("gen/")}
    gen_module.load_state_dict(gen_state)
    if critic_module is not None:
        critic_state = {k[7:]: torch.from_numpy(v.copy())
                        for k, v in arrays.items() if k.startswith("critic/")}
        if critic_state:
            critic_module.load_state_dict(critic_state)
    _restore_opt(opt_g, arrays, "optg")
    if opt_d is not None:
        _restore_opt(opt_d, arrays, "optd")
    torch.set_rng_state(torch.from_numpy(arrays["rng/torch"].copy()))
    return int(meta["step"])


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def super_resolve(
    lr: ImageTensor,
    ref: ImageTensor,
    gen: NetworkParams,
    cfg: TrainConfig,
    extractor: FeatureExtractor | None = None,
) -> ImageTensor:
    """Full pipeline: match at the coarse level, transfer at the fine level,
    upscale, fuse and reconstruct. Output is clamped RGB at ``s`` times the
    input resolution.
    """
    extractor = extractor or get_extractor(cfg.extractor)
    _check_generator_config(gen, cfg, extractor)
    L = cfg.L
    match = compute_match(lr, ref, cfg, extractor)
    ref_pyr = extractor.extract_pyramid(ref, [L], L)
    f_t = matching.transfer_at_level(ref_pyr, match, L)
    module = networks.build_module(gen)
    lr_t = _chw(lr).unsqueeze(0)
    ft_t = torch.from_numpy(f_t.data.transpose(2, 0, 1).copy()).float().unsqueeze(0)
    with torch.no_grad():
        sr = module(lr_t, ft_t)
    out = sr[0].permute(1, 2, 0).numpy().astype(np.float64)
    return ImageTensor(clamp01(out), ColorSpace.RGB)

"""Command-line interface.

Subcommands: ``prepare-data``, ``train-degradation``, ``train``,
``super-resolve``, ``evaluate``. Every command accepts ``--config`` (a YAML
mapping of flag names to values) and ``--seed``; explicit flags override the
config file, which overrides built-in defaults. Each run prints its fully
resolved configuration so it can be reproduced exactly.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import sys
from pathlib import Path

import yaml

from . import __version__, dataset, metrics, networks, training
from .errors import ConfigurationError, FormatError, PaintSRError
from .features import get_extractor
from .imaging import crop_aligned, load_image, save_image
from .losses import LossWeights

_USAGE_ERRORS = (ConfigurationError, FileNotFoundError, ValueError, FormatError)


def _echo_config(name: str, values: dict) -> None:
    print(f"# effective-config ({name})")
    for key in sorted(values):
        print(f"{key}: {values[key]}")
    print("# end-config")


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    resolved = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"{path}: config must be a mapping")
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ConfigurationError(f"{path}: unknown config keys {sorted(unknown)}")
        resolved.update(loaded)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            resolved[key] = val
    return resolved


def _train_config(res: dict) -> training.TrainConfig:
    weights = LossWeights(**res.get("weights", {})) if isinstance(res.get("weights"), dict) \
        else LossWeights()
    return training.TrainConfig(
        s=int(res["scale"]),
        batch_size=int(res["batch_size"]),
        seed=int(res["seed"]),
        lr_rate=float(res["lr_rate"]),
        pretrain_epochs=int(res.get("epochs_pretrain", 2)),
        full_epochs=int(res.get("epochs_full", 20)),
        critic_steps_per_gen=int(res.get("critic_steps", 1)),
        weights=weights,
        extractor=str(res["extractor"]),
        cache_dir=res.get("cache_dir"),
    )


# ---------------------------------------------------------------------------
# prepare-data
# ---------------------------------------------------------------------------

_PREPARE_DEFAULTS = {
    "manifest": None,
    "out_dir": None,
    "scale": 8,
    "tile": 64,
    "min_ppi": 0.0,
    "n_test": 1,
    "n_train": None,
    "tiles_per_painting": 4,
    "refs_per_tile": 1,
    "bit_depth": 8,
    "seed": 0,
    "dry_run": False,
    "weights": None,
    "extractor": "fallback:77",
}


def cmd_prepare_data(args) -> int:
    res = _resolve(args, _PREPARE_DEFAULTS)
    if not res["manifest"] or not res["out_dir"]:
        raise ValueError("--manifest and --out-dir are required")
    manifest = Path(res["manifest"])
    if not manifest.exists():
        raise FileNotFoundError(f"manifest not found: {manifest}")
    _echo_config("prepare-data", res)

    records = dataset.ingest_manifest(manifest)
    n_test = int(res["n_test"])
    pool = [r for r in records if r.ppi >= float(res["min_ppi"])]
    n_train = int(res["n_train"]) if res["n_train"] is not None else len(pool) - n_test
    split = dataset.select_by_ppi(
        records, float(res["min_ppi"]), n_train, n_test, seed=int(res["seed"])
    )
    print(f"records: {len(records)}  train: {len(split.train)}  test: {len(split.test)}")

    counts = {}
    out_dir = Path(res["out_dir"])
    for name, recs in (("train", split.train), ("test", split.test)):
        if len(recs) < 2:
            print(f"{name}: {len(recs)} paintings (too few for triples; skipped)")
            counts[name] = 0
            continue
        triples = dataset.make_triples(
            recs,
            s=int(res["scale"]),
            tile_hr=int(res["tile"]),
            refs_per_tile=int(res["refs_per_tile"]),
            seed=int(res["seed"]),
            tiles_per_painting=int(res["tiles_per_painting"]),
        )
        if res["dry_run"]:
            counts[name] = sum(1 for _ in triples)
        else:
            rows = dataset.materialize_triples(
                triples, out_dir / "triples" / name, bit_depth=int(res["bit_depth"])
            )
            counts[name] = len(rows)
        print(f"{name}: {counts[name]} triples")
    if not res["dry_run"]:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "splits.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["painting_id", "split"])
            for name, recs in (("train", split.train), ("test", split.test)):
                for r in recs:
                    writer.writerow([r.id, name])
        print(f"written to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# train-degradation / train
# ---------------------------------------------------------------------------

_TRAIN_DEG_DEFAULTS = {
    "data_dir": None,
    "out": None,
    "scale": 8,
    "steps": None,
    "epochs": 2,
    "batch_size": 4,
    "lr_rate": 1e-4,
    "seed": 0,
    "extractor": "fallback:77",
    "weights": None,
    "cache_dir": None,
}


def _load_train_triples(data_dir) -> list:
    index = Path(data_dir) / "triples" / "train" / "triples.csv"
    return dataset.load_triples_index(index)


def cmd_train_degradation(args) -> int:
    res = _resolve(args, _TRAIN_DEG_DEFAULTS)
    if not res["data_dir"] or not res["out"]:
        raise ValueError("--data-dir and --out are required")
    _echo_config("train-degradation", res)
    triples = _load_train_triples(res["data_dir"])
    cfg = dataclasses.replace(_train_config(res), deg_epochs=int(res["epochs"]))
    pairs = [(t.hr, t.lr) for t in triples]
    steps = int(res["steps"]) if res["steps"] is not None else None
    result = training.train_degrader(pairs, cfg, max_steps=steps)
    out = Path(res["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    networks.save_params(result.params, out)
    final = result.history[-1]["l1"] if result.history else float("nan")
    print(f"degrader: {len(result.history)} steps, final l1 {final:.5f} -> {out}")
    return 0


_TRAIN_DEFAULTS = {
    "data_dir": None,
    "degrader": None,
    "out_dir": None,
    "scale": 8,
    "epochs_pretrain": 2,
    "epochs_full": 20,
    "batch_size": 4,
    "lr_rate": 1e-4,
    "critic_steps": 1,
    "seed": 0,
    "extractor": "fallback:77",
    "weights": None,
    "cache_dir": None,
}


def cmd_train(args) -> int:
    res = _resolve(args, _TRAIN_DEFAULTS)
    for key in ("data_dir", "degrader", "out_dir"):
        if not res[key]:
            raise ValueError("--data-dir, --degrader and --out-dir are required")
    _echo_config("train", res)
    triples = _load_train_triples(res["data_dir"])
    cfg = _train_config(res)
    degrader = networks.load_params(res["degrader"]).require("degrader")
    extractor = get_extractor(cfg.extractor)
    out_dir = Path(res["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"

    init = networks.init_params(
        "generator",
        training._generator_config(cfg, extractor),
        seed=training._phase_seed(cfg.seed, "gen-init"),
    )
    networks.save_params(init, out_dir / "generator_init.ckpt")

    pre = training.pretrain_generator(
        triples, cfg, degrader, extractor=extractor, out_dir=out_dir, log_path=log_path
    )
    steps = len(pre.history)
    current = pre.params
    if cfg.full_epochs > 0:
        full = training.train_full(
            triples, cfg, degrader, current, extractor=extractor,
            out_dir=out_dir, log_path=log_path,
        )
        steps += len(full.history)
        current = full.params
        networks.save_params(full.critic, out_dir / "critic_final.ckpt")
    if steps > 0:
        networks.save_params(current, out_dir / "generator_final.ckpt")
        print(f"trained {steps} steps -> {out_dir / 'generator_final.ckpt'}")
    else:
        print(f"no training steps requested; wrote {out_dir / 'generator_init.ckpt'}")
    return 0


# ---------------------------------------------------------------------------
# super-resolve / evaluate
# ---------------------------------------------------------------------------

_SR_DEFAULTS = {
    "lr": None,
    "ref": None,
    "checkpoint": None,
    "scale": 8,
    "out": None,
    "seed": 0,
    "extractor": "fallback:77",
    "batch_size": 1,
    "lr_rate": 1e-4,
    "weights": None,
    "cache_dir": None,
}


def cmd_super_resolve(args) -> int:
    res = _resolve(args, _SR_DEFAULTS)
    for key in ("lr", "ref", "checkpoint", "out"):
        if not res[key]:
            raise ValueError("--lr, --ref, --checkpoint and --out are required")
    if int(res["scale"]) not in (8, 16):
        raise ValueError(f"--scale must be 8 or 16, got {res['scale']}")
    _echo_config("super-resolve", res)
    lr = load_image(res["lr"])
    ref = crop_aligned(load_image(res["ref"]), int(res["scale"]))
    gen = networks.load_params(res["checkpoint"]).require("generator")
    cfg = _train_config(res)
    sr = training.super_resolve(lr, ref, gen, cfg)
    out = Path(res["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(sr, out)
    print(f"{lr.height}x{lr.width} -> {sr.height}x{sr.width} written to {out}")
    return 0


_EVAL_DEFAULTS = {
    "pairs": None,
    "out": None,
    "niqe_model": None,
    "ma_scores": None,
    "seed": 0,
}


def _format_cell(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return f"{value:.4f}"


def cmd_evaluate(args) -> int:
    res = _resolve(args, _EVAL_DEFAULTS)
    if not res["pairs"]:
        raise ValueError("--pairs is required")
    pairs_dir = Path(res["pairs"])
    if not pairs_dir.is_dir():
        raise FileNotFoundError(f"pairs directory not found: {pairs_dir}")
    _echo_config("evaluate", res)
    niqe_model = metrics.NiqeModel.load(res["niqe_model"]) if res["niqe_model"] else None
    ma_scores: dict[str, float] = {}
    if res["ma_scores"]:
        with open(res["ma_scores"], newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if len(row) >= 2:
                    ma_scores[row[0]] = float(row[1])

    ids = sorted(
        p.name[: -len("_sr.png")]
        for p in pairs_dir.glob("*_sr.png")
        if (pairs_dir / (p.name[: -len("_sr.png")] + "_gt.png")).exists()
    )
    if not ids:
        raise ValueError(f"no (<id>_sr.png, <id>_gt.png) pairs in {pairs_dir}")
    header = ["image_id", "psnr", "ssim", "niqe", "ma", "pi"]
    lines = [",".join(header)]
    for image_id in ids:
        sr = load_image(pairs_dir / f"{image_id}_sr.png")
        gt = load_image(pairs_dir / f"{image_id}_gt.png")
        row = metrics.evaluate_pair(sr, gt, niqe_model, ma_scores.get(image_id))
        lines.append(
            ",".join([image_id] + [_format_cell(row[k]) for k in header[1:]])
        )
    table = "\n".join(lines)
    print(table)
    if res["out"]:
        Path(res["out"]).write_text(table + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paintsr",
        description="Reference-based painting super-resolution at 8x/16x.",
    )
    parser.add_argument(
        "--version", action="version",
        version=f"paintsr {__version__} (checkpoint format v{networks.CHECKPOINT_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="YAML config file; flags override it")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("prepare-data", help="build splits and training triples")
    add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--scale", type=int)
    p.add_argument("--tile", type=int)
    p.add_argument("--min-ppi", dest="min_ppi", type=float)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--tiles-per-painting", dest="tiles_per_painting", type=int)
    p.add_argument("--refs-per-tile", dest="refs_per_tile", type=int)
    p.add_argument("--bit-depth", dest="bit_depth", type=int, choices=(8, 16))
    p.add_argument("--dry-run", dest="dry_run", action="store_const", const=True)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train-degradation", help="fit the learned HR->LR network")
    add_common(p)
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--out")
    p.add_argument("--scale", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--extractor")
    p.set_defaults(func=cmd_train_degradation)

    p = sub.add_parser("train", help="pretrain and adversarially train the generator")
    add_common(p)
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--degrader")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--scale", type=int)
    p.add_argument("--epochs-pretrain", dest="epochs_pretrain", type=int)
    p.add_argument("--epochs-full", dest="epochs_full", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--critic-steps", dest="critic_steps", type=int)
    p.add_argument("--extractor")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("super-resolve", help="upscale one image with a reference")
    add_common(p)
    p.add_argument("--lr")
    p.add_argument("--ref")
    p.add_argument("--checkpoint")
    p.add_argument("--scale", type=int, choices=(8, 16))
    p.add_argument("--out")
    p.add_argument("--extractor")
    p.set_defaults(func=cmd_super_resolve)

    p = sub.add_parser("evaluate", help="metrics table for (sr, gt) image pairs")
    add_common(p)
    p.add_argument("--pairs")
    p.add_argument("--out")
    p.add_argument("--niqe-model", dest="niqe_model")
    p.add_argument("--ma-scores", dest="ma_scores")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PaintSRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

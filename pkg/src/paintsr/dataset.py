"""Corpus ingestion, PPI-based splitting and training-triple generation.

The manifest is a UTF-8 CSV with header
``id,image_path,width_px,height_px,phys_width_in,phys_height_in``; image
paths are resolved relative to the manifest location. PPI is computed from
the width, with the height used as a consistency cross-check (scans may be
slightly anamorphic; beyond 5% we warn but keep the row).

Triples pair an HR tile with its fixed bicubic LR counterpart and an HR
reference tile sampled from a *different* painting of the same split. The
whole pipeline is a pure function of (manifest, config, seed).
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .imaging import ImageTensor, degrade_bicubic, load_image, save_image

log = logging.getLogger(__name__)

MANIFEST_FIELDS = (
    "id", "image_path", "width_px", "height_px", "phys_width_in", "phys_height_in",
)
PPI_HEIGHT_TOLERANCE = 0.05


@dataclass(frozen=True)
class PaintingRecord:
    id: str
    image_path: Path
    width_px: int
    height_px: int
    phys_width_in: float
    phys_height_in: float

    @property
    def ppi(self) -> float:
        return self.width_px / self.phys_width_in


@dataclass(frozen=True)
class TrainingTriple:
    hr: ImageTensor
    lr: ImageTensor
    ref: ImageTensor
    s: int
    painting_id: str = ""
    tile_index: int = 0

    def __post_init__(self):
        if (self.hr.height, self.hr.width) != (self.lr.height * self.s, self.lr.width * self.s):
            raise ValueError("lr dims must be hr dims / s")
        if self.ref.height < self.hr.height or self.ref.width < self.hr.width:
            raise ValueError("ref must be at least as large as hr")


@dataclass(frozen=True)
class Split:
    train: list[PaintingRecord]
    test: list[PaintingRecord]


def ingest_manifest(path) -> list[PaintingRecord]:
    """Parse and validate a manifest; bad rows are logged and skipped."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    records: list[PaintingRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_FIELDS:
            raise FormatError(
                f"{path}: expected header {','.join(MANIFEST_FIELDS)}, "
                f"got {reader.fieldnames}"
            )
        for i, row in enumerate(reader, start=2):
            try:
                rec = PaintingRecord(
                    id=row["id"].strip(),
                    image_path=(path.parent / row["image_path"].strip()),
                    width_px=int(row["width_px"]),
                    height_px=int(row["height_px"]),
                    phys_width_in=float(row["phys_width_in"]),
                    phys_height_in=float(row["phys_height_in"]),
                )
                if not rec.id:
                    raise ValueError("empty id")
                if rec.width_px <= 0 or rec.height_px <= 0:
                    raise ValueError("pixel dims must be positive")
                if rec.phys_width_in <= 0 or rec.phys_height_in <= 0:
                    raise ValueError("physical size must be positive")
            except (KeyError, TypeError, ValueError) as exc:
                log.warning("%s line %d: rejected row (%s)", path.name, i, exc)
                continue
            ppi_h = rec.height_px / rec.phys_height_in
            if abs(ppi_h / rec.ppi - 1.0) > PPI_HEIGHT_TOLERANCE:
                log.warning(
                    "%s line %d: anamorphic scan for %s (width ppi %.1f, height ppi %.1f)",
                    path.name, i, rec.id, rec.ppi, ppi_h,
                )
            records.append(rec)
    return records


def _stable_rng(seed: int, *tokens) -> np.random.Generator:
    """Philox generator keyed by seed and string tokens; process-stable."""
    h = hashlib.sha256(("|".join(str(t) for t in tokens)).encode()).digest()
    key = int.from_bytes(h[:8], "little")
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, key]))


def select_by_ppi(
    records: list[PaintingRecord],
    min_ppi: float,
    n_train: int,
    n_test: int,
    seed: int = 0,
) -> Split:
    """Deterministic PPI-ranked split: the top of the pool feeds test first.

    Records are sorted by descending PPI with a fixed-seed shuffle inside
    equal-PPI groups, then the first ``n_test`` become the test set and the
    next ``n_train`` the training set.
    """
    pool = [r for r in records if r.ppi >= min_ppi]
    if len(pool) < n_train + n_test:
        raise ValueError(
            f"need {n_train + n_test} records with ppi >= {min_ppi}, "
            f"have {len(pool)} of {len(records)}"
        )
    rng = _stable_rng(seed, "ppi-split")
    jitter = {r.id: rng.random() for r in sorted(pool, key=lambda r: r.id)}
    ranked = sorted(pool, key=lambda r: (-r.ppi, jitter[r.id]))
    return Split(test=ranked[:n_test], train=ranked[n_test : n_test + n_train])


def _sample_tile(
    img: ImageTensor, tile: int, rng: np.random.Generator
) -> ImageTensor | None:
    if img.height < tile or img.width < tile:
        return None
    top = int(rng.integers(0, img.height - tile + 1))
    left = int(rng.integers(0, img.width - tile + 1))
    return ImageTensor(img.data[top : top + tile, left : left + tile], img.color_space)


def make_triples(
    records: list[PaintingRecord],
    s: int,
    tile_hr: int,
    refs_per_tile: int = 1,
    seed: int = 0,
    tiles_per_painting: int = 4,
    loader=load_image,
):
    """Yield training triples; deterministic for a fixed seed.

    References are sampled uniformly from the *other* paintings of the
    record list, never from the tile's own painting. Paintings smaller than
    the tile are skipped with a warning.
    """
    if tile_hr % s:
        raise ValueError(f"tile_hr {tile_hr} must be divisible by s={s}")
    if tile_hr % 2:
        raise ValueError(f"tile_hr {tile_hr} must be even")
    if len(records) < 2:
        raise ValueError("need at least two paintings: references must come "
                         "from a different painting")
    by_id = {r.id: r for r in records}
    order = sorted(by_id)
    images: dict[str, ImageTensor] = {}

    def image_of(painting_id: str) -> ImageTensor:
        if painting_id not in images:
            images[painting_id] = loader(by_id[painting_id].image_path)
        return images[painting_id]

    for painting_id in order:
        img = image_of(painting_id)
        if img.height < tile_hr or img.width < tile_hr:
            log.warning("painting %s (%dx%d) smaller than tile %d; skipped",
                        painting_id, img.height, img.width, tile_hr)
            continue
        rng = _stable_rng(seed, "tiles", painting_id)
        others = [p for p in order if p != painting_id]
        for k in range(tiles_per_painting):
            hr = _sample_tile(img, tile_hr, rng)
            assert hr is not None
            lr = degrade_bicubic(hr, s)
            for _ in range(refs_per_tile):
                for _attempt in range(16):
                    ref_id = others[int(rng.integers(0, len(others)))]
                    ref = _sample_tile(image_of(ref_id), tile_hr, rng)
                    if ref is not None:
                        break
                else:
                    log.warning("no reference tile found for %s tile %d", painting_id, k)
                    continue
                yield TrainingTriple(
                    hr=hr, lr=lr, ref=ref, s=s, painting_id=painting_id, tile_index=k
                )


@dataclass(frozen=True)
class RefGroup:
    """One grouped-reference sample: an HR image plus ranked references."""

    group_id: str
    hr: ImageTensor
    refs: list[ImageTensor]


def load_grouped_refs(root) -> list[RefGroup]:
    """Load ``<root>/<group>/{hr.png, ref_0.png..ref_3.png}`` groups.

    References keep their naming order; incomplete groups are skipped with a
    warning. ``most_similar_ref`` picks ref_0, the most similar one.
    """
    root = Path(root)
    groups: list[RefGroup] = []
    if not root.exists():
        return groups
    for group_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        hr_path = group_dir / "hr.png"
        ref_paths = [group_dir / f"ref_{i}.png" for i in range(4)]
        missing = [p.name for p in [hr_path, *ref_paths] if not p.exists()]
        if missing:
            log.warning("group %s skipped: missing %s", group_dir.name, ", ".join(missing))
            continue
        groups.append(
            RefGroup(
                group_id=group_dir.name,
                hr=load_image(hr_path),
                refs=[load_image(p) for p in ref_paths],
            )
        )
    return groups


def most_similar_ref(group: RefGroup) -> ImageTensor:
    return group.refs[0]


def materialize_triples(triples, out_dir, bit_depth: int = 8) -> list[dict]:
    """Write triples as ``<id>_<tileidx>_{hr,lr,ref}.png`` plus an index."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    counters: dict[tuple[str, int], int] = {}
    for t in triples:
        key = (t.painting_id, t.tile_index)
        rep = counters.get(key, 0)
        counters[key] = rep + 1
        stem = f"{t.painting_id}_{t.tile_index}"
        if rep:
            stem = f"{stem}_{rep}"
        paths = {kind: out_dir / f"{stem}_{kind}.png" for kind in ("hr", "lr", "ref")}
        save_image(t.hr, paths["hr"], bit_depth=bit_depth)
        save_image(t.lr, paths["lr"], bit_depth=bit_depth)
        save_image(t.ref, paths["ref"], bit_depth=bit_depth)
        rows.append(
            {
                "painting_id": t.painting_id,
                "tile_index": t.tile_index,
                "s": t.s,
                "hr": paths["hr"].name,
                "lr": paths["lr"].name,
                "ref": paths["ref"].name,
            }
        )
    index_path = out_dir / "triples.csv"
    with open(index_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["painting_id", "tile_index", "s", "hr", "lr", "ref"]
        )
        writer.writeheader()
        writer.writerows(rows)
    return rows


def load_triples_index(index_path) -> list[TrainingTriple]:
    """Load triples materialized by ``materialize_triples``."""
    index_path = Path(index_path)
    if not index_path.exists():
        raise FileNotFoundError(f"triple index not found: {index_path}")
    triples = []
    with open(index_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            base = index_path.parent
            triples.append(
                TrainingTriple(
                    hr=load_image(base / row["hr"]),
                    lr=load_image(base / row["lr"]),
                    ref=load_image(base / row["ref"]),
                    s=int(row["s"]),
                    painting_id=row["painting_id"],
                    tile_index=int(row["tile_index"]),
                )
            )
    return triples

"""Cross-scale patch matching and feature transfer.

Matching runs on the coarse level (stride 4 relative to the output): every
dense query patch is paired with the reference patch of highest cosine
similarity over l2-normalized, vectorized patches. Ties resolve to the
smallest row-major reference index, which numpy's argmax already gives.

Transfer replays the match at a finer level: each matched reference patch
is copied, scaled up by ``scale_gap`` in coordinates and size, into the
output grid. Overlapping contributions are averaged with uniform weights
using a running-mean update, which keeps the self-transfer case bit-exact
(summing k copies of x and dividing by k does not always return x in
floating point; ``m += (x - m) / n`` does).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .features import FeaturePyramid

MATCH_MAGIC = b"PSRMATCH"


@dataclass(frozen=True)
class MatchMap:
    """Best reference patch (row, col) and score per query patch."""

    best_row: np.ndarray  # int64, query grid
    best_col: np.ndarray
    best_score: np.ndarray  # float64, cosine in [-1, 1]
    patch_size: int
    stride: int
    level: int

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.best_row.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class TransferredFeature:
    """Assembled feature map plus the per-position contribution count."""

    data: np.ndarray
    coverage: np.ndarray


def _patch_grid(h: int, w: int, patch: int, stride: int) -> tuple[int, int]:
    return (h - patch) // stride + 1, (w - patch) // stride + 1


def _vectorized_patches(feat: np.ndarray, patch: int, stride: int) -> np.ndarray:
    """(grid_h * grid_w, patch * patch * C) row-major patch matrix."""
    windows = np.lib.stride_tricks.sliding_window_view(feat, (patch, patch), axis=(0, 1))
    windows = windows[::stride, ::stride]
    gh, gw = windows.shape[:2]
    # sliding_window_view yields (gh, gw, C, patch, patch); put channels last
    # so vectorization order matches feat[r:r+p, c:c+p, :].ravel().
    flat = windows.transpose(0, 1, 3, 4, 2).reshape(gh * gw, -1)
    return np.ascontiguousarray(flat, dtype=np.float64)


def match_features(
    query: np.ndarray,
    ref: np.ndarray,
    patch_size: int = 3,
    stride: int = 1,
    level: int = 0,
    chunk: int = 4096,
    max_candidates: int | None = None,
) -> MatchMap:
    """Exhaustive cosine argmax of query patches over the dense reference grid.

    ``max_candidates`` optionally subsamples the reference grid (uniform
    row-major thinning) to bound cost on very large references; leave it at
    ``None`` for exact search.
    """
    query = np.asarray(query, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if query.ndim != 3 or ref.ndim != 3:
        raise ValueError("feature maps must be HxWxC")
    if query.shape[2] != ref.shape[2]:
        raise ValueError(
            f"channel mismatch: query {query.shape[2]} vs ref {ref.shape[2]}"
        )
    if patch_size < 1 or stride < 1:
        raise ValueError("patch_size and stride must be >= 1")
    if min(query.shape[:2]) < patch_size or min(ref.shape[:2]) < patch_size:
        raise ValueError(
            f"maps {query.shape[:2]} / {ref.shape[:2]} smaller than patch {patch_size}"
        )

    qg_h, qg_w = _patch_grid(query.shape[0], query.shape[1], patch_size, stride)
    rg_h, rg_w = _patch_grid(ref.shape[0], ref.shape[1], patch_size, 1)

    q = _vectorized_patches(query, patch_size, stride)
    r = _vectorized_patches(ref, patch_size, 1)
    cand = np.arange(r.shape[0])
    if max_candidates is not None and r.shape[0] > max_candidates:
        step = int(np.ceil(r.shape[0] / max_candidates))
        cand = cand[::step]
        r = r[cand]

    qn = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
    rn = r / np.maximum(np.linalg.norm(r, axis=1, keepdims=True), 1e-12)

    best_idx = np.empty(q.shape[0], dtype=np.int64)
    best_score = np.empty(q.shape[0], dtype=np.float64)
    for start in range(0, q.shape[0], chunk):
        stop = min(start + chunk, q.shape[0])
        scores = qn[start:stop] @ rn.T
        best = np.argmax(scores, axis=1)  # first max == smallest row-major index
        best_idx[start:stop] = cand[best]
        best_score[start:stop] = scores[np.arange(stop - start), best]

    return MatchMap(
        best_row=(best_idx // rg_w).reshape(qg_h, qg_w),
        best_col=(best_idx % rg_w).reshape(qg_h, qg_w),
        best_score=best_score.reshape(qg_h, qg_w),
        patch_size=patch_size,
        stride=stride,
        level=level,
    )


def transfer_features(
    ref_feat: np.ndarray, match: MatchMap, scale_gap: int
) -> TransferredFeature:
    """Assemble the transferred feature map at a level ``scale_gap``x finer
    than the matching level.

    Output extent is ``scale_gap`` times the query map extent; with the
    default dense stride-1 match grid every position is covered.
    """
    ref_feat = np.asarray(ref_feat, dtype=np.float64)
    if ref_feat.ndim != 3:
        raise ValueError("reference feature map must be HxWxC")
    if scale_gap < 1:
        raise ValueError(f"scale_gap must be >= 1, got {scale_gap}")
    p, st = match.patch_size, match.stride
    gh, gw = match.grid_shape
    pp = p * scale_gap
    max_r = int(match.best_row.max()) * scale_gap + pp
    max_c = int(match.best_col.max()) * scale_gap + pp
    if max_r > ref_feat.shape[0] or max_c > ref_feat.shape[1]:
        raise ValueError(
            f"reference map {ref_feat.shape[:2]} too small for match coordinates "
            f"at scale gap {scale_gap} (needs at least {max_r}x{max_c})"
        )
    out_h = ((gh - 1) * st + p) * scale_gap
    out_w = ((gw - 1) * st + p) * scale_gap
    data = np.zeros((out_h, out_w, ref_feat.shape[2]), dtype=np.float64)
    count = np.zeros((out_h, out_w), dtype=np.int64)
    for qi in range(gh):
        for qj in range(gw):
            r = int(match.best_row[qi, qj]) * scale_gap
            c = int(match.best_col[qi, qj]) * scale_gap
            oi = qi * st * scale_gap
            oj = qj * st * scale_gap
            patch = ref_feat[r : r + pp, c : c + pp]
            region = data[oi : oi + pp, oj : oj + pp]
            n = count[oi : oi + pp, oj : oj + pp] + 1
            region += (patch - region) / n[..., None]
            count[oi : oi + pp, oj : oj + pp] = n
    return TransferredFeature(data=data, coverage=count)


def transfer_at_level(
    ref_pyramid: FeaturePyramid, match: MatchMap, l: int
) -> TransferredFeature:
    """Replay a level-(L-2) match on pyramid level ``l`` (l >= L-2)."""
    L = ref_pyramid.L
    match_level = L - 2
    if match.level != match_level:
        raise ValueError(
            f"match was computed at level {match.level}, pyramid expects {match_level}"
        )
    if l < match_level:
        raise ValueError(
            f"cannot transfer below the matching level: l={l} < {match_level}"
        )
    return transfer_features(ref_pyramid.level(l), match, 2 ** (l - match_level))


def save_match_map(match: MatchMap, path) -> None:
    """Debug dump in the documented container format."""
    meta = {
        "kind": "match_map",
        "patch_size": match.patch_size,
        "stride": match.stride,
        "level": match.level,
    }
    write_container(
        path,
        MATCH_MAGIC,
        meta,
        {
            "best_row": match.best_row.astype(np.int64),
            "best_col": match.best_col.astype(np.int64),
            "best_score": match.best_score.astype(np.float64),
        },
    )


def load_match_map(path) -> MatchMap:
    meta, arrays = read_container(path, MATCH_MAGIC)
    return MatchMap(
        best_row=arrays["best_row"],
        best_col=arrays["best_col"],
        best_score=arrays["best_score"],
        patch_size=int(meta["patch_size"]),
        stride=int(meta["stride"]),
        level=int(meta["level"]),
    )

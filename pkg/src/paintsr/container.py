"""Single-file binary container for named arrays plus a JSON header.

Used for network checkpoints, training sessions and match-map debug dumps.

Layout (all integers little-endian):

    bytes 0..7    magic (8 ascii bytes, block-type specific)
    bytes 8..11   uint32 header length N
    bytes 12..    canonical JSON header (utf-8, N bytes)
    remainder     raw array payload

The header carries ``format_version``, arbitrary user metadata, a tensor
table ``[{name, dtype, shape, offset, nbytes}, ...]`` (offsets relative to
the payload start) and ``payload_sha256``. Arrays are stored little-endian,
C-order, in table order, so save -> load -> save reproduces identical bytes.
The checksum is verified on load; a short or tampered file raises
``CorruptionError``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptionError, FormatError

FORMAT_VERSION = 1

_HEADER_LEN = struct.Struct("<I")


def _canonical_dtype(arr: np.ndarray) -> str:
    dt = arr.dtype.newbyteorder("<")
    return dt.str


def write_container(path, magic: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays with metadata to ``path``.

    ``magic`` must be exactly 8 bytes. Array insertion order is preserved.
    """
    if len(magic) != 8:
        raise ValueError(f"magic must be 8 bytes, got {len(magic)}")
    table = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        table.append(
            {
                "name": name,
                "dtype": _canonical_dtype(arr),
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "meta": meta,
        "tensors": table,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(_HEADER_LEN.pack(len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container, verify its checksum, return (meta, arrays)."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12:
        raise CorruptionError(f"{path}: file too short to be a container")
    if blob[:8] != magic:
        raise FormatError(
            f"{path}: bad magic {blob[:8]!r}, expected {magic!r}"
        )
    (hlen,) = _HEADER_LEN.unpack(blob[8:12])
    if len(blob) < 12 + hlen:
        raise CorruptionError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: unreadable header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported container version {header.get('format_version')}"
        )
    payload = blob[12 + hlen :]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise CorruptionError(f"{path}: payload checksum mismatch")
    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(payload):
            raise CorruptionError(f"{path}: tensor {entry['name']} out of bounds")
        arr = np.frombuffer(payload[start : start + n], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header["meta"], arrays

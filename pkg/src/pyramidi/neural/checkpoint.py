"""Deterministic binary container for trained stages.

Layout (all integers little-endian):

====================  =======================================================
bytes 0..7            magic ``PYRSTG01``
bytes 8..15           header length ``H`` as uint64
bytes 16..16+H        UTF-8 JSON header, keys sorted, compact separators
16+H..end             raw array data, concatenated C-order little-endian
====================  =======================================================

The JSON header holds ``{"version": 1, "config": {...}, "meta": {...},
"arrays": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}`` with
arrays sorted by name and offsets relative to the data section. Writing the
same stage twice produces byte-identical files: the header never contains
timestamps and dict keys are sorted.
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import DataError

__all__ = ["save_stage_checkpoint", "load_stage_checkpoint"]

MAGIC = b"PYRSTG01"
VERSION = 1


def _le_dtype(dtype: np.dtype) -> str:
    """Dtype string pinned to little-endian byte order."""
    return np.dtype(dtype).newbyteorder("<").str


def save_stage_checkpoint(
    path: str,
    config: dict,
    arrays: dict[str, np.ndarray],
    meta: dict | None = None,
) -> None:
    """Write a checkpoint file.

    Args:
        path: Destination file.
        config: JSON-serializable stage configuration (sizes, vocabularies).
        arrays: Named parameter and optimizer arrays; saved sorted by name.
        meta: Extra JSON-serializable bookkeeping (seed, step counts, ...).
    """
    manifest = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        le = _le_dtype(arr.dtype)
        data = arr.astype(np.dtype(le), copy=False).tobytes(order="C")
        manifest.append(
            {
                "name": name,
                "dtype": le,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(data),
            }
        )
        blobs.append(data)
        offset += len(data)

    header = {
        "version": VERSION,
        "config": config,
        "meta": meta or {},
        "arrays": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_stage_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray], dict]:
    """Read a checkpoint file back.

    Returns:
        ``(config, arrays, meta)`` as saved.

    Raises:
        DataError: Wrong magic, unsupported version, or a manifest that does
            not match the actual data section.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise DataError(f"{path}: not a stage checkpoint (bad magic)")
    if len(blob) < 16:
        raise DataError(f"{path}: truncated checkpoint header")
    header_len = int.from_bytes(blob[8:16], "little")
    header_end = 16 + header_len
    if header_end > len(blob):
        raise DataError(f"{path}: header overruns file")
    try:
        header = json.loads(blob[16:header_end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable checkpoint header: {exc}") from None
    if header.get("version") != VERSION:
        raise DataError(
            f"{path}: checkpoint version {header.get('version')} unsupported"
        )

    data = blob[header_end:]
    arrays: dict[str, np.ndarray] = {}
    expected_end = 0
    for entry in header["arrays"]:
        start = entry["offset"]
        end = start + entry["nbytes"]
        if end > len(data):
            raise DataError(f"{path}: array {entry['name']!r} overruns data section")
        arr = np.frombuffer(data[start:end], dtype=np.dtype(entry["dtype"]))
        shape = tuple(entry["shape"])
        expected_size = int(np.prod(shape)) if shape else 1
        if arr.size != expected_size:
            raise DataError(f"{path}: array {entry['name']!r} size mismatch")
        arrays[entry["name"]] = arr.reshape(shape).copy()
        expected_end = max(expected_end, end)
    if expected_end != len(data):
        raise DataError(
            f"{path}: data section has {len(data)} bytes, manifest covers "
            f"{expected_end}"
        )
    return header["config"], arrays, header["meta"]

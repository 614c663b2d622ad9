"""Versioned binary container for run artifacts.

Every persisted artifact (world, model checkpoint, Fisher diagonal, saliency
mask, subspace basis, utterance batch) shares one on-disk layout:

    bytes 0..3   magic  b"CRTS"
    bytes 4..7   format version, u32 little-endian
    bytes 8..11  header length H, u32 little-endian
    bytes 12..   H bytes of UTF-8 JSON header
    then         raw array payloads, in header order, little-endian

The JSON header carries the artifact kind, the flat parameter count and
dimension table where applicable, plus an ``arrays`` list describing the
name, dtype and shape of each payload. Floats are stored as ``<f8`` and
index arrays as ``<i8``. Headers are serialized with sorted keys so the
same logical artifact is byte-identical across runs.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"CRTS"
FORMAT_VERSION = 1

_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


class ContainerError(ValueError):
    """Raised for malformed or mismatched artifact files."""


def write_container(
    path: str | Path,
    kind: str,
    meta: dict[str, Any],
    arrays: dict[str, np.ndarray],
) -> None:
    """Write arrays plus metadata to ``path`` in the versioned format."""
    entries = []
    payloads = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            arr = np.ascontiguousarray(arr, dtype="<f8")
            dtype = "<f8"
        elif arr.dtype.kind in "iu":
            arr = np.ascontiguousarray(arr, dtype="<i8")
            dtype = "<i8"
        else:
            raise ContainerError(f"unsupported dtype for array {name!r}: {arr.dtype}")
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        payloads.append(arr.tobytes())

    header = dict(meta)
    header["kind"] = kind
    header["arrays"] = entries
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(int(FORMAT_VERSION).to_bytes(4, "little"))
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        for payload in payloads:
            fh.write(payload)


def read_container(path: str | Path) -> tuple[str, dict[str, Any], dict[str, np.ndarray]]:
    """Read an artifact; returns (kind, metadata, arrays by name)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise ContainerError(f"{path} is not a CRTS artifact")
    version = int.from_bytes(raw[4:8], "little")
    if version != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported format version {version}")
    header_len = int.from_bytes(raw[8:12], "little")
    if len(raw) < 12 + header_len:
        raise ContainerError(f"{path}: truncated header")
    header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))

    offset = 12 + header_len
    arrays: dict[str, np.ndarray] = {}
    for entry in header.pop("arrays", []):
        dtype = _DTYPES[entry["dtype"]]
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
        count = int(np.prod(shape)) if shape else 1
        chunk = raw[offset : offset + count * dtype.itemsize]
        if len(chunk) != count * dtype.itemsize:
            raise ContainerError(f"{path}: truncated payload for {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        offset += count * dtype.itemsize
        del nbytes
    kind = header.pop("kind", "")
    return kind, header, arrays


def peek_kind(path: str | Path) -> str | None:
    """Return the artifact kind, or None if the file is not a CRTS container."""
    try:
        kind, _, _ = read_container(path)
    except (ContainerError, OSError, json.JSONDecodeError, KeyError):
        return None
    return kind

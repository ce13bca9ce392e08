"""Checkpoint container.

Layout::

    format-version 1
    meta <key> <json>            (zero or more)
    tensor <name> <d1,d2,...> <f8
    ...
    end-header
    <raw little-endian float64 payloads, in header order>

A scalar is written with the shape field ``-``.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
_DTYPE = "<f8"
_END = b"end-header\n"


class CheckpointError(Exception):
    pass


def save_container(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    lines = [f"format-version {FORMAT_VERSION}"]
    for key, value in (meta or {}).items():
        if " " in key or "\n" in key:
            raise CheckpointError(f"invalid meta key {key!r}")
        lines.append(f"meta {key} {json.dumps(value, sort_keys=True)}")
    for name, arr in tensors.items():
        if not name or any(c.isspace() for c in name):
            raise CheckpointError(f"invalid tensor name {name!r}")
        shape = ",".join(str(n) for n in arr.shape) if arr.ndim else "-"
        lines.append(f"tensor {name} {shape} {_DTYPE}")
    buf = io.BytesIO()
    buf.write(("\n".join(lines) + "\n").encode("utf-8"))
    buf.write(_END)
    for arr in tensors.values():
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    end = raw.find(_END)
    if end < 0:
        raise CheckpointError(f"{path}: corrupt header (no end-header marker)")
    try:
        header = raw[:end].decode("utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    if not header or not header[0].startswith("format-version "):
        raise CheckpointError(f"{path}: corrupt header (missing format-version)")
    try:
        version = int(header[0].split()[1])
    except (IndexError, ValueError):
        raise CheckpointError(f"{path}: corrupt header (bad format-version)") from None
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} not supported (expected {FORMAT_VERSION})")

    meta: dict = {}
    entries: list[tuple[str, tuple[int, ...]]] = []
    for lineno, line in enumerate(header[1:], start=2):
        kind, _, rest = line.partition(" ")
        try:
            if kind == "meta":
                key, _, value = rest.partition(" ")
                meta[key] = json.loads(value)
            elif kind == "tensor":
                name, shape, dtype = rest.split(" ")
                if dtype != _DTYPE:
                    raise ValueError(f"unsupported dtype {dtype}")
                dims = () if shape == "-" else tuple(int(n) for n in shape.split(","))
                entries.append((name, dims))
            else:
                raise ValueError(f"unknown record {kind!r}")
        except ValueError as exc:
            raise CheckpointError(f"{path}: corrupt header at line {lineno}: {exc}") from None

    offset = end + len(_END)
    tensors: dict[str, np.ndarray] = {}
    for name, dims in entries:
        count = int(np.prod(dims)) if dims else 1
        nbytes = 8 * count
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload while reading tensor {name!r}")
        tensors[name] = np.frombuffer(raw, dtype=_DTYPE, count=count, offset=offset).astype(np.float64).reshape(dims)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return tensors, meta

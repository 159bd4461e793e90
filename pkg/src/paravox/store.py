"""Versioned JSON containers with base64-encoded little-endian arrays."""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError

_DTYPES = {"f8": "<f8", "i4": "<i4"}


def encode_array(a: np.ndarray, kind: str = "f8") -> dict:
    arr = np.ascontiguousarray(a, dtype=_DTYPES[kind])
    return {
        "dtype": kind,
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_array(obj: dict) -> np.ndarray:
    try:
        dtype = np.dtype(_DTYPES[obj["dtype"]])
        raw = base64.b64decode(obj["data"], validate=True)
        arr = np.frombuffer(raw, dtype=dtype).astype(dtype.newbyteorder("="))
        return arr.reshape(obj["shape"])
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"bad array record: {exc}") from exc


def dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def save(obj: dict, path) -> None:
    try:
        Path(path).write_text(dumps(obj), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load(path, fmt: str, version: int) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc
    if obj.get("format") != fmt:
        raise FormatError(f"{path}: expected format {fmt!r}, found {obj.get('format')!r}")
    if obj.get("version") != version:
        raise FormatError(f"{path}: unsupported {fmt} version {obj.get('version')!r}")
    return obj

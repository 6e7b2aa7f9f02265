"""Model checkpoint container, format "ZSNN" version 1.

Layout (all integers little-endian):

  offset 0   magic: 4 bytes, b"ZSNN"
  offset 4   format version: u16 (currently 1)
  offset 6   header length in bytes: u32
  offset 10  header: UTF-8 JSON with keys
               "config":  free-form dict (feature config + hyperparameters)
               "tensors": [{"name": str, "shape": [int, ...]}, ...]
  then       tensor payloads: float64 little-endian, C order, concatenated
             in header order

Saving is canonical (sorted tensor names, compact sorted-key JSON), so
identical parameters and config always produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .types import ValidationError

MAGIC = b"ZSNN"
FORMAT_VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray], config: dict) -> None:
    tensors = []
    payload = bytearray()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape)})
        payload += arr.tobytes()
    header = json.dumps(
        {"config": config, "tensors": tensors}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 10:
        raise ValidationError(f"checkpoint {path}: truncated header at byte {len(raw)}")
    if raw[:4] != MAGIC:
        raise ValidationError(f"checkpoint {path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != FORMAT_VERSION:
        raise ValidationError(f"checkpoint {path}: unsupported version {version}")
    (header_len,) = struct.unpack_from("<I", raw, 6)
    if len(raw) < 10 + header_len:
        raise ValidationError(
            f"checkpoint {path}: truncated header payload at byte {len(raw)}"
        )
    try:
        header = json.loads(raw[10 : 10 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"checkpoint {path}: malformed header ({exc})") from exc
    offset = 10 + header_len
    params: dict[str, np.ndarray] = {}
    for spec in header.get("tensors", []):
        shape = tuple(int(s) for s in spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if len(raw) < offset + nbytes:
            raise ValidationError(
                f"checkpoint {path}: truncated tensor {spec['name']!r} at byte {offset}"
            )
        params[spec["name"]] = (
            np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += nbytes
    if offset != len(raw):
        raise ValidationError(
            f"checkpoint {path}: {len(raw) - offset} trailing bytes at byte {offset}"
        )
    return params, header.get("config", {})

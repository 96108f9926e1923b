"""Single-file model checkpoints.

Layout: 6-byte magic ``ESAL1\\n``, an 8-byte little-endian manifest length,
the UTF-8 JSON manifest, then one contiguous little-endian tensor blob.  The
manifest lists tensors sorted by name with explicit dtype/shape/offset/length
and carries the model config, decision threshold, vocabulary, and label
schema, so a checkpoint alone is enough to reload and predict.  Writing the
same state twice produces byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

MAGIC = b"ESAL1\n"
FORMAT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


def _sha256_json(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def vocab_fingerprint(tokens: list[str]) -> str:
    return _sha256_json(tokens)


def schema_fingerprint(schema_dict: dict) -> str:
    return _sha256_json(schema_dict)


def save_checkpoint(
    path,
    tensors: dict[str, np.ndarray],
    config: dict,
    vocab_tokens: list[str],
    schema_dict: dict,
    threshold: float,
) -> None:
    names = sorted(tensors)
    entries = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(tensors[name])
        dtype_name = arr.dtype.name
        if dtype_name not in _DTYPES:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {dtype_name}")
        raw = arr.astype(_DTYPES[dtype_name]).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": dtype_name,
                "shape": list(arr.shape),
                "offset": offset,
                "length": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)

    manifest = {
        "format_version": FORMAT_VERSION,
        "tensors": entries,
        "config": config,
        "threshold": float(threshold),
        "vocab": {"tokens": vocab_tokens, "sha256": vocab_fingerprint(vocab_tokens)},
        "schema": {"value": schema_dict, "sha256": schema_fingerprint(schema_dict)},
    }
    mbytes = json.dumps(
        manifest, sort_keys=True, ensure_ascii=False, separators=(",", ":")
    ).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(mbytes).to_bytes(8, "little"))
        fh.write(mbytes)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> dict:
    """Read a checkpoint; returns a dict with tensors/config/vocab/schema/threshold."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    pos = len(MAGIC)
    if len(raw) < pos + 8:
        raise CheckpointError(f"{path}: truncated header")
    mlen = int.from_bytes(raw[pos : pos + 8], "little")
    pos += 8
    if len(raw) < pos + mlen:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[pos : pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: manifest is not valid JSON: {exc}") from exc
    pos += mlen

    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {manifest.get('format_version')!r}"
        )
    blob = raw[pos:]
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        name = entry["name"]
        dtype_name = entry["dtype"]
        if dtype_name not in _DTYPES:
            raise CheckpointError(f"{path}: tensor {name!r} bad dtype {dtype_name!r}")
        start, length = entry["offset"], entry["length"]
        if start + length > len(blob):
            raise CheckpointError(f"{path}: tensor {name!r} range exceeds file size")
        arr = np.frombuffer(blob[start : start + length], dtype=_DTYPES[dtype_name])
        shape = tuple(entry["shape"])
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{path}: tensor {name!r} size/shape mismatch")
        tensors[name] = arr.reshape(shape).astype(dtype_name).copy()

    vocab = manifest["vocab"]
    if vocab_fingerprint(vocab["tokens"]) != vocab["sha256"]:
        raise CheckpointError(f"{path}: vocabulary fingerprint mismatch")
    schema = manifest["schema"]
    if schema_fingerprint(schema["value"]) != schema["sha256"]:
        raise CheckpointError(f"{path}: schema fingerprint mismatch")

    return {
        "tensors": tensors,
        "config": manifest["config"],
        "threshold": float(manifest["threshold"]),
        "vocab_tokens": list(vocab["tokens"]),
        "schema_dict": schema["value"],
    }

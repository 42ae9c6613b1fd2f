"""Binary checkpoint container.

Layout: magic b"S2VF", format version (u32 LE), header length (u32 LE), a
canonical UTF-8 JSON header, then the raw array payloads little-endian in
manifest order. The header carries the model spec (and its hash), the array
manifest (name, dtype, shape, byte offset into the payload region), optimizer
scalars, the run seed, the best validation loss, and the categorical
vocabularies so a checkpoint is self-contained for prediction and embedding
analysis. Arrays are written sorted by name, which makes save -> load -> save
byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .models import ModelSpec

MAGIC = b"S2VF"
FORMAT_VERSION = 1
_OPT_PREFIX = "__optim__."
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    version: int
    spec: ModelSpec
    arrays: dict[str, np.ndarray]
    seed: Optional[int] = None
    best_valid: Optional[float] = None
    optimizer: Optional[dict] = None
    vocab: Optional[dict[str, list[str]]] = None
    extra: dict = field(default_factory=dict)


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "<f4"
    if arr.dtype == np.float64:
        return "<f8"
    raise CheckpointError(f"unsupported array dtype {arr.dtype}")


def save_checkpoint(path, spec: ModelSpec, arrays: dict[str, np.ndarray], *,
                    seed: Optional[int] = None, best_valid: Optional[float] = None,
                    optimizer: Optional[dict] = None,
                    vocab: Optional[dict[str, list[str]]] = None,
                    extra: Optional[dict] = None) -> None:
    payload_arrays = {name: np.ascontiguousarray(a) for name, a in arrays.items()}
    opt_header = None
    if optimizer is not None:
        opt_header = {k: v for k, v in optimizer.items() if k not in ("m", "v")}
        for slot in ("m", "v"):
            for pname, a in optimizer.get(slot, {}).items():
                payload_arrays[f"{_OPT_PREFIX}{slot}.{pname}"] = np.ascontiguousarray(a)

    manifest = []
    offset = 0
    blobs = []
    for name in sorted(payload_arrays):
        arr = payload_arrays[name]
        blob = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        manifest.append({
            "name": name,
            "dtype": _dtype_tag(arr),
            "shape": list(arr.shape),
            "offset": offset,
        })
        blobs.append(blob)
        offset += len(blob)

    header = {
        "arrays": manifest,
        "best_valid": None if best_valid is None else float(best_valid),
        "extra": extra or {},
        "model_spec": spec.to_dict(),
        "optimizer": opt_header,
        "seed": seed,
        "spec_hash": spec.spec_hash(),
        "vocab": vocab,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expect_spec: Optional[ModelSpec] = None) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    if len(raw) < 12 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc

    spec = ModelSpec.from_dict(header["model_spec"])
    if header.get("spec_hash") != spec.spec_hash():
        raise CheckpointError(f"{path}: header spec hash does not match its own model spec")
    if expect_spec is not None and expect_spec.spec_hash() != spec.spec_hash():
        raise CheckpointError(
            f"{path}: checkpoint spec hash {spec.spec_hash()[:12]} does not match "
            f"expected {expect_spec.spec_hash()[:12]}"
        )

    payload = raw[12 + header_len :]
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path}: unsupported dtype tag {entry['dtype']!r}")
        shape = tuple(entry["shape"])
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
        lo = entry["offset"]
        if lo + n_bytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload for array {entry['name']!r}")
        arrays[entry["name"]] = (
            np.frombuffer(payload, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)), offset=lo)
            .reshape(shape)
            .copy()
        )

    optimizer = header.get("optimizer")
    if optimizer is not None:
        optimizer = dict(optimizer)
        optimizer["m"] = {}
        optimizer["v"] = {}
        for name in list(arrays):
            if name.startswith(_OPT_PREFIX):
                slot, pname = name[len(_OPT_PREFIX) :].split(".", 1)
                optimizer[slot][pname] = arrays.pop(name)

    return Checkpoint(
        version=version,
        spec=spec,
        arrays=arrays,
        seed=header.get("seed"),
        best_valid=header.get("best_valid"),
        optimizer=optimizer,
        vocab=header.get("vocab"),
        extra=header.get("extra", {}),
    )

"""Portable checkpoint files.

Layout (all integers little-endian)::

    b"ABSG" | u32 version | u64 manifest length | UTF-8 JSON manifest | payload

The manifest holds the network config and one record per tensor (name,
shape, dtype, kind, byte offset into the payload). The payload is the
tensors' raw float32 bytes, back to back in manifest order.
"""

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .network import ABSGN, NetworkConfig

MAGIC = b"ABSG"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    pass


def _tensors(model: ABSGN):
    params = {name for name, _ in model.named_parameters()}
    for name, t in model.state_dict().items():
        if not torch.is_floating_point(t):
            # batch-norm step counters are not needed for inference
            continue
        yield name, t, "param" if name in params else "buffer"


def serialize(model: ABSGN) -> bytes:
    records, chunks, offset = [], [], 0
    for name, t, kind in _tensors(model):
        data = t.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
        raw = data.tobytes()
        records.append(
            {"name": name, "shape": list(t.shape), "dtype": "float32", "kind": kind, "offset": offset}
        )
        chunks.append(raw)
        offset += len(raw)
    manifest = {"config": model.cfg.to_dict(), "tensors": records}
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks)


def save_checkpoint(model: ABSGN, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize(model))
    return path


def read_manifest(data: bytes) -> tuple[dict, memoryview]:
    if len(data) < _HEADER.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, mlen = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _HEADER.size
    if start + mlen > len(data):
        raise CheckpointError("manifest length exceeds file size")
    try:
        manifest = json.loads(bytes(data[start : start + mlen]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from exc
    if not isinstance(manifest, dict) or "tensors" not in manifest or "config" not in manifest:
        raise CheckpointError("corrupt manifest: missing 'config' or 'tensors'")

    payload = memoryview(data)[start + mlen :]
    expected_end = 0
    for rec in manifest["tensors"]:
        try:
            name, shape, dtype, off = rec["name"], rec["shape"], rec["dtype"], rec["offset"]
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"corrupt manifest record {rec!r}") from exc
        if dtype != "float32":
            raise CheckpointError(f"{name}: unsupported dtype {dtype}")
        if off != expected_end:
            kind = "overlaps" if off < expected_end else "leaves a gap before"
            raise CheckpointError(f"{name}: offset {off} {kind} the previous tensor")
        expected_end = off + 4 * int(np.prod(shape, dtype=np.int64))
    if expected_end != len(payload):
        raise CheckpointError(
            f"payload size mismatch: manifest describes {expected_end} bytes, file holds {len(payload)}"
        )
    return manifest, payload


def deserialize(data: bytes) -> ABSGN:
    manifest, payload = read_manifest(data)
    try:
        cfg = NetworkConfig.from_dict(manifest["config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt config: {exc}") from exc
    model = ABSGN(cfg)
    state = model.state_dict()
    seen = set()
    for rec in manifest["tensors"]:
        name, shape = rec["name"], tuple(rec["shape"])
        if name not in state:
            raise CheckpointError(f"unexpected tensor {name!r}")
        if tuple(state[name].shape) != shape:
            raise CheckpointError(f"{name}: shape {shape} does not match model {tuple(state[name].shape)}")
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=rec["offset"]).reshape(shape)
        with torch.no_grad():
            state[name].copy_(torch.from_numpy(arr.astype(np.float32)))
        seen.add(name)
    missing = {n for n, t in state.items() if torch.is_floating_point(t)} - seen
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)}")
    model.eval()
    return model


def load_checkpoint(path) -> ABSGN:
    return deserialize(Path(path).read_bytes())

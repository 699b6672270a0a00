"""Single-file checkpoint format, loadable from any language.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
(format version, config snapshot, parameter manifest with byte offsets), then
the payload: every parameter as contiguous little-endian float32 values in
manifest order.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from collections import OrderedDict

import numpy as np

from .errors import CapabilityError, CheckpointError

MAGIC = b"LEAKMEM\x00"
FORMAT_VERSION = 1


def _header_json(config: dict, manifest: list, payload_bytes: int) -> bytes:
    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "manifest": manifest,
        "payload_bytes": payload_bytes,
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_atomic(path: str, data: bytes) -> None:
    """Write via a temp file in the same directory and rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def save_checkpoint(path: str, params: "OrderedDict[str, object]", config: dict) -> None:
    """Serialize named parameters (Tensors or arrays) plus the config snapshot."""
    manifest = []
    chunks = []
    offset = 0
    for name, tensor in params.items():
        data = getattr(tensor, "data", tensor)
        arr = np.asarray(data, dtype="<f4")
        manifest.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "f4",
            "offset": offset,
        })
        raw = arr.tobytes(order="C")
        chunks.append(raw)
        offset += len(raw)
    header = _header_json(config, manifest, offset)
    blob = MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)
    write_atomic(path, blob)


def load_checkpoint(path: str):
    """Read a checkpoint; returns (params: name -> float32 array, config, header)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (header_len,) = struct.unpack("<Q", blob[len(MAGIC): len(MAGIC) + 8])
    header_start = len(MAGIC) + 8
    if len(blob) < header_start + header_len:
        raise CheckpointError(f"{path} is truncated inside the header")
    try:
        header = json.loads(blob[header_start: header_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path} has an unreadable header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} has format version {header.get('format_version')}, "
            f"this build reads version {FORMAT_VERSION}"
        )
    payload = blob[header_start + header_len:]
    expected = header["payload_bytes"]
    if len(payload) != expected:
        raise CheckpointError(
            f"{path} payload is {len(payload)} bytes, manifest expects {expected}"
        )
    params = OrderedDict()
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise CheckpointError(
                f"{path} manifest entry {entry['name']} overruns the payload "
                f"({end} > {len(payload)} bytes)"
            )
        arr = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape)
        params[entry["name"]] = arr.astype(np.float32)
    return params, header["config"], header


def restore_model(model, params: dict) -> None:
    """Copy checkpoint arrays into a model's parameters by name."""
    own = model.parameters()
    missing = [n for n in own if n not in params]
    if missing:
        raise CapabilityError(f"checkpoint lacks parameters: {', '.join(sorted(missing))}")
    for name, tensor in own.items():
        arr = params[name]
        if tuple(arr.shape) != tuple(tensor.data.shape):
            raise CheckpointError(
                f"parameter {name} has shape {arr.shape}, model expects {tensor.data.shape}"
            )
        tensor.data = arr.astype(tensor.data.dtype)

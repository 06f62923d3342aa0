"""Single-file model checkpoints.

Layout: the magic line ``TGCKPT\\n``, an 8-byte little-endian header length,
a UTF-8 JSON header (format version, config echo, parameter names, shapes and
byte offsets), then the parameters as raw little-endian float64 arrays in
header order.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .model import Model, ModelConfig

MAGIC = b"TGCKPT\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: Model, path, extra: Optional[dict] = None) -> None:
    entries, offset = [], 0
    for name, t in model.params.items():
        nbytes = t.data.size * 8
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "params": entries,
        "extra": extra or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for t in model.params.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[Model, dict]:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    (hlen,) = struct.unpack("<Q", blob[pos:pos + 8])
    pos += 8
    header = json.loads(blob[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    model = Model.init(ModelConfig.from_dict(header["config"]))
    state = {}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"]))
        start = pos + entry["offset"]
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
        state[entry["name"]] = data.reshape(entry["shape"]).astype(np.float64)
    missing = set(model.params) - set(state)
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
    model.load_state(state)
    return model, header.get("extra", {})

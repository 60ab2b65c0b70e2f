"""Flat binary parameter checkpoints.

Layout: magic ``b"SRCKPT01"``, a little-endian uint32 header length, a UTF-8
JSON header (kind, dims, parameter names and shapes), then every parameter as
little-endian float64 in declaration order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .nets import ModelDims, Recommender, init_model

MAGIC = b"SRCKPT01"


def save_checkpoint(model: Recommender, path) -> None:
    header = {
        "kind": model.kind,
        "num_users": model.dims.num_users,
        "num_items": model.dims.num_items,
        "dim": model.dims.dim,
        "tower": list(getattr(model, "tower", model.dims.tower)),
        "params": [[name, list(arr.shape)] for name, arr in model.params.items()],
    }
    raw = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for arr in model.params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Recommender:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    dims = ModelDims(header["num_users"], header["num_items"], header["dim"], tuple(header["tower"]))
    model = init_model(header["kind"], dims, np.random.default_rng(0))
    offset = 12 + hlen
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
        if model.params[name].shape != arr.shape:
            raise ValueError(f"{path}: shape mismatch for {name}")
        model.params[name] = arr.astype(np.float64).copy()
        offset += 8 * count
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes after parameters")
    return model

"""Binary checkpoints: ``GFLDNET1`` magic, a JSON header, then the flat float64 parameters."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import NetworkConfig
from .model import Parameters

MAGIC = b"GFLDNET1"


def save_checkpoint(path, params: Parameters, config: NetworkConfig, meta=None):
    header = {
        "network": config.to_dict(),
        "layout": params.layout(),
        "buffers": list(params.buffers),
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    vec = params.to_vector().astype("<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", vec.size))
        fh.write(vec.tobytes())


def load_checkpoint(path):
    """Returns ``(params, config, meta)``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    (n_json,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + n_json])
    off = 16 + n_json
    (n,) = struct.unpack("<Q", data[off : off + 8])
    vec = np.frombuffer(data[off + 8 :], dtype="<f8")
    if vec.size != n:
        raise ValueError(f"{path}: expected {n} parameters, found {vec.size}")
    config = NetworkConfig.from_dict(header["network"])
    arrays = {name: np.zeros(shape) for name, shape in header["layout"]}
    params = Parameters(arrays, header["buffers"]).load_vector(vec)
    return params, config, header.get("meta", {})

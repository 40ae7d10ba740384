"""Flat binary array files with a small JSON header.

Layout: 8-byte little-endian header length, UTF-8 JSON header, then the
array payload as little-endian float64 in C order. The header always carries
``shape`` so the payload can be reshaped on load.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np


def write_array(path, header: dict, array) -> Path:
    path = Path(path)
    arr = np.ascontiguousarray(array, dtype="<f8")
    header = dict(header, shape=list(arr.shape), dtype="<f8")
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(arr.tobytes())
    return path


def read_array(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode())
        data = np.frombuffer(fh.read(), dtype=header.get("dtype", "<f8"))
    return header, data.reshape(header["shape"]).copy()

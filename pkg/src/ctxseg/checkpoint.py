"""Checkpoint container: one flat binary blob plus a JSON manifest.

`<path>` holds every array's raw bytes back to back (C order, native
endianness). `<path>.json` maps each array name to its shape, dtype string
and byte offset into the blob, preserving insertion order, plus an optional
"extra" object for scalar metadata (epoch, config echo, ...). Loading
validates that offsets and sizes tile the blob exactly.
"""

import json
from pathlib import Path

import numpy as np


def save_checkpoint(path, arrays, extra=None):
    path = Path(path)
    manifest = {"arrays": {}, "extra": extra or {}}
    offset = 0
    with open(path, "wb") as blob:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            blob.write(arr.tobytes())
            manifest["arrays"][name] = {
                "shape": list(arr.shape),
                "dtype": arr.dtype.name,
                "offset": offset,
            }
            offset += arr.nbytes
    with open(path.with_suffix(path.suffix + ".json"), "w") as f:
        json.dump(manifest, f, indent=1)


def load_checkpoint(path):
    """-> (name -> ndarray, extra metadata dict)"""
    path = Path(path)
    manifest_path = path.with_suffix(path.suffix + ".json")
    if not path.exists():
        raise FileNotFoundError(f"checkpoint blob not found: {path}")
    if not manifest_path.exists():
        raise FileNotFoundError(f"checkpoint manifest not found: {manifest_path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    blob = path.read_bytes()
    arrays = {}
    expected_end = 0
    for name, meta in manifest["arrays"].items():
        dtype = np.dtype(meta["dtype"])
        shape = tuple(meta["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        start = meta["offset"]
        if start != expected_end:
            raise ValueError(f"manifest offsets are not contiguous at {name!r}: "
                             f"expected {expected_end}, got {start}")
        if start + nbytes > len(blob):
            raise ValueError(f"array {name!r} overruns the blob "
                             f"({start + nbytes} > {len(blob)} bytes)")
        arrays[name] = np.frombuffer(blob, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
                                     offset=start).reshape(shape).copy()
        expected_end = start + nbytes
    if expected_end != len(blob):
        raise ValueError(f"blob has {len(blob) - expected_end} trailing bytes "
                         f"beyond the manifest")
    return arrays, manifest.get("extra", {})

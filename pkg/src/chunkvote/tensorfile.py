"""Manifest-plus-blob tensor files.

Layout: one line of UTF-8 JSON (the manifest) terminated by ``\\n``,
followed by a raw little-endian float32 blob. Each entry of
``manifest["tensors"]`` is ``{name, shape, offset, dtype}`` with ``offset``
a byte offset into the blob.
"""
import json
import os

import numpy as np

from .errors import ShapeMismatch

DTYPES = {"f32": np.dtype("<f4")}


def dump(path, tensors, meta=None):
    """Write ``tensors`` (name -> array, insertion order kept) plus ``meta`` keys."""
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype=DTYPES["f32"])
        if not np.all(np.isfinite(data)):
            raise ValueError(f"tensor {name!r} has non-finite entries")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset, "dtype": "f32"})
        raw = data.tobytes()
        chunks.append(raw)
        offset += len(raw)
    manifest = dict(meta or {})
    manifest["tensors"] = entries
    header = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(header + b"\n")
        for raw in chunks:
            f.write(raw)
    os.replace(tmp, path)


def load(path):
    """Return ``(manifest, tensors)``; tensors come back as float32 arrays."""
    with open(path, "rb") as f:
        header = f.readline()
        blob = f.read()
    try:
        manifest = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: unreadable manifest: {exc}") from exc
    tensors = {}
    for e in manifest.get("tensors", []):
        dtype = DTYPES.get(e["dtype"])
        if dtype is None:
            raise ValueError(f"{path}: unsupported dtype {e['dtype']!r}")
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + count * dtype.itemsize
        if e["offset"] < 0 or end > len(blob):
            raise ShapeMismatch(f"{path}: tensor {e['name']!r} runs past the blob")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float32)
    return manifest, tensors

"""SGT1 binary tensor files and concatenated checkpoints.

File layout: 4-byte magic ``SGT1``, u32 rank, rank x u32 dims
(little-endian), then the float64 payload, row-major. Payloads are always
written as float64 regardless of the in-memory dtype.

A checkpoint is one file of back-to-back SGT1 records plus a JSON manifest
(`<file>.manifest.json`) listing ``[name, offset]`` pairs in write order.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"SGT1"
_HEADER = struct.Struct("<4sI")


def write_tensor(fh, array) -> int:
    """Append one SGT1 record to an open binary file; returns bytes written."""
    # asarray keeps 0-d shapes; ascontiguousarray would promote them to 1-d
    arr = np.asarray(array, dtype=np.float64, order="C")
    dims = arr.shape
    fh.write(_HEADER.pack(MAGIC, len(dims)))
    fh.write(struct.pack(f"<{len(dims)}I", *dims))
    payload = arr.tobytes()
    fh.write(payload)
    return _HEADER.size + 4 * len(dims) + len(payload)


def read_tensor(fh) -> np.ndarray:
    """Read one SGT1 record from the current file position."""
    head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise DataError("truncated SGT1 header")
    magic, rank = _HEADER.unpack(head)
    if magic != MAGIC:
        raise DataError(f"bad SGT1 magic {magic!r}")
    if rank > 32:
        raise DataError(f"implausible SGT1 rank {rank}")
    raw_dims = fh.read(4 * rank)
    if len(raw_dims) < 4 * rank:
        raise DataError("truncated SGT1 dims")
    dims = struct.unpack(f"<{rank}I", raw_dims)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = fh.read(8 * count)
    if len(payload) < 8 * count:
        raise DataError("truncated SGT1 payload")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()


def save_tensor(path, array) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = read_tensor(fh)
        if fh.read(1):
            raise DataError(f"trailing bytes after SGT1 record in {path}")
    return arr


def manifest_path(checkpoint_path) -> Path:
    return Path(str(checkpoint_path) + ".manifest.json")


def save_checkpoint(path, named_arrays, meta=None) -> None:
    """Write ``{name: array}`` (or pairs) as concatenated SGT1 + manifest.

    ``meta`` is an arbitrary JSON-serializable dict stored in the manifest;
    checkpoints written by training carry the flat network config there so
    they are self-describing.
    """
    if isinstance(named_arrays, dict):
        named_arrays = named_arrays.items()
    entries = []
    offset = 0
    with open(path, "wb") as fh:
        for name, arr in named_arrays:
            entries.append([name, offset])
            offset += write_tensor(fh, arr)
    doc = {"format": "sgnet-checkpoint-v1", "meta": meta or {}, "tensors": entries}
    with open(manifest_path(path), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path, with_meta=False):
    """Read a checkpoint back as an ordered ``{name: float64 array}`` dict."""
    mpath = manifest_path(path)
    if not mpath.exists():
        raise DataError(f"checkpoint manifest not found: {mpath}")
    with open(mpath) as fh:
        manifest = json.load(fh)
    tensors = {}
    with open(path, "rb") as fh:
        for name, offset in manifest["tensors"]:
            fh.seek(offset)
            tensors[name] = read_tensor(fh)
    if with_meta:
        return tensors, manifest.get("meta", {})
    return tensors

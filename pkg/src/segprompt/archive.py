"""Single-file tensor archive used for checkpoints and feature dumps.

Layout, in order:
  - 4-byte magic ``MFC1``
  - 8-byte little-endian unsigned index length
  - UTF-8 JSON index: name -> {"shape": [...], "byte_offset": n, "byte_len": n},
    with offsets measured from the start of the payload region
  - payload: raw little-endian IEEE-754 f64 values, entries concatenated
    in sorted-name order

The index JSON is written canonically (sorted keys, no whitespace) so
identical tensors always produce identical bytes.
"""

import json
import struct

import numpy as np

from .errors import MalformedArchive, SchemaViolation, TruncatedPayload

MAGIC = b"MFC1"


def save_archive(path, tensors):
    """Write name -> array mapping; values may be ndarrays or Tensors."""
    index = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        value = tensors[name]
        arr = np.ascontiguousarray(getattr(value, "data", value), dtype="<f8")
        raw = arr.tobytes()
        index[name] = {
            "shape": [int(s) for s in arr.shape],
            "byte_offset": offset,
            "byte_len": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    head = json.dumps(index, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        for raw in chunks:
            f.write(raw)


def load_archive(path):
    """Read an archive back as name -> float64 ndarray."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise MalformedArchive(f"{path}: not an MFC1 archive")
    (head_len,) = struct.unpack("<Q", blob[4:12])
    if 12 + head_len > len(blob):
        raise TruncatedPayload(f"{path}: index extends past end of file")
    try:
        index = json.loads(blob[12 : 12 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedArchive(f"{path}: bad index JSON: {e}") from None
    if not isinstance(index, dict):
        raise SchemaViolation(f"{path}: index must be a JSON object")
    payload = blob[12 + head_len :]
    out = {}
    for name, entry in index.items():
        if not isinstance(entry, dict) or not {
            "shape",
            "byte_offset",
            "byte_len",
        } <= set(entry):
            raise SchemaViolation(f"{path}: malformed index entry for {name!r}")
        shape = tuple(int(s) for s in entry["shape"])
        start = int(entry["byte_offset"])
        size = int(entry["byte_len"])
        count = 1
        for s in shape:
            count *= s
        if size != 8 * count:
            raise SchemaViolation(
                f"{path}: {name!r} claims {size} bytes for shape {list(shape)}"
            )
        if start < 0 or start + size > len(payload):
            raise TruncatedPayload(f"{path}: {name!r} extends past end of payload")
        arr = np.frombuffer(payload[start : start + size], dtype="<f8")
        out[name] = arr.reshape(shape).astype(np.float64)
    return out

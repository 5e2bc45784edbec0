"""Binary embedding / checkpoint files and CSV logs.

Embedding file layout (little-endian)::

    magic "MRFE" | u32 version | u64 rows | u64 cols | u8 has_labels | 7 pad
    | u64 payload_offset | float64 rows*cols payload | int32 rows labels (optional)

Checkpoints reuse the framing with magic "MRFC" and a JSON manifest that
names every array, its shape and its byte offset inside the payload.
"""
import csv
import json
import os
import struct

import numpy as np

from .errors import BadMagic, Truncated, VersionUnsupported

VERSION = 1
_EMB_HEADER = struct.Struct("<4sIQQB7xQ")
_CKPT_HEADER = struct.Struct("<4sIQQ")  # magic, version, manifest_len, payload_offset


def _read_exact(buf, start, n, what):
    if start + n > len(buf):
        raise Truncated(f"{what}: need {start + n} bytes, file has {len(buf)}")
    return buf[start:start + n]


def _check_magic(buf, header, magic):
    head = _read_exact(buf, 0, header.size, "header")
    fields = header.unpack(head)
    if fields[0] != magic:
        raise BadMagic(f"expected {magic!r}, found {fields[0]!r}")
    if fields[1] != VERSION:
        raise VersionUnsupported(f"version {fields[1]} (supported: {VERSION})")
    return fields


def _atomic_write(path, chunks):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        for c in chunks:
            f.write(c)
    os.replace(tmp, path)


def export_embeddings(path, matrix, labels=None):
    m = np.ascontiguousarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise ValueError("embedding matrix must be 2-D")
    rows, cols = m.shape
    chunks = [_EMB_HEADER.pack(b"MRFE", VERSION, rows, cols, labels is not None, _EMB_HEADER.size),
              m.tobytes()]
    if labels is not None:
        lab = np.asarray(labels)
        if lab.shape != (rows,):
            raise ValueError("need one label per row")
        chunks.append(lab.astype("<i4").tobytes())
    _atomic_write(path, chunks)


def import_embeddings(path):
    """Returns ``(matrix, labels)``; ``labels`` is None when absent."""
    with open(path, "rb") as f:
        buf = f.read()
    _, _, rows, cols, has_labels, offset = _check_magic(buf, _EMB_HEADER, b"MRFE")
    n = rows * cols * 8
    m = np.frombuffer(_read_exact(buf, offset, n, "payload"), dtype="<f8").reshape(rows, cols)
    labels = None
    if has_labels:
        raw = _read_exact(buf, offset + n, rows * 4, "labels")
        labels = np.frombuffer(raw, dtype="<i4").astype(np.int64)
    return m.astype(np.float64), labels


def save_checkpoint(path, arrays, meta=None):
    """Store a flat ``{name: float array}`` dict plus JSON-serializable ``meta``."""
    manifest, payload, offset = [], [], 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype="<f8", order="C")
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        payload.append(a.tobytes())
        offset += a.nbytes
    blob = json.dumps({"arrays": manifest, "meta": meta or {}}, sort_keys=True).encode()
    start = _CKPT_HEADER.size + len(blob)
    _atomic_write(path, [_CKPT_HEADER.pack(b"MRFC", VERSION, len(blob), start), blob] + payload)


def load_checkpoint(path):
    """Returns ``(arrays, meta)``."""
    with open(path, "rb") as f:
        buf = f.read()
    _, _, mlen, start = _check_magic(buf, _CKPT_HEADER, b"MRFC")
    doc = json.loads(_read_exact(buf, _CKPT_HEADER.size, mlen, "manifest").decode())
    arrays = {}
    for entry in doc["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * 8
        raw = _read_exact(buf, start + entry["offset"], n, entry["name"])
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return arrays, doc["meta"]


def write_csv(path, rows, fieldnames=None):
    """Write a list of flat dicts; columns default to the union in first-seen order."""
    if fieldnames is None:
        fieldnames = []
        for r in rows:
            fieldnames += [k for k in r if k not in fieldnames]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fieldnames)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))

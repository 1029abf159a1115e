"""On-disk embedding formats: the ``EMB1`` binary layout and JSON lines.

Binary layout (all integers little-endian)::

    b"EMB1" | u32 record_count | u32 dim | u32 label_count
    label_count x (u32 id | u16 name_len | utf-8 name)
    record_count x (u32 label_id | dim x float32)
"""

import json
import struct
from pathlib import Path

import numpy as np

from ._validation import ValidationError
from .embedding import EmbeddingSet

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIII")
_LABEL = struct.Struct("<IH")


def detect_format(path):
    with open(path, "rb") as fh:
        return "binary" if fh.read(4) == MAGIC else "jsonl"


def encode_binary(emb):
    names = list(emb.classes)
    ids = {name: i for i, name in enumerate(names)}
    parts = [_HEADER.pack(MAGIC, len(emb), emb.dim, len(names))]
    for name in names:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValidationError(f"label too long for the binary format: {name[:32]}...")
        parts.append(_LABEL.pack(ids[name], len(raw)) + raw)
    rec_dtype = np.dtype([("label", "<u4"), ("vec", "<f4", (emb.dim,))])
    records = np.empty(len(emb), dtype=rec_dtype)
    records["label"] = [ids[lab] for lab in emb.labels]
    records["vec"] = emb.vectors.astype("<f4")
    parts.append(records.tobytes())
    return b"".join(parts)


def decode_binary(buf):
    if len(buf) < _HEADER.size:
        raise ValidationError("truncated embedding file header")
    magic, n_records, dim, n_labels = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ValidationError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if n_records == 0:
        raise ValidationError("embedding file holds no records")
    if dim == 0:
        raise ValidationError("embedding file declares dimension 0")
    offset = _HEADER.size
    names = {}
    for _ in range(n_labels):
        if offset + _LABEL.size > len(buf):
            raise ValidationError("truncated label table")
        label_id, name_len = _LABEL.unpack_from(buf, offset)
        offset += _LABEL.size
        raw = buf[offset:offset + name_len]
        if len(raw) != name_len:
            raise ValidationError("truncated label name")
        names[label_id] = raw.decode("utf-8")
        offset += name_len
    rec_dtype = np.dtype([("label", "<u4"), ("vec", "<f4", (dim,))])
    expected = n_records * rec_dtype.itemsize
    if len(buf) - offset != expected:
        raise ValidationError(
            f"record section has {len(buf) - offset} bytes, expected {expected}"
        )
    records = np.frombuffer(buf, dtype=rec_dtype, count=n_records, offset=offset)
    vectors = records["vec"].astype(np.float64)
    if not np.all(np.isfinite(vectors)):
        raise ValidationError("embedding file contains NaN or Inf values")
    try:
        labels = tuple(names[int(i)] for i in records["label"])
    except KeyError as exc:
        raise ValidationError(f"record references unknown label id {exc.args[0]}") from None
    return EmbeddingSet(vectors, labels)


def _parse_jsonl(text):
    labels, rows = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            label, vec = obj["label"], obj["vec"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValidationError(f"line {lineno}: malformed record ({exc})") from None
        if not isinstance(vec, list) or not vec:
            raise ValidationError(f"line {lineno}: 'vec' must be a non-empty array")
        if rows and len(vec) != len(rows[0]):
            raise ValidationError(
                f"line {lineno}: vector length {len(vec)} differs from {len(rows[0])}"
            )
        labels.append(str(label))
        rows.append(vec)
    if not rows:
        raise ValidationError("embedding file holds no records")
    vectors = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(vectors)):
        raise ValidationError("embedding file contains NaN or Inf values")
    return EmbeddingSet(vectors, labels)


def _format_jsonl(emb):
    lines = [
        json.dumps({"label": lab, "vec": [float(v) for v in row]})
        for lab, row in zip(emb.labels, emb.vectors)
    ]
    return "\n".join(lines) + "\n"


def read_embeddings(path, format=None):
    """Read an :class:`EmbeddingSet`; ``format`` is sniffed from the magic when omitted."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such embedding file: {path}")
    fmt = format or detect_format(path)
    if fmt == "binary":
        return decode_binary(path.read_bytes())
    if fmt == "jsonl":
        return _parse_jsonl(path.read_text(encoding="utf-8"))
    raise ValidationError(f"unknown embedding format {fmt!r}")


def write_embeddings(emb, path, format="binary"):
    path = Path(path)
    if format == "binary":
        path.write_bytes(encode_binary(emb))
    elif format == "jsonl":
        path.write_text(_format_jsonl(emb), encoding="utf-8")
    else:
        raise ValidationError(f"unknown embedding format {format!r}")

"""On-disk formats for fields and metric fields.

A field file is a single JSON header line followed by raw 8-byte
little-endian IEEE-754 values:

    {"kind": "scalar", "dim": n, "res": [...], "dtype": "f64",
     "order": "row-major", "endian": "little", ...}\\n
    <payload bytes>

* scalar fields: payload is the row-major value array;
* conformal fields: same payload, plus the constant background matrix in
  the header under ``"metric"`` (flat n x n array, row-major);
* metric fields: payload is n(n+1)/2 component planes in (l <= m)
  lexicographic order, each a full row-major grid array.

Writes are atomic (temp file + rename in the target directory).
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .grid import FlatMetric, GridSpec, ScalarField

__all__ = [
    "atomic_write_bytes",
    "atomic_write_text",
    "write_scalar_field",
    "write_conformal_field",
    "write_metric_field",
    "read_field_file",
]

_DTYPE = np.dtype("<f8")


def atomic_write_bytes(path, payload: bytes) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=target.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _header_bytes(header: dict) -> bytes:
    return (json.dumps(header, sort_keys=True, allow_nan=False) + "\n").encode("utf-8")


def _base_header(kind: str, spec: GridSpec) -> dict:
    return {
        "kind": kind,
        "dim": spec.dim,
        "res": list(spec.res),
        "dtype": "f64",
        "order": "row-major",
        "endian": "little",
    }


def write_scalar_field(path, field: ScalarField, meta: dict | None = None) -> None:
    header = _base_header("scalar", field.spec)
    if meta:
        header["meta"] = meta
    atomic_write_bytes(path, _header_bytes(header) + field.values.astype(_DTYPE).tobytes())


def write_conformal_field(
    path, field: ScalarField, metric: FlatMetric, meta: dict | None = None
) -> None:
    """Store a conformal exponent together with its background matrix."""
    if field.spec.dim != metric.dim:
        raise ValueError("field and metric dimensions differ")
    header = _base_header("conformal", field.spec)
    header["metric"] = [[float(v) for v in row] for row in metric.entries]
    if meta:
        header["meta"] = meta
    atomic_write_bytes(path, _header_bytes(header) + field.values.astype(_DTYPE).tobytes())


def _sym_index_pairs(dim: int) -> list[tuple[int, int]]:
    return [(l, m) for l in range(dim) for m in range(l, dim)]


def write_metric_field(path, spec: GridSpec, entries: np.ndarray, meta: dict | None = None) -> None:
    """Store a position-dependent symmetric metric as component planes.

    ``entries`` has shape ``spec.shape + (dim, dim)``; the payload holds
    the n(n+1)/2 planes for index pairs l <= m in lexicographic order.
    """
    entries = np.asarray(entries, dtype=float)
    if entries.shape != spec.shape + (spec.dim, spec.dim):
        raise ValueError("metric-field array shape does not match grid")
    header = _base_header("metric-field", spec)
    header["components"] = ["%d%d" % (l, m) for l, m in _sym_index_pairs(spec.dim)]
    if meta:
        header["meta"] = meta
    planes = [
        entries[..., l, m].astype(_DTYPE).tobytes() for l, m in _sym_index_pairs(spec.dim)
    ]
    atomic_write_bytes(path, _header_bytes(header) + b"".join(planes))


def read_field_file(path):
    """Read any field file; returns ``(kind, spec, payload, metric, meta)``.

    ``payload`` is a :class:`ScalarField` for scalar/conformal files and
    a grid-shaped ``(..., n, n)`` array for metric fields.  ``metric``
    is the background :class:`FlatMetric` when the header carries one.
    """
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValueError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ValueError(f"{path}: malformed header: {err}") from err
    for key in ("kind", "dim", "res", "dtype", "order", "endian"):
        if key not in header:
            raise ValueError(f"{path}: header missing {key!r}")
    if header["dtype"] != "f64" or header["endian"] != "little" or header["order"] != "row-major":
        raise ValueError(f"{path}: unsupported encoding in header")
    spec = GridSpec(int(header["dim"]), tuple(int(n) for n in header["res"]))
    body = raw[newline + 1 :]
    kind = header["kind"]
    meta = header.get("meta", {})
    metric = None
    if "metric" in header:
        metric = FlatMetric(np.asarray(header["metric"], dtype=float))

    if kind in ("scalar", "conformal"):
        expected = spec.npoints * _DTYPE.itemsize
        if len(body) != expected:
            raise ValueError(f"{path}: payload has {len(body)} bytes, expected {expected}")
        values = np.frombuffer(body, dtype=_DTYPE).astype(np.float64)
        return kind, spec, ScalarField(spec, values), metric, meta

    if kind == "metric-field":
        pairs = _sym_index_pairs(spec.dim)
        expected = spec.npoints * _DTYPE.itemsize * len(pairs)
        if len(body) != expected:
            raise ValueError(f"{path}: payload has {len(body)} bytes, expected {expected}")
        entries = np.zeros(spec.shape + (spec.dim, spec.dim))
        plane_len = spec.npoints * _DTYPE.itemsize
        for i, (l, m) in enumerate(pairs):
            plane = np.frombuffer(body[i * plane_len : (i + 1) * plane_len], dtype=_DTYPE)
            entries[..., l, m] = plane.reshape(spec.shape)
            entries[..., m, l] = entries[..., l, m]
        return kind, spec, entries, metric, meta

    raise ValueError(f"{path}: unknown field kind {kind!r}")

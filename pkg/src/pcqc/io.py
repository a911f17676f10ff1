"""Plain-text clouds and fields, JSON reports.

Cloud file: header ``PC2 N`` or ``PC3 N`` then N rows of coordinates.
Field file: header ``FIELD <scalar|vec2|vec3|complex> N`` then N rows;
complex values are written as ``re im``. Floats are printed with ``repr``,
the shortest string that parses back to the same double.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .pointcloud import PointCloud

FIELD_KINDS = {"scalar": 1, "vec2": 2, "vec3": 3, "complex": 2}


def _fmt(row) -> str:
    return " ".join(repr(float(v)) for v in row)


def _read_rows(lines, n, width, path):
    if len(lines) < n:
        raise FormatError(f"{path}: expected {n} rows, found {len(lines)}")
    extra = [ln for ln in lines[n:] if ln.strip()]
    if extra:
        raise FormatError(f"{path}: {len(extra)} unexpected trailing lines")
    out = np.empty((n, width))
    for i, ln in enumerate(lines[:n]):
        parts = ln.split()
        if len(parts) != width:
            raise FormatError(f"{path}: row {i + 1} has {len(parts)} values, expected {width}")
        try:
            out[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise FormatError(f"{path}: row {i + 1}: {exc}") from exc
    return out


def _split(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    return lines[0].split(), lines[1:]


def _count(tok, path) -> int:
    try:
        n = int(tok)
    except ValueError as exc:
        raise FormatError(f"{path}: bad point count {tok!r}") from exc
    if n < 0:
        raise FormatError(f"{path}: negative point count")
    return n


def write_cloud(path, pc) -> None:
    pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=float)
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise FormatError("clouds must be 2D or 3D")
    body = "\n".join(_fmt(r) for r in pts)
    Path(path).write_text(f"PC{pts.shape[1]} {len(pts)}\n" + body + ("\n" if len(pts) else ""), encoding="utf-8")


def read_cloud(path) -> PointCloud:
    head, rows = _split(path)
    if len(head) != 2 or head[0] not in ("PC2", "PC3"):
        raise FormatError(f"{path}: header must be 'PC2 N' or 'PC3 N'")
    n = _count(head[1], path)
    return PointCloud(_read_rows(rows, n, int(head[0][2]), path))


def format_field(values, kind: str | None = None) -> str:
    """Field file text; ``kind`` is inferred from dtype and shape when omitted."""
    v = np.asarray(values)
    if kind is None:
        if np.iscomplexobj(v):
            kind = "complex"
        elif v.ndim == 1:
            kind = "scalar"
        elif v.ndim == 2:
            kind = {2: "vec2", 3: "vec3"}.get(v.shape[1])
    if kind not in FIELD_KINDS:
        raise FormatError(f"unknown field kind {kind!r}")
    if v.ndim not in (1, 2):
        raise FormatError("field values must be a 1D or 2D array")
    if kind == "complex":
        rows = np.column_stack([v.real, v.imag])
    else:
        rows = np.asarray(v, dtype=float).reshape(len(v), -1)
    if rows.shape[1] != FIELD_KINDS[kind]:
        raise FormatError(f"values do not match field kind {kind}")
    body = "\n".join(_fmt(r) for r in rows)
    return f"FIELD {kind} {len(rows)}\n" + body + ("\n" if len(rows) else "")


def write_field(path, values, kind: str | None = None) -> None:
    Path(path).write_text(format_field(values, kind), encoding="utf-8")


def read_field(path):
    """Returns ``(kind, values)``; complex fields come back as a complex array."""
    head, rows = _split(path)
    if len(head) != 3 or head[0] != "FIELD" or head[1] not in FIELD_KINDS:
        raise FormatError(f"{path}: header must be 'FIELD <scalar|vec2|vec3|complex> N'")
    kind, n = head[1], _count(head[2], path)
    data = _read_rows(rows, n, FIELD_KINDS[kind], path)
    if kind == "complex":
        return kind, data[:, 0] + 1j * data[:, 1]
    if kind == "scalar":
        return kind, data[:, 0]
    return kind, data


def read_map(path, cloud: PointCloud) -> np.ndarray:
    """A vec2/vec3 field aligned with ``cloud``."""
    kind, vals = read_field(path)
    if kind not in ("vec2", "vec3"):
        raise FormatError(f"{path}: a map file must hold a vec2 or vec3 field, got {kind}")
    if len(vals) != len(cloud):
        raise FormatError(f"{path}: map has {len(vals)} rows but the cloud has {len(cloud)} points")
    return vals


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True)

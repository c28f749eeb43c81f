"""On-disk formats: binary field/trajectory containers, CSV and JSON artifacts.

Field container (magic ``NLSF1``): a fixed little-endian header carrying dim,
periods, and resolution, followed by the raw coefficient array as little-endian
complex128 in C order.  A JSON sidecar ``<path>.json`` carries free-form
metadata plus the schema version.  Trajectories (magic ``NLST1``) add t0, dt
and the slice count, then the slices back to back.

CSV and JSON writers are deterministic: same inputs give byte-identical files
(floats via repr shortest round-trip, sorted JSON keys, LF newlines).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .torus import SpectralField, TorusSpec
from .trajectory import Trajectory

__all__ = [
    "SCHEMA_VERSION",
    "save_field",
    "load_field",
    "save_trajectory",
    "load_trajectory",
    "write_csv",
    "write_json",
    "format_float",
]

SCHEMA_VERSION = "1"

_FIELD_MAGIC = b"NLSF1"
_TRAJ_MAGIC = b"NLST1"


def _pack_spec(spec: TorusSpec) -> bytes:
    parts = [struct.pack("<B", spec.dim)]
    for p in spec.periods:
        parts.append(struct.pack("<d", p))
    for n in spec.resolution:
        parts.append(struct.pack("<I", n))
    return b"".join(parts)


def _unpack_spec(buf: bytes, off: int):
    (dim,) = struct.unpack_from("<B", buf, off)
    off += 1
    periods = []
    for _ in range(dim):
        (p,) = struct.unpack_from("<d", buf, off)
        periods.append(p)
        off += 8
    resolution = []
    for _ in range(dim):
        (n,) = struct.unpack_from("<I", buf, off)
        resolution.append(n)
        off += 4
    return TorusSpec(dim, tuple(periods), tuple(resolution)), off


def _write_sidecar(path: Path, metadata: dict | None):
    meta = dict(metadata or {})
    meta.setdefault("schema_version", SCHEMA_VERSION)
    write_json(path.with_name(path.name + ".json"), meta)


def save_field(path, field: SpectralField, metadata: dict | None = None) -> None:
    path = Path(path)
    payload = np.ascontiguousarray(field.coeffs, dtype="<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(_FIELD_MAGIC)
        fh.write(_pack_spec(field.spec))
        fh.write(payload)
    _write_sidecar(path, metadata)


def load_field(path):
    path = Path(path)
    buf = path.read_bytes()
    if buf[:5] != _FIELD_MAGIC:
        raise ValueError(f"{path} is not a field container")
    spec, off = _unpack_spec(buf, 5)
    count = spec.n_points
    arr = np.frombuffer(buf, dtype="<c16", count=count, offset=off)
    coeffs = arr.reshape(spec.resolution).astype(np.complex128)
    meta_path = path.with_name(path.name + ".json")
    metadata = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return SpectralField(spec, coeffs), metadata


def save_trajectory(path, traj: Trajectory, metadata: dict | None = None) -> None:
    path = Path(path)
    payload = np.ascontiguousarray(traj.coeffs, dtype="<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(_TRAJ_MAGIC)
        fh.write(_pack_spec(traj.spec))
        fh.write(struct.pack("<Q", len(traj)))
        fh.write(struct.pack("<d", traj.t0))
        fh.write(struct.pack("<d", traj.dt))
        fh.write(payload)
    _write_sidecar(path, metadata)


def load_trajectory(path):
    path = Path(path)
    buf = path.read_bytes()
    if buf[:5] != _TRAJ_MAGIC:
        raise ValueError(f"{path} is not a trajectory container")
    spec, off = _unpack_spec(buf, 5)
    (n_times,) = struct.unpack_from("<Q", buf, off)
    off += 8
    (t0,) = struct.unpack_from("<d", buf, off)
    off += 8
    (dt,) = struct.unpack_from("<d", buf, off)
    off += 8
    count = n_times * spec.n_points
    arr = np.frombuffer(buf, dtype="<c16", count=count, offset=off)
    coeffs = arr.reshape((n_times,) + spec.resolution).astype(np.complex128)
    meta_path = path.with_name(path.name + ".json")
    metadata = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return Trajectory(spec, t0, dt, coeffs), metadata


def format_float(x) -> str:
    """Shortest round-trip decimal form; stable across runs and platforms."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows) -> None:
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, str):
                cells.append(cell)
            elif isinstance(cell, (bool, np.bool_)):
                cells.append("true" if cell else "false")
            elif isinstance(cell, (int, np.integer)):
                cells.append(str(int(cell)))
            else:
                cells.append(format_float(cell))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", newline="\n")


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def write_json(path, obj) -> None:
    path = Path(path)
    text = json.dumps(_jsonify(obj), indent=2, sort_keys=True, allow_nan=True)
    path.write_text(text + "\n", newline="\n")

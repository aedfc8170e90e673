"""Persistence: CSV dumps, binary checkpoints, PGM rasters, JSON reports, run manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from .solver import SolutionField

__all__ = [
    "write_grid_csv",
    "write_plane_csv",
    "save_checkpoint",
    "load_checkpoint",
    "write_pgm",
    "read_pgm",
    "write_thin_csv",
    "read_points_csv",
    "write_report",
    "params_hash",
    "append_manifest",
    "CheckpointError",
]

MAGIC = b"THINFREE1"


class CheckpointError(ValueError):
    pass


def _prepare(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_grid_csv(field, path):
    """Every grid node as ``i,j,k,x,y,z,u`` (``i,k,x,z,u`` when n = 1)."""
    d = field.domain
    path = _prepare(path)
    ax = d.thin_axis()
    zs = d.normal_axis()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if d.n == 2:
            w.writerow(["i", "j", "k", "x", "y", "z", "u"])
            for (i, j, k), u in np.ndenumerate(field.values):
                w.writerow([i, j, k, float(ax[i]), float(ax[j]), float(zs[k]), float(u)])
        else:
            w.writerow(["i", "k", "x", "z", "u"])
            for (i, k), u in np.ndenumerate(field.values):
                w.writerow([i, k, float(ax[i]), float(zs[k]), float(u)])
    return path


def write_plane_csv(field, spec, path):
    """Thin-plane nodes as ``i,j,x,y,u,phi`` (``i,x,u,phi`` when n = 1)."""
    d = field.domain
    path = _prepare(path)
    ax = d.thin_axis()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if d.n == 2:
            w.writerow(["i", "j", "x", "y", "u", "phi"])
            for (i, j), u in np.ndenumerate(field.plane):
                w.writerow([i, j, float(ax[i]), float(ax[j]), float(u), float(spec.obstacle[i, j])])
        else:
            w.writerow(["i", "x", "u", "phi"])
            for (i,), u in np.ndenumerate(field.plane):
                w.writerow([i, float(ax[i]), float(u), float(spec.obstacle[i])])
    return path


def _padded_dims(dims):
    return (1,) * (3 - len(dims)) + tuple(dims)


def save_checkpoint(field, path):
    """Magic, three little-endian int64 dims, then little-endian float64 values in C order."""
    path = _prepare(path)
    dims = _padded_dims(field.domain.dims)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<3q", *dims))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())
    return path


def load_checkpoint(path, domain):
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file")
    off = len(MAGIC)
    if len(raw) < off + 24:
        raise CheckpointError("truncated header")
    dims = struct.unpack("<3q", raw[off:off + 24])
    if dims != _padded_dims(domain.dims):
        raise CheckpointError(f"checkpoint grid {dims} does not match domain {domain.dims}")
    body = raw[off + 24:]
    count = int(np.prod(domain.dims))
    if len(body) != 8 * count:
        raise CheckpointError("payload size does not match the header")
    values = np.frombuffer(body, dtype="<f8").reshape(domain.dims)
    return SolutionField(domain, values.astype(float), method="checkpoint")


def _image_rows(mask):
    """Rows of the image top to bottom: ``+y`` up, ``x`` to the right."""
    m = np.asarray(mask)
    if m.ndim == 1:
        return m[None, :]
    return m.T[::-1]


def write_pgm(mask, path, overlay=None):
    """Plain PGM: 255 for members, 0 otherwise, 128 on ``overlay`` pixels."""
    path = _prepare(path)
    img = np.where(_image_rows(mask), 255, 0)
    if overlay is not None:
        img = np.where(_image_rows(overlay), 128, img)
    height, width = img.shape
    lines = ["P2", f"{width} {height}", "255"]
    lines += [" ".join(str(int(v)) for v in row) for row in img]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_pgm(path):
    tokens = Path(path).read_text().split()
    if not tokens or tokens[0] != "P2":
        raise ValueError("not a plain PGM file")
    width, height, _ = (int(t) for t in tokens[1:4])
    return np.array([int(t) for t in tokens[4:]], dtype=int).reshape(height, width)


def write_thin_csv(s, path):
    """Membership of every plane node as ``i,j,x,y,in``."""
    d = s.domain
    path = _prepare(path)
    ax = d.thin_axis()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if d.n == 2:
            w.writerow(["i", "j", "x", "y", "in"])
            for (i, j), v in np.ndenumerate(s.mask):
                w.writerow([i, j, float(ax[i]), float(ax[j]), int(v)])
        else:
            w.writerow(["i", "x", "in"])
            for (i,), v in np.ndenumerate(s.mask):
                w.writerow([i, float(ax[i]), int(v)])
    return path


def read_points_csv(path):
    """Points from a CSV of ``x,y`` rows; a non-numeric first row is taken as a header."""
    rows = []
    with Path(path).open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            row = [c.strip() for c in row if c.strip()]
            if not row:
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if lineno == 1 and not rows:
                    continue
                raise ValueError(f"{path}:{lineno}: expected numbers, got {row}") from None
    if not rows:
        raise ValueError(f"{path}: no points")
    if len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: rows have different lengths")
    return np.array(rows, dtype=float)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, Path):
        return obj.as_posix()
    return obj


def write_report(report, path):
    """JSON with the report's own key order; no timestamps, so reruns are byte-identical."""
    path = _prepare(path)
    data = report.to_dict() if hasattr(report, "to_dict") else report
    path.write_text(json.dumps(_jsonable(data), indent=2, allow_nan=False) + "\n")
    return path


def params_hash(params):
    blob = json.dumps(_jsonable(params), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def append_manifest(out_dir, name, params, passed, wall_time):
    """Append ``name,params_hash,status,wall_time_s`` to ``runs.csv``."""
    path = _prepare(Path(out_dir) / "runs.csv")
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["name", "params_hash", "status", "wall_time_s"])
        w.writerow([name, params_hash(params), "pass" if passed else "fail", f"{wall_time:.3f}"])
    return path

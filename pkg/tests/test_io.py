import csv
import json
import struct

import numpy as np
import pytest

from thinfree import io as tio
from thinfree.setgeom import ThinSet
from thinfree.solver import ObstacleProblemSpec, SolutionField, build_domain


@pytest.fixture
def field():
    d = build_domain(2, 1.0, 0.5)
    values = np.arange(np.prod(d.dims), dtype=float).reshape(d.dims) / 7
    return SolutionField(d, values)


def test_checkpoint_layout(field, tmp_path):
    path = tio.save_checkpoint(field, tmp_path / "u.bin")
    raw = path.read_bytes()
    assert raw[:9] == b"THINFREE1"
    assert struct.unpack("<3q", raw[9:33]) == (5, 5, 3)
    assert np.array_equal(np.frombuffer(raw[33:], "<f8"), field.values.ravel())


def test_checkpoint_round_trip(field, tmp_path):
    path = tio.save_checkpoint(field, tmp_path / "u.bin")
    back = tio.load_checkpoint(path, field.domain)
    assert np.array_equal(back.values, field.values)


def test_checkpoint_one_dimensional(tmp_path):
    d = build_domain(1, 1.0, 0.25)
    f = SolutionField(d, np.ones(d.dims))
    raw = tio.save_checkpoint(f, tmp_path / "u.bin").read_bytes()
    assert struct.unpack("<3q", raw[9:33]) == (1, 9, 5)
    assert np.array_equal(tio.load_checkpoint(tmp_path / "u.bin", d).values, f.values)


def test_checkpoint_errors(field, tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE")
    with pytest.raises(tio.CheckpointError):
        tio.load_checkpoint(bad, field.domain)
    path = tio.save_checkpoint(field, tmp_path / "u.bin")
    with pytest.raises(tio.CheckpointError):
        tio.load_checkpoint(path, build_domain(2, 1.0, 0.25))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(tio.CheckpointError):
        tio.load_checkpoint(path, field.domain)


def test_grid_and_plane_csv(field, tmp_path):
    rows = list(csv.reader(tio.write_grid_csv(field, tmp_path / "g.csv").open()))
    assert rows[0] == ["i", "j", "k", "x", "y", "z", "u"]
    assert len(rows) == 1 + field.domain.size
    assert rows[2][:3] == ["0", "0", "1"]
    spec = ObstacleProblemSpec(field.domain, -1.0, 0.0)
    rows = list(csv.reader(tio.write_plane_csv(field, spec, tmp_path / "p.csv").open()))
    assert rows[0] == ["i", "j", "x", "y", "u", "phi"]
    assert rows[1] == ["0", "0", "-1.0", "-1.0", "0.0", "-1.0"]
    assert len(rows) == 26


def test_pgm_orientation_and_overlay(tmp_path):
    d = build_domain(2, 1.0, 0.5)
    m = np.zeros(d.thin_shape, bool)
    m[4, 4] = True  # x = 1, y = 1: top right pixel
    over = np.zeros_like(m)
    over[0, 0] = True  # bottom left
    img = tio.read_pgm(tio.write_pgm(m, tmp_path / "a.pgm", overlay=over))
    assert img.shape == (5, 5)
    assert img[0, 4] == 255 and img[4, 0] == 128 and img.sum() == 255 + 128


def test_pgm_full_and_empty(tmp_path):
    d = build_domain(2, 1.0, 0.25)
    full = tio.read_pgm(tio.write_pgm(np.ones(d.thin_shape, bool), tmp_path / "f.pgm"))
    empty = tio.read_pgm(tio.write_pgm(np.zeros(d.thin_shape, bool), tmp_path / "e.pgm"))
    assert (full == 255).all() and (empty == 0).all()
    assert (tmp_path / "f.pgm").read_text().startswith("P2\n9 9\n255\n")


def test_thin_csv(tmp_path):
    d = build_domain(2, 1.0, 0.5)
    s = ThinSet(d, np.eye(5, dtype=bool))
    rows = list(csv.DictReader(tio.write_thin_csv(s, tmp_path / "s.csv").open()))
    assert sum(int(r["in"]) for r in rows) == 5


def test_read_points(tmp_path):
    p = tmp_path / "target.csv"
    p.write_text("x,y\n0.1,0.2\n-0.3, 0.4\n\n")
    assert np.array_equal(tio.read_points_csv(p), [[0.1, 0.2], [-0.3, 0.4]])
    p.write_text("0.1,0.2\n0.3,abc\n")
    with pytest.raises(ValueError):
        tio.read_points_csv(p)
    p.write_text("x,y\n")
    with pytest.raises(ValueError):
        tio.read_points_csv(p)


def test_report_json_is_strict(tmp_path):
    data = {"a": float("nan"), "b": np.float64(np.inf), "c": np.arange(3), "d": np.bool_(True)}
    path = tio.write_report(data, tmp_path / "r.json")
    assert json.loads(path.read_text()) == {"a": "nan", "b": "inf", "c": [0, 1, 2], "d": True}


def test_manifest(tmp_path):
    tio.append_manifest(tmp_path, "one", {"a": 1}, True, 1.23456)
    tio.append_manifest(tmp_path, "two", {"a": 2}, False, 0.5)
    rows = list(csv.reader((tmp_path / "runs.csv").open()))
    assert rows[0] == ["name", "params_hash", "status", "wall_time_s"]
    assert rows[1][2:] == ["pass", "1.235"] and rows[2][2] == "fail"
    assert rows[1][1] == tio.params_hash({"a": 1}) != tio.params_hash({"a": 2})

import os
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from regionedit import fileio
from regionedit import jacobian as jac
from regionedit.fileio import FormatError, Reader, Writer, atomic_write
from regionedit.pipeline import Trajectory, load_trajectory, save_trajectory
from regionedit.rng import Rng


def test_frame_layout():
    w = Writer()
    w.u32(7)
    w.f64(np.array([1.5]))
    data = w.framed(b"TEST")
    payload = struct.pack("<I", 7) + struct.pack("<d", 1.5)
    assert data == b"TEST" + payload + struct.pack("<I", zlib.crc32(payload))


@given(st.lists(st.integers(1, 5), min_size=0, max_size=4), st.integers(0, 1000))
def test_tensor_round_trip(shape, seed):
    arr = Rng(seed).fill_gaussian(tuple(shape)) if shape else np.array(Rng(seed).next_gaussian())
    w = Writer()
    w.tensor(arr)
    r = Reader(w.framed(b"ABCD"), b"ABCD")
    back = r.tensor("x")
    r.finish()
    assert back.shape == arr.shape and np.array_equal(back, arr)


def test_reader_errors():
    w = Writer()
    w.u32(1, 2, 3)
    data = w.framed(b"ABCD")
    with pytest.raises(FormatError, match="bad magic"):
        Reader(data, b"WXYZ")
    r = Reader(data, b"ABCD", what="thing")
    r.u32("a", 2)
    with pytest.raises(FormatError, match="thing: size mismatch, expected 16 bytes, got 20"):
        r.finish()
    r = Reader(data, b"ABCD")
    with pytest.raises(FormatError, match="truncated while reading counts: expected 24 bytes, got 20"):
        r.u32("counts", 4)
    with pytest.raises(FormatError, match="truncated"):
        Reader(b"AB", b"ABCD")


def test_reader_flags_corruption_on_structural_errors():
    w = Writer()
    w.tensor(np.ones(3))
    data = bytearray(w.framed(b"ABCD"))
    data[4] = 200  # rank byte
    with pytest.raises(FormatError, match="implausible rank 200 .*checksum mismatch"):
        Reader(bytes(data), b"ABCD").tensor("x")


def test_atomic_write_leaves_no_partial_file(tmp_path, monkeypatch):
    target = tmp_path / "out.bin"
    target.write_bytes(b"old")

    def boom(src, dst):
        raise OSError("killed")

    monkeypatch.setattr(fileio.os, "replace", boom)
    with pytest.raises(OSError):
        atomic_write(target, b"new contents")
    assert target.read_bytes() == b"old"
    assert os.listdir(tmp_path) == ["out.bin"]


def test_atomic_write_creates_parents(tmp_path):
    atomic_write(tmp_path / "a" / "b" / "c.bin", b"x")
    assert (tmp_path / "a" / "b" / "c.bin").read_bytes() == b"x"


# ---------------------------------------------------------------- direction files


def _direction_set():
    V = np.linalg.qr(Rng(1).fill_gaussian((6, 3)))[0].T
    return jac.DirectionSet(V, np.array([3.0, 2.0, 1.0]), 17, jac.ProjectionMode.SUBSPACE, 4, (True, True, False))


def test_directions_round_trip(tmp_path):
    ds = _direction_set()
    p = tmp_path / "d.rbed"
    jac.save_directions(ds, p)
    back = jac.load_directions(p)
    assert np.array_equal(back.directions, ds.directions)
    assert np.array_equal(back.singular_values, ds.singular_values)
    assert (back.t, back.projection_mode, back.unmasked_rank, back.converged) == (17, ds.projection_mode, 4, None)


def test_directions_layout(tmp_path):
    p = tmp_path / "d.rbed"
    jac.save_directions(_direction_set(), p)
    data = p.read_bytes()
    assert data[:4] == b"RBED"
    assert struct.unpack_from("<6I", data, 4) == (1, 17, 3, 6, 2, 4)
    assert len(data) == 4 + 24 + 8 * (3 + 18) + 4


@pytest.mark.parametrize("cut", [10, 60, 150])
def test_directions_truncated(tmp_path, cut):
    p = tmp_path / "d.rbed"
    jac.save_directions(_direction_set(), p)
    data = p.read_bytes()
    p.write_bytes(data[:cut])
    with pytest.raises(FormatError, match=f"expected \\d+ bytes, got {cut}"):
        jac.load_directions(p)


def test_directions_unknown_mode(tmp_path):
    p = tmp_path / "d.rbed"
    jac.save_directions(_direction_set(), p)
    data = bytearray(p.read_bytes())
    data[20:24] = struct.pack("<I", 9)
    payload = bytes(data[4:-4])
    data[-4:] = struct.pack("<I", zlib.crc32(payload))
    p.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="projection mode code 9"):
        jac.load_directions(p)


# ---------------------------------------------------------------- trajectory files


def test_trajectory_round_trip(tmp_path):
    rng = Rng(2)
    traj = Trajectory((0, 1, 2, 3), rng.fill_gaussian((4, 1, 4, 4)), rng.fill_gaussian((4, 5)), 2**63 + 5, 3)
    p = tmp_path / "t.rbet"
    save_trajectory(traj, p)
    back = load_trajectory(p)
    assert back.ts == traj.ts and back.seed == traj.seed and back.T == 3
    assert np.array_equal(back.xs, traj.xs) and np.array_equal(back.hs, traj.hs)


def test_trajectory_single_entry(tmp_path):
    traj = Trajectory((5,), np.ones((1, 1, 4, 4)), np.zeros((1, 2)), 0, 9)
    p = tmp_path / "t.rbet"
    save_trajectory(traj, p)
    assert load_trajectory(p).ts == (5,)


def test_trajectory_bad_magic(tmp_path):
    p = tmp_path / "t.rbet"
    p.write_bytes(b"RBEW" + bytes(40))
    with pytest.raises(FormatError, match="bad magic"):
        load_trajectory(p)

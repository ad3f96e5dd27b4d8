import struct

import numpy as np
import pytest

from mhdlab.builtins import make_builtin
from mhdlab.dynamics import SimState
from mhdlab.errors import IntegrityError, UnsupportedVersionError
from mhdlab.snapshot import decode, encode, read_snapshot, write_snapshot


@pytest.fixture
def state(mesh2):
    v, B = make_builtin("solenoidal-random", mesh2, seed=5)
    p = 0.01 * (1 - np.sum(mesh2.y**2, axis=0))
    return SimState(mesh2, mesh2.y + 0.01 * v, v, B, p, 0.125)


def test_round_trip_is_bit_identical(state, tmp_path):
    path = tmp_path / "s.mhdl"
    write_snapshot(state, str(path), kappa=100.0, lam=0.1)
    snap = read_snapshot(str(path))
    for name in ("x", "u", "B", "p"):
        assert np.array_equal(getattr(snap.state, name), getattr(state, name))
    assert snap.state.t == 0.125 and snap.kappa == 100.0 and snap.lam == 0.1
    assert encode(snap.state, 100.0, 0.1) == path.read_bytes()
    assert snap.N_order is None


def test_ladder_extension(state):
    n = state.mesh.nnode
    lp = [np.full(n, float(k)) for k in range(3)]
    lB = [np.full((2, n), -float(k)) for k in range(3)]
    snap = decode(encode(state, 10.0, 1.0, lp, lB))
    assert snap.N_order == 2
    assert all(np.array_equal(a, b) for a, b in zip(snap.ladder_p, lp))
    assert all(np.array_equal(a, b) for a, b in zip(snap.ladder_B, lB))
    with pytest.raises(ValueError):
        encode(state, 10.0, 1.0, lp, lB[:2])


def test_corruption_is_detected(state):
    buf = bytearray(encode(state, 10.0, 1.0))
    buf[100] ^= 0x10
    with pytest.raises(IntegrityError):
        decode(bytes(buf))
    with pytest.raises(IntegrityError):
        decode(b"MHDL")
    with pytest.raises(IntegrityError):
        decode(b"XXXX" + bytes(encode(state, 10.0, 1.0))[4:])


def test_unknown_version(state):
    buf = bytearray(encode(state, 10.0, 1.0))
    struct.pack_into("<I", buf, 4, 99)
    with pytest.raises(UnsupportedVersionError):
        decode(bytes(buf))


def test_bare_state_needs_parameters(state, tmp_path):
    with pytest.raises(ValueError):
        write_snapshot(state, str(tmp_path / "x.mhdl"))

"""Binary snapshot files.

Layout (little-endian):

    b"MHDL"                      magic
    u32 version, u32 dim         format version and space dimension
    u32 K, u32 p, u32 nnode      grid dims: elements per block side, degree, node count
    f64 a                        half-width of the central block
    f64 t, f64 kappa, f64 lam
    u32 flags                    bit 0: ladder extension present
    payload                      float64: x (d rows), u (d), B (d), p (1)
                                 [u32 N, then p_k and B_k for k = 0..N]
    u32 crc32                    of the payload bytes
"""

import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError, UnsupportedVersionError
from .mesh import build_ball_mesh

MAGIC = b"MHDL"
VERSION = 1
FLAG_LADDER = 1
_HEAD = struct.Struct("<4sIIIII dddd I")


@dataclass
class Snapshot:
    state: object
    kappa: float
    lam: float
    ladder_p: list = None
    ladder_B: list = None

    @property
    def N_order(self):
        return None if self.ladder_p is None else len(self.ladder_p) - 1


def _mesh_for(dim, K, p, a, cache={}):
    key = (dim, K, p, a)
    if key not in cache:
        cache[key] = build_ball_mesh(dim, K, p, a)
    return cache[key]


def encode(state, kappa, lam, ladder_p=None, ladder_B=None):
    mesh = state.mesh
    d, n = mesh.dim, mesh.nnode
    flags = FLAG_LADDER if ladder_p is not None else 0
    head = _HEAD.pack(MAGIC, VERSION, d, mesh.K, mesh.p, n, float(mesh.a), float(state.t),
                      float(kappa), float(lam), flags)
    parts = [np.asarray(state.x, "<f8").reshape(d, n), np.asarray(state.u, "<f8").reshape(d, n),
             np.asarray(state.B, "<f8").reshape(d, n), np.asarray(state.p, "<f8").reshape(1, n)]
    payload = b"".join(np.ascontiguousarray(a).tobytes() for a in parts)
    if flags & FLAG_LADDER:
        if ladder_B is None or len(ladder_B) != len(ladder_p):
            raise ValueError("ladder needs matching p_k and B_k lists")
        N = len(ladder_p) - 1
        blocks = [struct.pack("<I", N)]
        for pk, Bk in zip(ladder_p, ladder_B):
            blocks.append(np.ascontiguousarray(np.asarray(pk, "<f8").reshape(n)).tobytes())
            blocks.append(np.ascontiguousarray(np.asarray(Bk, "<f8").reshape(d, n)).tobytes())
        payload += b"".join(blocks)
    return head + payload + struct.pack("<I", zlib.crc32(payload))


def decode(buf):
    from .dynamics import SimState
    if len(buf) < _HEAD.size + 4:
        raise IntegrityError("snapshot truncated")
    magic, version, d, K, p, n, a, t, kappa, lam, flags = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise IntegrityError("bad magic bytes")
    if version != VERSION:
        raise UnsupportedVersionError(f"snapshot format version {version} (supported: {VERSION})")
    payload = buf[_HEAD.size:-4]
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(payload) != crc:
        raise IntegrityError("CRC mismatch")
    base = (3 * d + 1) * n * 8
    if len(payload) < base:
        raise IntegrityError("payload shorter than header implies")
    arr = np.frombuffer(payload[:base], dtype="<f8").reshape(3 * d + 1, n).astype(float)
    mesh = _mesh_for(d, K, p, a)
    if mesh.nnode != n:
        raise IntegrityError("node count does not match grid dims")
    state = SimState(mesh, arr[:d].copy(), arr[d:2 * d].copy(), arr[2 * d:3 * d].copy(),
                     arr[3 * d].copy(), t)
    snap = Snapshot(state, kappa, lam)
    rest = payload[base:]
    if flags & FLAG_LADDER:
        (N,) = struct.unpack_from("<I", rest, 0)
        blk = np.frombuffer(rest[4:], dtype="<f8")
        if blk.size != (N + 1) * (d + 1) * n:
            raise IntegrityError("ladder extension has the wrong length")
        blk = blk.reshape(N + 1, d + 1, n).astype(float)
        snap.ladder_p = [blk[k, 0].copy() for k in range(N + 1)]
        snap.ladder_B = [blk[k, 1:].copy() for k in range(N + 1)]
    elif rest:
        raise IntegrityError("unexpected trailing payload")
    return snap


def write_snapshot(obj, path, kappa=None, lam=None):
    """Write a SimState (kappa, lam required) or a CompatibleData."""
    if hasattr(obj, "N_order") and hasattr(obj, "u0"):
        buf = encode(obj.state(), obj.kappa, obj.lam, obj.p, obj.B)
    else:
        if kappa is None or lam is None:
            raise ValueError("kappa and lam are needed to write a bare state")
        buf = encode(obj, kappa, lam)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf)
    os.replace(tmp, path)


def read_snapshot(path):
    with open(path, "rb") as fh:
        return decode(fh.read())

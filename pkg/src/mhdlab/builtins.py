"""Registry of built-in initial data (v0, B0) evaluated on the reference nodes."""

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.special import j0

from .dynamics import bessel_j01

BUILTINS = ("rest", "rotation", "solenoidal-random", "bessel-mode", "strain")

# B0 vanishes to this order at the boundary so that Lap B0 and Lap^2 B0 do too
BOUNDARY_FLATNESS = 6


def _poly_eval(c, y, deriv=None):
    """Evaluate a 2D/3D power-series coefficient array, optionally differentiated."""
    if deriv is not None:
        c = npoly.polyder(c, axis=deriv)
    if y.shape[0] == 2:
        return npoly.polyval2d(y[0], y[1], c)
    return npoly.polyval3d(y[0], y[1], y[2], c)


def _random_coeffs(rng, dim, degree, scale):
    c = rng.standard_normal((degree + 1,) * dim) * scale
    idx = np.indices(c.shape).sum(axis=0)
    c[idx > degree] = 0.0
    return c


def _flat_factor(y, m):
    s = 1.0 - np.sum(y**2, axis=0)
    f = s**m
    df = -2.0 * m * s ** (m - 1) * y
    return f, df


def _perp_grad(y, c, m=None):
    """Rotated gradient of chi = c(y) or chi = (1-|y|^2)^m c(y) in 2D."""
    g = _poly_eval(c, y)
    dg = np.stack([_poly_eval(c, y, 0), _poly_eval(c, y, 1)])
    if m:
        f, df = _flat_factor(y, m)
        dg = f * dg + df * g
    return np.stack([-dg[1], dg[0]])


def _curl(y, cs, m=None):
    """Curl of A = (1-|y|^2)^m (c_0, c_1, c_2)(y) in 3D."""
    A = np.stack([_poly_eval(c, y) for c in cs])
    dA = np.stack([np.stack([_poly_eval(cs[k], y, i) for k in range(3)]) for i in range(3)])
    if m:
        f, df = _flat_factor(y, m)
        dA = f * dA + df[:, None] * A[None]
    # dA[i, k] = d_i A^k
    return np.stack([dA[1, 2] - dA[2, 1], dA[2, 0] - dA[0, 2], dA[0, 1] - dA[1, 0]])


def make_builtin(name, mesh, seed=0, amplitude=None, omega=1.0, strain=1.0, b=None):
    """Return (v0, B0) for a registered builtin on the mesh's reference nodes."""
    y = mesh.y
    d = mesh.dim
    z = np.zeros((d, mesh.nnode))
    if name == "rest":
        return z.copy(), z.copy()
    if name == "rotation":
        v = z.copy()
        v[0], v[1] = -omega * y[1], omega * y[0]
        return v, z.copy()
    if name == "strain":
        v = z.copy()
        if d == 2:
            v[0], v[1] = strain * y[0], -strain * y[1]
        else:
            v[0], v[1], v[2] = strain * y[0], -strain * y[1], 0.0 * y[2]
        B = z.copy()
        if b:
            if d == 2:
                B = b * _perp_grad(y, np.ones((1, 1)), BOUNDARY_FLATNESS)
            else:
                one = np.ones((1, 1, 1))
                B = b * _curl(y, [0 * one, 0 * one, one], BOUNDARY_FLATNESS)
            B[:, mesh.bnodes] = 0.0
        return v, B
    if name == "bessel-mode":
        amp = 1e-3 if b is None else b
        r = np.sqrt(np.sum(y**2, axis=0))
        B = z.copy()
        if d == 2:
            B[0] = amp * j0(bessel_j01() * r)
        else:
            B[0] = amp * np.sinc(r)  # sin(pi r)/(pi r)
        B[:, mesh.bnodes] = 0.0
        return z.copy(), B
    if name == "solenoidal-random":
        rng = np.random.default_rng(seed)
        amp = 0.5 if amplitude is None else amplitude
        bamp = 0.5 if b is None else b
        if d == 2:
            v = _perp_grad(y, _random_coeffs(rng, 2, 3, amp / 3.0))
            B = _perp_grad(y, _random_coeffs(rng, 2, 2, bamp / 3.0), BOUNDARY_FLATNESS)
        else:
            v = _curl(y, [_random_coeffs(rng, 3, 2, amp / 3.0) for _ in range(3)])
            B = _curl(y, [_random_coeffs(rng, 3, 1, bamp / 3.0) for _ in range(3)], BOUNDARY_FLATNESS)
        B[:, mesh.bnodes] = 0.0
        return v, B
    raise KeyError(f"unknown builtin {name!r}; choose from {', '.join(BUILTINS)}")


def analytic_pressure(name, y, omega=1.0, strain=1.0):
    """Closed-form incompressible pressure where one exists (B0 = 0)."""
    r2 = np.sum(y**2, axis=0)
    if name == "rest":
        return np.zeros_like(r2)
    if name == "rotation":
        return 0.5 * omega**2 * (r2 - 1.0)
    if name == "strain":
        return 0.5 * strain**2 * (1.0 - r2) if y.shape[0] == 2 else None
    return None

"""Compressible initial data satisfying the boundary compatibility conditions.

Given solenoidal (v0, B0), the velocity is corrected by a gradient,
u0 = v0 + grad(phi), and the ladder p_k = D_t^k p, B_k = D_t^k B at t = 0 is
found from the elliptic relations obtained by differentiating the heat and
wave equations in time:

    Lap p_k   = p_{k+2} / kappa - R_k,        p_k = 0 on the boundary,
    lam Lap B_k = B_{k+1} - R^B_k,             B_k = 0 on the boundary,
    Lap phi   = -p_1 / (kappa + p_0) - div v0, grad_N phi = 0.

The remainders R_k, R^B_k are everything in D_t^{k+2} p and D_t^{k+1} B except
the leading Laplacian. They are read off from time jets of the equations of
motion evaluated with the current ladder, so the constants of the lower-order
source terms never need to be written out by hand.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import IterationDivergenceError, PreconditionError
from .geometry import FlowMapState, compute_geometry, element_metric
from .jets import Jet
from .numerics import (EllipticProblem, dirichlet_direct, divergence, gradient, grad_nodes,
                       laplacian, poisson_solve)

log = logging.getLogger(__name__)

TOL = 1e-10
MAXITER = 200
# relative divergence accepted as discretisation error of a solenoidal field
DIV_TOL = 1e-2


def incompressible_pressure(cache, v0, B0, div_tol=DIV_TOL, rtol=1e-10):
    """Pressure q0 of the incompressible system at t = 0.

    Solves Lap(q0 + |B0|^2/2) = -d_i v^k d_k v^i + d_i B^k d_k B^i with zero
    boundary trace. Returns q0, the total pressure and its RT margin.
    """
    from .energies import rt_margin
    v0 = np.asarray(v0, dtype=float)
    B0 = np.asarray(B0, dtype=float)
    dv = gradient(cache, v0)
    dB = gradient(cache, B0)
    for name, g in (("v0", dv), ("B0", dB)):
        div = np.abs(np.einsum("iim->m", g))
        scale = max(1.0, float(np.max(np.abs(g))))
        if np.max(div) > div_tol * scale:
            raise PreconditionError(f"{name} is not solenoidal (max divergence {np.max(div):.3e})")
    b = cache.mesh.bnodes
    if np.max(np.abs(B0[:, b]), initial=0.0) > 1e-10:
        raise PreconditionError("B0 does not vanish on the boundary")
    rhs = -np.einsum("ikm,kim->m", dv, dv) + np.einsum("ikm,kim->m", dB, dB)
    prob = EllipticProblem(rhs, cache, "dirichlet", rtol=rtol)
    P0 = poisson_solve(prob)
    q0 = P0 - 0.5 * np.sum(B0**2, axis=0)
    margin = rt_margin(None, P=P0, cache=cache)
    return {"q0": q0, "P0": P0, "eps0": margin["eps0"], "iterations": prob.iterations}


@dataclass
class CompatibleData:
    mesh: object
    x0: np.ndarray
    u0: np.ndarray
    v0: np.ndarray
    phi: np.ndarray
    p: list
    B: list
    kappa: float
    lam: float
    N_order: int
    trace_residuals: dict = field(default_factory=dict)
    log: list = field(default_factory=list)
    iterations: int = 0
    closure_alpha: float = 0.0

    @property
    def p0(self):
        return self.p[0]

    @property
    def B0(self):
        return self.B[0]

    def state(self):
        from .dynamics import SimState
        return SimState(self.mesh, self.x0.copy(), self.u0.copy(), self.B[0].copy(),
                        self.p[0].copy(), 0.0)


def _strong_rates(mesh, X, U, Bv, P, kappa, lam):
    """Unpinned strong-form rates of (u, B, p) for jets."""
    d = mesh.dim
    em = element_metric(mesh, X)
    du = grad_nodes(mesh, em, U)
    dB = grad_nodes(mesh, em, Bv)
    divu = sum(du[i, i] for i in range(d))
    Ptot = P + 0.5 * sum(Bv[k] * Bv[k] for k in range(d))
    dP = grad_nodes(mesh, em, Ptot)
    rho = 1.0 + P / kappa
    udot, bdot = [], []
    ddB = grad_nodes(mesh, em, dB) if lam > 0 else None
    for k in range(d):
        tension = sum(Bv[l] * dB[l, k] for l in range(d))
        udot.append((tension - dP[k]) / rho)
        bd = sum(Bv[l] * du[l, k] for l in range(d)) - Bv[k] * divu
        if lam > 0:
            bd = bd + lam * sum(ddB[i, i, k] for i in range(d))
        bdot.append(bd)
    pdot = -(kappa + P) * divu
    stack = lambda parts: Jet(np.stack([q.c for q in parts], axis=1))
    return stack(udot), stack(bdot), pdot


def ladder_jets(mesh, x0, u0, p_lad, B_lad, kappa, lam):
    """Rates implied by the equations of motion for a given ladder.

    Returns (p_hat, B_hat, u_lad) where p_hat[j] and B_hat[j] are the j-th
    time derivatives predicted from lower rungs.
    """
    M = len(p_lad) - 1
    fact = np.cumprod([1.0] + list(range(1, M + 2)))
    d = mesh.dim
    n = mesh.nnode
    pc = np.stack([p_lad[j] / fact[j] for j in range(M + 1)])
    bc = np.zeros((M + 1, d, n))
    for j in range(min(len(B_lad), M + 1)):
        bc[j] = B_lad[j] / fact[j]
    uc = np.zeros((M + 1, d, n))
    uc[0] = u0
    xc = np.zeros((M + 1, d, n))
    xc[0] = x0
    for _ in range(M + 1):
        xc[1:] = uc[:-1] / np.arange(1, M + 1).reshape(-1, 1, 1)
        udot, _, _ = _strong_rates(mesh, Jet(xc), Jet(uc), Jet(bc), Jet(pc), kappa, lam)
        uc[1:] = udot.c[:-1] / np.arange(1, M + 1).reshape(-1, 1, 1)
    xc[1:] = uc[:-1] / np.arange(1, M + 1).reshape(-1, 1, 1)
    _, bdot, pdot = _strong_rates(mesh, Jet(xc), Jet(uc), Jet(bc), Jet(pc), kappa, lam)
    p_hat = [None] + [fact[m] * pdot.c[m] for m in range(M)]
    B_hat = [None] + [fact[m] * bdot.c[m] for m in range(M)]
    u_lad = [fact[m] * uc[m] for m in range(M + 1)]
    return p_hat, B_hat, u_lad


def _stretch_matrix(cache, u):
    """Pointwise T with (T B)^k = B^l d_l u^k - B^k div u."""
    du = gradient(cache, u)
    d = du.shape[0]
    T = np.swapaxes(du, 0, 1).copy()
    divu = np.einsum("iim->m", du)
    for k in range(d):
        T[k, k] -= divu
    return T


def _stretch(T, B):
    return np.einsum("klm,lm->km", T, B)


def _heat_operator(cache, T, lam):
    """Sparse LU of lam Lap - T on interior nodes, all components coupled.

    Treating the stretching term implicitly keeps the fixed point contractive
    for small lam.
    """
    from .numerics import stiffness_matrix
    mesh = cache.mesh
    ii = mesh.inodes
    d = mesh.dim
    A = stiffness_matrix(cache)[ii][:, ii]
    Vi = cache.V[ii]
    blocks = [[None] * d for _ in range(d)]
    for k in range(d):
        for l in range(d):
            blk = sp.diags(Vi * T[k, l, ii])
            blocks[k][l] = lam * A + blk if k == l else blk
    return splu(sp.bmat(blocks).tocsc())


def _solve_heat_rung(cache, lu, rhs):
    """Solve lam Lap_c B - T B = rhs with B = 0 on the boundary."""
    mesh = cache.mesh
    ii = mesh.inodes
    d = mesh.dim
    b = -(cache.V[ii] * rhs[:, ii]).ravel()
    out = np.zeros((d, mesh.nnode))
    out[:, ii] = lu.solve(b).reshape(d, -1)
    return out


ANDERSON_DEPTH = 5


def _pack(p, Bl, phi):
    return np.concatenate([q.ravel() for q in p] + [q.ravel() for q in Bl] + [phi])


def _unpack(vec, p, Bl, phi):
    out_p, out_B, i = [], [], 0
    for q in p:
        out_p.append(vec[i:i + q.size].reshape(q.shape))
        i += q.size
    for q in Bl:
        out_B.append(vec[i:i + q.size].reshape(q.shape))
        i += q.size
    return out_p, out_B, vec[i:].copy()


class _Anderson:
    """Type-II Anderson mixing for the fixed point x = G(x)."""

    def __init__(self, depth):
        self.depth = depth
        self.X, self.F = [], []

    def update(self, x, gx):
        f = gx - x
        self.X.append(gx)
        self.F.append(f)
        if len(self.F) > self.depth + 1:
            self.X.pop(0)
            self.F.pop(0)
        if len(self.F) == 1:
            return gx.copy()
        dF = np.stack([self.F[i + 1] - self.F[i] for i in range(len(self.F) - 1)], axis=1)
        dX = np.stack([self.X[i + 1] - self.X[i] for i in range(len(self.X) - 1)], axis=1)
        gamma = np.linalg.lstsq(dF, f, rcond=None)[0]
        return gx - dX @ gamma


def _norm(cache, f):
    f = np.asarray(f, dtype=float)
    f2 = f**2 if f.ndim == 1 else np.sum(f**2, axis=0)
    return float(np.sqrt(np.sum(cache.V * f2)))


def construct_compatible(v0, B0, kappa, N_order=2, cache=None, mesh=None, x0=None, lam=1.0,
                         tol=TOL, maxiter=MAXITER):
    """Fixed-point construction of compatible compressible data.

    Each sweep solves the ladder relations for k descending, then updates
    phi and u0. The closure rungs above N_order vanish, except that the rung
    feeding p_1 (which only has to vanish on the boundary) is set to
    kappa * alpha * (1 - |y|^2) with alpha chosen so the Neumann problem for
    phi is exactly solvable.
    """
    if N_order < 0 or N_order > 2:
        raise ValueError("N_order must be 0, 1 or 2")
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if cache is None:
        x0 = mesh.y.copy() if x0 is None else x0
        cache = compute_geometry(FlowMapState(mesh, x0), distance=False)
    mesh = cache.mesh
    x0 = cache.x
    v0 = np.asarray(v0, dtype=float)
    B0 = np.asarray(B0, dtype=float)
    b = mesh.bnodes
    if np.max(np.abs(B0[:, b]), initial=0.0) > 1e-10:
        raise PreconditionError("B0 does not vanish on the boundary")
    dv = divergence(cache, v0)
    if np.max(np.abs(dv)) > DIV_TOL * max(1.0, float(np.max(np.abs(gradient(cache, v0))))):
        raise PreconditionError(f"v0 is not solenoidal (max divergence {np.max(np.abs(dv)):.3e})")
    dB = divergence(cache, B0)
    if np.max(np.abs(dB)) > DIV_TOL * max(1.0, float(np.max(np.abs(gradient(cache, B0))))):
        raise PreconditionError(f"B0 is not solenoidal (max divergence {np.max(np.abs(dB)):.3e})")

    N = N_order
    n, d = mesh.nnode, mesh.dim
    M = N + 2
    p = [np.zeros(n) for _ in range(M + 1)]
    Bl = [B0.copy()] + [np.zeros((d, n)) for _ in range(N + 1)]
    phi = np.zeros(n)
    u0 = v0.copy()
    zeta = 1.0 - np.sum(mesh.y**2, axis=0)
    slot = 3 if N >= 1 else 1
    w_zeta = dirichlet_direct(cache, zeta) if N >= 1 else None
    alpha = 0.0
    hist = []
    it = 0
    acc = _Anderson(ANDERSON_DEPTH)
    for it in range(1, maxiter + 1):
        x_old = _pack(p, Bl, phi)
        p_hat, B_hat, _ = ladder_jets(mesh, x0, u0, p, Bl, kappa, lam)
        if lam > 0 and N >= 1:
            T = _stretch_matrix(cache, u0)
            Blu = _heat_operator(cache, T, lam)
        for k in range(N, -1, -1):
            # pressure rung
            Rk = p_hat[k + 2] / kappa - laplacian(cache, p[k])
            rhs = p[k + 2] / kappa - Rk if k + 2 != slot else -Rk
            new = dirichlet_direct(cache, rhs)
            if k == 1 and N >= 1:
                # closure rung kappa*alpha*zeta makes the phi problem solvable
                num = np.sum(cache.V * (new / (kappa + p[0]) + dv))
                den = np.sum(cache.V * (w_zeta / (kappa + p[0])))
                alpha = -num / den
                new = new + alpha * w_zeta
                p[slot] = kappa * alpha * zeta
            p[k] = new
            # magnetic rung
            if 1 <= k <= N:
                if lam > 0:
                    RB = B_hat[k + 1] - lam * np.stack([laplacian(cache, Bl[k][i]) for i in range(d)])
                    RB = RB - _stretch(T, Bl[k])
                    Bl[k] = _solve_heat_rung(cache, Blu, Bl[k + 1] - RB)
                else:
                    Bl[k] = B_hat[k]
                    Bl[k][:, b] = 0.0
        if N == 0:
            alpha = -np.sum(cache.V * dv) / np.sum(cache.V * zeta)
            p[1] = kappa * alpha * zeta
        prob = EllipticProblem(-p[1] / (kappa + p[0]) - dv, cache, "neumann")
        phi = poisson_solve(prob)
        x_sweep = _pack(p, Bl, phi)
        upd = float(np.linalg.norm(x_sweep - x_old))
        size = float(np.linalg.norm(x_sweep))
        rel = upd / size if size > 0 else upd
        hist.append(rel)
        if not np.isfinite(rel) or rel > 1e8:
            raise IterationDivergenceError("compatible-data iteration diverged", hist)
        if rel < tol:
            u0 = v0 + gradient(cache, phi)
            break
        p, Bl, phi = _unpack(acc.update(x_old, x_sweep), p, Bl, phi)
        u0 = v0 + gradient(cache, phi)
    else:
        raise IterationDivergenceError(
            f"no convergence in {maxiter} iterations (last update {hist[-1]:.3e})", hist)

    data = CompatibleData(mesh=mesh, x0=x0.copy(), u0=u0, v0=v0.copy(), phi=phi,
                          p=[q.copy() for q in p[: N + 1]], B=[q.copy() for q in Bl[: N + 1]],
                          kappa=float(kappa), lam=float(lam), N_order=N, log=hist,
                          iterations=it, closure_alpha=float(alpha))
    data.trace_residuals = compatibility_residual(data)
    return data


def compatibility_residual(data, history=None, npts=None):
    """Max boundary values of D_t^j p and D_t^j B for j <= N_order.

    From the ladder by definition; with a run history, time differences of
    the actual evolution at t = 0 are added as ``p_fd`` / ``B_fd``.
    """
    b = data.mesh.bnodes
    table = {}
    for j in range(data.N_order + 1):
        table[j] = {"p": float(np.max(np.abs(data.p[j][b]), initial=0.0)),
                    "B": float(np.max(np.abs(data.B[j][:, b]), initial=0.0))}
    if history is not None:
        from .energies import _shifted
        for j in range(1, data.N_order + 1):
            m = npts or (j + 3)
            if len(history) < m:
                continue
            pj = _shifted(history, 0, "p", j, m)
            Bj = _shifted(history, 0, "B", j, m)
            table[j]["p_fd"] = float(np.max(np.abs(pj[b])))
            table[j]["B_fd"] = float(np.max(np.abs(Bj[:, b])))
    return table

"""Eulerian differential operators, quadrature and elliptic solves.

Strong derivatives are element-local chain-rule derivatives averaged onto
nodes (DSS). Weak operators (stiffness, lumped mass) come from the same
GLL quadrature and are used for the Poisson solves.
"""

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, splu

from .errors import SolverError, UnsupportedOrderError
from .geometry import grad_e

log = logging.getLogger(__name__)

MAX_ORDER = 4


def grad_nodes(mesh, em, f):
    """Strong gradient: ``out[i, ...] = d_i f[...]``."""
    fe = mesh.gather(f)
    parts = grad_e(mesh, em, fe)
    out = [mesh.dss(q) for q in parts]
    if hasattr(out[0], "c"):
        from .jets import Jet
        return Jet(np.stack([q.c for q in out], axis=1))
    return np.stack(out)


def gradient(cache, f):
    return grad_nodes(cache.mesh, cache.em, np.asarray(f, dtype=float))


def eulerian_derivative(cache, f, s):
    """Mixed Eulerian derivative of ``f``.

    ``s`` is either a tuple of per-direction counts of length d or an int,
    in which case the full tensor of order ``s`` is returned with the
    derivative slots leading.
    """
    f = np.asarray(f, dtype=float)
    if np.isscalar(s) or isinstance(s, (int, np.integer)):
        order = int(s)
        if order > MAX_ORDER:
            raise UnsupportedOrderError(f"derivative order {order} exceeds {MAX_ORDER}")
        out = f
        for _ in range(order):
            out = gradient(cache, out)
        return out
    s = tuple(int(v) for v in s)
    if len(s) != cache.mesh.dim or min(s) < 0:
        raise ValueError("multi-index must have one non-negative entry per dimension")
    if sum(s) > MAX_ORDER:
        raise UnsupportedOrderError(f"derivative order {sum(s)} exceeds {MAX_ORDER}")
    out = f
    for i, cnt in enumerate(s):
        for _ in range(cnt):
            out = gradient(cache, out)[i]
    return out


def divergence(cache, X):
    return np.einsum("ii...->...", gradient(cache, X))


def curl(cache, X):
    du = gradient(cache, X)
    if cache.mesh.dim == 2:
        return du[0, 1] - du[1, 0]
    return du - np.swapaxes(du, 0, 1)


def vector_calculus(cache, X):
    return {"div": divergence(cache, X), "curl": curl(cache, X)}


def stiffness_apply(mesh, em, f):
    """``S(sum_ab D_a^T W G^ab D_b f)`` with ``G^ab = C_ka C_kb / J``."""
    d = mesh.dim
    fe = mesh.gather(f)
    dfb = [mesh.dloc(fe, b) for b in range(d)]
    acc = 0.0
    for a in range(d):
        flux = 0.0
        for b in range(d):
            gab = sum(em.C[k][a] * em.C[k][b] for k in range(d)) / em.J
            flux = flux + mesh.W * gab * dfb[b]
        acc = acc + mesh.dlocT(flux, a)
    return mesh.scatter(acc)


def laplacian(cache, f, kind="strong"):
    """Eulerian Laplacian, ``div grad`` (strong) or the weak SEM form."""
    f = np.asarray(f, dtype=float)
    if kind == "strong":
        return divergence(cache, gradient(cache, f))
    if kind == "weak":
        return -stiffness_apply(cache.mesh, cache.em, f) / cache.V
    raise ValueError(f"unknown laplacian kind {kind!r}")


def _local_diff_mats(mesh):
    n, d = mesh.n, mesh.dim
    eye = np.eye(n)
    mats = []
    for a in range(d):
        m = np.ones((1, 1))
        for b in range(d):
            m = np.kron(m, mesh.D if a == b else eye)
        mats.append(m)
    return mats


def stiffness_matrix(cache):
    """Assembled sparse stiffness matrix (symmetric positive semidefinite)."""
    if getattr(cache, "_stiff", None) is not None:
        return cache._stiff
    mesh, em, d = cache.mesh, cache.em, cache.mesh.dim
    E = mesh.nelem
    nl = mesh.n**d
    Dm = _local_diff_mats(mesh)
    Ke = np.zeros((E, nl, nl))
    for a in range(d):
        for b in range(d):
            gab = sum(em.C[k][a] * em.C[k][b] for k in range(d)) / em.J
            wg = (mesh.W * gab).reshape(E, nl)
            Ke += np.einsum("ki,ek,kj->eij", Dm[a], wg, Dm[b])
    idx = mesh.conn.reshape(E, nl)
    rows = np.repeat(idx, nl, axis=1).ravel()
    cols = np.tile(idx, (1, nl)).ravel()
    A = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(mesh.nnode, mesh.nnode))
    A = 0.5 * (A + A.T)
    cache._stiff = A.tocsr()
    return cache._stiff


def boundary_mass(cache):
    """Nodal surface weights so that ``sum(bm * f)`` integrates over the boundary."""
    mesh = cache.mesh
    fn = mesh.face_nodes
    wts = mesh.face_w * cache.face_sJ
    return np.bincount(fn.ravel(), weights=wts.ravel(), minlength=mesh.nnode)


def integrate(cache, f, region="interior"):
    f = np.asarray(f, dtype=float)
    if region == "interior":
        return float(np.sum(cache.V * f, axis=-1)) if f.ndim == 1 else np.sum(cache.V * f, axis=-1)
    if region == "boundary":
        fv = cache.mesh.face_values(cache.mesh.gather(f))
        w = cache.mesh.face_w * cache.face_sJ
        axes = tuple(range(f.ndim - 1, fv.ndim))
        out = np.sum(w * fv, axis=axes)
        return float(out) if np.ndim(out) == 0 else out
    raise ValueError(f"unknown region {region!r}")


@dataclass
class EllipticProblem:
    """Solve ``Laplacian f = rhs`` with Dirichlet values or Neumann flux.

    ``value`` is the boundary trace (Dirichlet) or the normal derivative
    (Neumann) on boundary nodes, full-length or boundary-length; None = 0.
    """
    rhs: np.ndarray
    cache: object
    bc: str = "dirichlet"
    value: np.ndarray = None
    rtol: float = 1e-10
    maxiter: int = 5000
    shift: float = field(default=0.0, init=False)
    history: list = field(default_factory=list, init=False)
    iterations: int = field(default=0, init=False)


def _boundary_values(cache, value):
    mesh = cache.mesh
    out = np.zeros(mesh.nnode)
    if value is None:
        return out
    value = np.asarray(value, dtype=float)
    if np.ndim(value) == 0:
        out[mesh.bnodes] = value
    elif value.size == mesh.nnode:
        out[mesh.bnodes] = value[mesh.bnodes]
    else:
        out[mesh.bnodes] = value
    return out


def _pcg(A, b, rtol, maxiter, project_mean=None):
    diag = A.diagonal().copy()
    diag[diag == 0] = 1.0
    M = LinearOperator(A.shape, matvec=lambda r: r / diag)
    hist = []
    bn = np.linalg.norm(b)

    def cb(xk):
        hist.append(float(np.linalg.norm(b - A @ xk)) / (bn if bn > 0 else 1.0))

    if bn == 0:
        return np.zeros_like(b), hist, 0
    x, info = cg(A, b, rtol=rtol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
    res = float(np.linalg.norm(b - A @ x)) / bn
    if info != 0 and res > 10 * rtol:
        raise SolverError(f"conjugate gradient did not converge (relative residual {res:.3e})", hist)
    return x, hist, len(hist)


def poisson_solve(problem):
    cache = problem.cache
    mesh = cache.mesh
    A = stiffness_matrix(cache)
    rhs = np.asarray(problem.rhs, dtype=float)
    b = -cache.V * rhs
    if problem.bc == "dirichlet":
        g = _boundary_values(cache, problem.value)
        ii = mesh.inodes
        bvec = b - A @ g
        Aii = A[ii][:, ii].tocsr()
        xi, hist, it = _pcg(Aii, bvec[ii], problem.rtol, problem.maxiter)
        out = g.copy()
        out[ii] = xi
    elif problem.bc == "neumann":
        flux = _boundary_values(cache, problem.value)
        bm = boundary_mass(cache)
        b = b + bm * flux
        total = float(np.sum(b))
        shift = total / float(np.sum(cache.V))
        if abs(shift) > 0:
            log.info("neumann compatibility shift %.3e applied to rhs", shift)
        problem.shift = shift
        b = b - cache.V * shift
        x, hist, it = _pcg(A, b, problem.rtol, problem.maxiter)
        out = x - np.sum(cache.V * x) / np.sum(cache.V)
    else:
        raise ValueError(f"unknown boundary condition {problem.bc!r}")
    problem.history = hist
    problem.iterations = it
    return out


def dirichlet_factor(cache):
    """Sparse LU of the interior stiffness block, reused across many solves."""
    if getattr(cache, "_dlu", None) is None:
        A = stiffness_matrix(cache)
        ii = cache.mesh.inodes
        cache._dlu = splu(A[ii][:, ii].tocsc())
    return cache._dlu


def dirichlet_direct(cache, rhs, value=None):
    """Direct counterpart of a Dirichlet :func:`poisson_solve`."""
    mesh = cache.mesh
    A = stiffness_matrix(cache)
    g = _boundary_values(cache, value)
    rhs = np.asarray(rhs, dtype=float)
    b = -cache.V * rhs - A @ g
    ii = mesh.inodes
    lu = dirichlet_factor(cache)
    out = np.broadcast_to(g, rhs.shape).copy()
    if rhs.ndim == 1:
        out[ii] = lu.solve(b[ii])
    else:
        out[..., ii] = lu.solve(np.ascontiguousarray(b[..., ii].T)).T
    return out


def derivative_tensors(cache, f, order):
    """List ``[f, grad f, grad^2 f, ...]`` up to ``order``."""
    if order > MAX_ORDER:
        raise UnsupportedOrderError(f"derivative order {order} exceeds {MAX_ORDER}")
    out = [np.asarray(f, dtype=float)]
    for _ in range(order):
        out.append(gradient(cache, out[-1]))
    return out


def multi_indices(d, order):
    return [s for s in itertools.product(range(order + 1), repeat=d) if sum(s) == order]

"""Compressible resistive MHD in Lagrangian form and its derived monitors.

The semi-discrete scheme is written so that the discrete physical energy
obeys the continuous balance exactly in time-continuous form:

* divergence in non-conservative form, pressure gradient in conservative
  form (the pair is adjoint under GLL summation by parts);
* the magnetic tension and stretching terms use one skew-symmetric
  operator ``L_B f ~ B.grad f``;
* resistivity uses the weak Laplacian, whose energy is element-local
  ``int |dB|^2``;
* p and B are pinned at boundary nodes. Boundary nodes still change
  volume, so their velocity carries the matching mass-source term
  ``-div(u) u / 2``.  That term vanishes as div u -> 0 at the surface.

Every routine accepts numpy arrays or jets (see :mod:`mhdlab.jets`).
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import LinearOperator, cg, splu
from scipy.special import j0

from .errors import InstabilityError, SolverError, VacuumError, WindowError
from .geometry import FlowMapState, element_metric, grad_e
from .jets import Jet, is_jet

RHO_FLOOR = 1e-6
C_CFL = 0.4
C_DIFF = 0.2


@dataclass
class EosParams:
    """Linear equation of state p = kappa (rho - 1)."""
    kappa: float
    lam: float = 0.0
    c0: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.lam < 0:
            raise ValueError("magnetic diffusivity must be non-negative")

    def rho(self, p):
        return 1.0 + p / self.kappa

    def drho(self, p):
        return 0.0 * p + 1.0 / self.kappa

    def d2rho(self, p):
        return 0.0 * p

    closed_form = True

    def pressure(self, rho):
        return self.kappa * (rho - 1.0)

    def dpressure(self, rho):
        return self.kappa + 0.0 * rho

    def rho_over_drho(self, p):
        return self.kappa + p

    @property
    def sound_speed(self):
        return math.sqrt(self.kappa)


def eos_eval(params, p):
    """Density, its derivative and sound speed.

    Only the upper bounds |rho^(m)| <= c0 are checked; the matching lower
    bounds cannot hold for m >= 2 with a linear law.
    """
    p = np.asarray(p, dtype=float)
    rho = params.rho(p)
    if np.any(rho <= RHO_FLOOR):
        raise VacuumError(f"density {float(np.min(rho)):.3e} below floor")
    d1 = params.drho(p)
    d2 = params.d2rho(p)
    report = {
        "m1": bool(np.all(np.abs(d1) <= params.c0)),
        "m2": bool(np.all(np.abs(d2) <= params.c0)),
    }
    report["ok"] = report["m1"] and report["m2"]
    return {"rho": rho, "drho": d1, "c": np.sqrt(1.0 / d1), "bound_report": report}


@dataclass
class SimState:
    mesh: object
    x: np.ndarray
    u: np.ndarray
    B: np.ndarray
    p: np.ndarray
    t: float = 0.0

    @property
    def dim(self):
        return self.mesh.dim

    @property
    def flowmap(self):
        return FlowMapState(self.mesh, self.x, self.t)

    def rho(self, params):
        return params.rho(self.p)

    def total_pressure(self):
        return self.p + 0.5 * np.sum(self.B**2, axis=0)

    def copy(self):
        return SimState(self.mesh, self.x.copy(), self.u.copy(), self.B.copy(), self.p.copy(), self.t)

    def arrays(self):
        return self.x, self.u, self.B, self.p


def rest_state(mesh):
    d, n = mesh.dim, mesh.nnode
    return SimState(mesh, mesh.y.copy(), np.zeros((d, n)), np.zeros((d, n)), np.zeros(n))


def enforce_bc(state):
    b = state.mesh.bnodes
    state.p[b] = 0.0
    state.B[:, b] = 0.0
    return state


# discrete operators -----------------------------------------------------
def _vec(mesh, parts):
    if is_jet(parts[0]):
        return Jet(np.stack([q.c for q in parts], axis=1))
    return np.stack(parts)


def _comp(f, k):
    return f[k]


class Operators:
    """Geometry-dependent operators at one flow map (array or jet)."""

    def __init__(self, mesh, x):
        self.mesh = mesh
        self.d = mesh.dim
        self.em = element_metric(mesh, x)
        self.V = mesh.scatter(mesh.W * self.em.J)

    def gather_vec(self, f):
        return [self.mesh.gather(_comp(f, k)) for k in range(self.d)]

    def div_weak(self, ue):
        """Volume-weighted divergence ``S(W C_ka D_a u_k)``."""
        m, em = self.mesh, self.em
        acc = sum(em.C[k][a] * m.dloc(ue[k], a) for k in range(self.d) for a in range(self.d))
        return m.scatter(m.W * acc)

    def grad_weak(self, Pe):
        """Volume-weighted gradient ``S(W D_a(C_ka P))`` per component."""
        m, em = self.mesh, self.em
        return [m.scatter(m.W * sum(m.dloc(em.C[k][a] * Pe, a) for a in range(self.d)))
                for k in range(self.d)]

    def skew(self, Be, fe):
        """Volume-weighted ``B.grad f`` in skew-symmetric split form."""
        m, em, d = self.mesh, self.em, self.d
        flux = [sum(em.C[k][a] * Be[k] for k in range(d)) for a in range(d)]
        adv = sum(flux[a] * m.dloc(fe, a) for a in range(d))
        cons = sum(m.dloc(flux[a] * fe, a) for a in range(d))
        return m.scatter(m.W * 0.5 * (adv + cons))

    def stiff(self, fe):
        m, em, d = self.mesh, self.em, self.d
        dfb = [m.dloc(fe, b) for b in range(d)]
        acc = 0.0
        for a in range(d):
            fl = 0.0
            for b in range(d):
                gab = sum(em.C[k][a] * em.C[k][b] for k in range(d)) / em.J
                fl = fl + gab * dfb[b]
            acc = acc + m.dlocT(m.W * fl, a)
        return m.scatter(acc)

    def grad_strong_e(self, fe):
        return grad_e(self.mesh, self.em, fe)

    def dissipation_density(self, Be):
        """Element-local ``int |dB|^2``."""
        tot = 0.0
        for k in range(self.d):
            g = self.grad_strong_e(Be[k])
            tot = tot + np.sum(self.mesh.W * self.em.J * sum(gi * gi for gi in g))
        return tot


def mhd_rates(mesh, x, u, B, p, params, pin=True):
    """Rates (x', u', B', p') of the semi-discrete system."""
    ops = Operators(mesh, x)
    d = mesh.dim
    V = ops.V
    ue = ops.gather_vec(u)
    Be = ops.gather_vec(B)
    divu = ops.div_weak(ue) / V
    Ptot = p + 0.5 * sum(_comp(B, k) * _comp(B, k) for k in range(d))
    gP = ops.grad_weak(mesh.gather(Ptot))
    rho = params.rho(p)
    udot, Bdot = [], []
    for k in range(d):
        tension = ops.skew(Be, Be[k])
        udot.append((tension - gP[k]) / (V * rho))
        stretch = ops.skew(Be, ue[k])
        bd = stretch / V - _comp(B, k) * divu
        if params.lam > 0:
            bd = bd - params.lam * ops.stiff(Be[k]) / V
        Bdot.append(bd)
    pdot = -params.rho_over_drho(p) * divu
    if pin:
        bm = mesh.bmask.astype(float)
        im = 1.0 - bm
        pdot = pdot * im
        Bdot = [q * im for q in Bdot]
        udot = [udot[k] - 0.5 * bm * divu * _comp(u, k) for k in range(d)]
    return u, _vec(mesh, udot), _vec(mesh, Bdot), pdot


def mhd_rhs(state, params):
    """Rates for (x, u, B, p); x' = u in Lagrangian coordinates."""
    return mhd_rates(state.mesh, state.x, state.u, state.B, state.p, params)


def min_spacing(mesh, x):
    """Smallest distance between neighbouring nodes of an element."""
    d = mesh.dim
    xe = np.stack([mesh.gather(x[k]) for k in range(d)])
    h = np.inf
    for a in range(d):
        diff = np.diff(xe, axis=a + 2)
        h = min(h, float(np.min(np.sqrt(np.sum(diff**2, axis=0)))))
    return h


def cfl_dt(state, params):
    h = min_spacing(state.mesh, state.x)
    speed = params.sound_speed + float(np.max(np.abs(state.u))) + float(np.max(np.abs(state.B)))
    dt = C_CFL * h / speed
    if params.lam > 0:
        dt = min(dt, C_DIFF * h * h / params.lam)
    return dt


def _finite(*arrs):
    return all(np.all(np.isfinite(a)) for a in arrs)


def step(state, params, dt):
    """One classical RK4 step with strong boundary pinning after each stage."""
    if dt == 0:
        return state.copy()
    mesh = state.mesh
    b = mesh.bnodes
    y0 = state.arrays()

    def pin(arrs):
        x, u, B, p = arrs
        p = p.copy()
        B = B.copy()
        p[b] = 0.0
        B[:, b] = 0.0
        return x, u, B, p

    def f(arrs):
        return mhd_rates(mesh, *arrs, params)

    def axpy(base, k, s):
        return tuple(a + s * r for a, r in zip(base, k))

    k1 = f(y0)
    k2 = f(pin(axpy(y0, k1, 0.5 * dt)))
    k3 = f(pin(axpy(y0, k2, 0.5 * dt)))
    k4 = f(pin(axpy(y0, k3, dt)))
    new = tuple(a + dt / 6.0 * (r1 + 2 * r2 + 2 * r3 + r4)
                for a, r1, r2, r3, r4 in zip(y0, k1, k2, k3, k4))
    new = pin(new)
    if not _finite(*new):
        raise InstabilityError(f"non-finite state at t={state.t + dt:.6g}", last_state=state)
    out = SimState(mesh, *new, t=state.t + dt)
    if np.any(params.rho(out.p) <= RHO_FLOOR):
        raise VacuumError(f"density fell below {RHO_FLOOR} at t={out.t:.6g}")
    return out


# runs ----------------------------------------------------------------------
@dataclass
class History:
    snapshots: list
    dt: float
    params: object
    out_every: int = 1
    meta: dict = field(default_factory=dict)
    monitors: dict = field(default_factory=dict)

    @property
    def times(self):
        return np.array([s.t for s in self.snapshots])

    @property
    def interval(self):
        return self.dt * self.out_every

    @property
    def mesh(self):
        return self.snapshots[0].mesh

    def __len__(self):
        return len(self.snapshots)

    def index_of(self, t):
        ts = self.times
        i = int(np.argmin(np.abs(ts - t)))
        if abs(ts[i] - t) > 1e-9 * max(1.0, abs(t)) + 1e-3 * self.interval:
            raise WindowError(f"time {t} is not a snapshot time")
        return i

    def window(self, t, half):
        """Snapshot indices centred on t with ``half`` points each side."""
        i = self.index_of(t)
        if i - half < 0 or i + half >= len(self):
            raise WindowError(f"need {2 * half + 1} snapshots centred on t={t}, "
                              f"history has {len(self)} (index {i})")
        return list(range(i - half, i + half + 1))


MONITORS = ("energy", "divB", "rt_margin", "dissipation")


def run(state0, params, T, monitor_set=("energy",), n_out=None, dt=None, out_every=None):
    """Integrate to time T with a fixed step and uniform snapshots."""
    from . import monitors as mon
    unknown = set(monitor_set) - set(MONITORS)
    if unknown:
        raise ValueError(f"unknown monitors {sorted(unknown)}")
    state = enforce_bc(state0.copy())
    dt_max = cfl_dt(state, params)
    if dt is None:
        dt = dt_max
    nsteps = max(1, int(math.ceil(T / dt - 1e-9)))
    if out_every is None:
        if n_out is None:
            out_every = 1
        else:
            # smallest step stride giving at most n_out intervals
            out_every = max(1, int(math.ceil(nsteps / n_out)))
            nsteps = out_every * int(math.ceil(nsteps / out_every))
    else:
        nsteps = out_every * int(math.ceil(nsteps / out_every))
    dt = T / nsteps
    hist = History([state], dt, params, out_every, meta={"nsteps": nsteps, "T": T})
    record = {name: [] for name in monitor_set}

    def observe(s):
        for name in monitor_set:
            record[name].append(mon.evaluate(name, s, params))

    observe(state)
    for n in range(1, nsteps + 1):
        state = step(state, params, dt)
        if n % out_every == 0:
            hist.snapshots.append(state)
            observe(state)
    hist.monitors = {k: np.array(v) for k, v in record.items()}
    return hist


# incompressible reference ---------------------------------------------------
def _dcof(M, dM, d):
    from .geometry import cofactor
    if d == 2:
        return cofactor(dM, 2)
    full = cofactor([[M[i][j] + dM[i][j] for j in range(3)] for i in range(3)], 3)
    c0 = cofactor(M, 3)
    c1 = cofactor(dM, 3)
    return [[full[i][j] - c0[i][j] - c1[i][j] for j in range(3)] for i in range(3)]


def divergence_matrix(mesh, x):
    """Sparse ``Dt`` with ``(Dt u)_n = S(W C_ka D_a u_k)``; columns (k, node)."""
    from .numerics import _local_diff_mats
    d = mesh.dim
    em = element_metric(mesh, x)
    E = mesh.nelem
    nl = mesh.n**d
    Dm = _local_diff_mats(mesh)
    idx = mesh.conn.reshape(E, nl)
    W = mesh.W.reshape(nl)
    rows, cols, vals = [], [], []
    for k in range(d):
        blk = 0.0
        for a in range(d):
            c = em.C[k][a].reshape(E, nl)
            blk = blk + (W * c)[:, :, None] * Dm[a][None]
        rows.append(np.repeat(idx, nl, axis=1).ravel())
        cols.append((np.tile(idx, (1, nl)) + k * mesh.nnode).ravel())
        vals.append(blk.ravel())
    Dt = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(mesh.nnode, d * mesh.nnode))
    V = mesh.scatter(mesh.W * em.J)
    return Dt, V, em


def _pressure_matrix(mesh, Dt, V):
    ii = mesh.inodes
    DI = Dt[ii]
    Vinv = sp.diags(np.tile(1.0 / V, mesh.dim))
    return (DI @ Vinv @ DI.T).tocsc()


def _solve_pressure(mesh, Dt, V, rhs, rtol=1e-12, lu=None):
    """Pressure with zero boundary trace.

    ``lu`` is a factor of a nearby pressure matrix (same step, earlier
    stage); it preconditions CG so each stage costs a few solves instead of
    a new factorization.
    """
    ii = mesh.inodes
    A = _pressure_matrix(mesh, Dt, V)
    b = rhs[ii]
    P = np.zeros(mesh.nnode)
    if np.linalg.norm(b) == 0:
        return P
    if lu is not None:
        M = LinearOperator(A.shape, matvec=lu.solve)
    else:
        diag = A.diagonal()
        M = LinearOperator(A.shape, matvec=lambda r: r / diag)
    hist = []
    sol, info = cg(A, b, rtol=rtol, atol=0.0, maxiter=20 * A.shape[0], M=M,
                   callback=lambda xk: hist.append(float(np.linalg.norm(b - A @ xk))))
    res = np.linalg.norm(b - A @ sol) / np.linalg.norm(b)
    if info != 0 and res > 1e-8:
        raise SolverError(f"pressure solve failed (relative residual {res:.3e})", hist)
    P[ii] = sol
    return P


def _grad_weak_matrix_apply(Dt, P, d):
    # S(W D_a(C_ka P)) = -Dt^T P for P vanishing on the boundary
    return -(Dt.T @ P).reshape(d, -1)


def pressure_factor(mesh, x):
    """Sparse LU of the pressure matrix at x, or None if it is singular."""
    Dt, V, _ = divergence_matrix(mesh, x)
    try:
        return splu(_pressure_matrix(mesh, Dt, V))
    except RuntimeError:
        return None


def incompressible_pressure_rate(mesh, x, v, B, lam, lu=None):
    """Accelerations and total pressure of the incompressible system.

    The pressure keeps the discrete divergence ``Dt v`` constant in time.
    """
    d = mesh.dim
    Dt, V, em = divergence_matrix(mesh, x)
    ops = Operators(mesh, x)
    ve = ops.gather_vec(v)
    Be = ops.gather_vec(B)
    force = np.stack([ops.skew(Be, Be[k]) / V for k in range(d)])
    # time derivative of the divergence operator applied to v
    Dv = [[mesh.dloc(ve[k], a) for a in range(d)] for k in range(d)]
    dC = _dcof(em.Dx, Dv, d)
    rate = mesh.scatter(mesh.W * sum(dC[k][a] * Dv[k][a] for k in range(d) for a in range(d)))
    rhs = -(Dt @ force.ravel() + rate)
    P = _solve_pressure(mesh, Dt, V, rhs, lu=lu)
    acc = force + _grad_weak_matrix_apply(Dt, P, d) / V
    Bdot = []
    for k in range(d):
        bd = ops.skew(Be, ve[k]) / V
        if lam > 0:
            bd = bd - lam * ops.stiff(Be[k]) / V
        Bdot.append(bd)
    Bdot = np.stack(Bdot)
    Bdot[:, mesh.bnodes] = 0.0
    return acc, Bdot, P, (Dt, V)


def project_velocity(mesh, x, v, lu=None):
    """Remove the discrete-divergence part of v (boundary pressure zero)."""
    Dt, V, _ = divergence_matrix(mesh, x)
    r = Dt @ v.ravel()
    phi = _solve_pressure(mesh, Dt, V, r, lu=lu)
    return v + _grad_weak_matrix_apply(Dt, phi, mesh.dim) / V


def incompressible_step(state, dt, lam=1.0, with_pressure=True):
    """RK4 step of the incompressible system; ``state.p`` holds q = P - |B|^2/2.

    Without ``with_pressure`` the returned q is left at zero (saves a solve).
    """
    mesh = state.mesh
    b = mesh.bnodes

    x0, v0, B0 = state.x, state.u, state.B
    if dt == 0:
        return state.copy()
    lu = pressure_factor(mesh, x0)

    def f(x, v, B):
        acc, Bdot, P, _ = incompressible_pressure_rate(mesh, x, v, B, lam, lu=lu)
        return v, acc, Bdot, P

    k1 = f(x0, v0, B0)
    k2 = f(x0 + 0.5 * dt * k1[0], v0 + 0.5 * dt * k1[1], B0 + 0.5 * dt * k1[2])
    k3 = f(x0 + 0.5 * dt * k2[0], v0 + 0.5 * dt * k2[1], B0 + 0.5 * dt * k2[2])
    k4 = f(x0 + dt * k3[0], v0 + dt * k3[1], B0 + dt * k3[2])
    x = x0 + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    v = v0 + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    B = B0 + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    B[:, b] = 0.0
    v = project_velocity(mesh, x, v, lu=lu)
    if not _finite(x, v, B):
        raise InstabilityError("non-finite incompressible state", last_state=state)
    q = np.zeros(mesh.nnode)
    if with_pressure:
        _, _, P, _ = incompressible_pressure_rate(mesh, x, v, B, lam, lu=lu)
        q = P - 0.5 * np.sum(B**2, axis=0)
    return SimState(mesh, x, v, B, q, state.t + dt)


def incompressible_cfl(state, lam=1.0):
    h = min_spacing(state.mesh, state.x)
    speed = 1e-12 + float(np.max(np.abs(state.u))) + float(np.max(np.abs(state.B)))
    dt = C_CFL * h / speed
    if lam > 0:
        dt = min(dt, C_DIFF * h * h / lam)
    return dt


def run_incompressible(state0, T, lam=1.0, dt=None, n_out=None):
    state = state0.copy()
    state.B[:, state.mesh.bnodes] = 0.0
    state.u = project_velocity(state.mesh, state.x, state.u)
    _, _, P, _ = incompressible_pressure_rate(state.mesh, state.x, state.u, state.B, lam)
    state.p = P - 0.5 * np.sum(state.B**2, axis=0)
    dt = dt or incompressible_cfl(state, lam)
    nsteps = max(1, int(math.ceil(T / dt - 1e-9)))
    if n_out:
        # uniform snapshot spacing: a whole number of steps per interval
        nsteps = n_out * int(math.ceil(nsteps / n_out))
    dt = T / nsteps
    every = nsteps // n_out if n_out else nsteps
    snaps = [state]
    for n in range(1, nsteps + 1):
        keep = n % every == 0 or n == nsteps
        state = incompressible_step(state, dt, lam, with_pressure=keep)
        if keep:
            if snaps[-1] is not state:
                snaps.append(state)
    return snaps


def discrete_divergence(mesh, x, v):
    Dt, V, _ = divergence_matrix(mesh, x)
    return (Dt @ v.ravel()) / V


# residual monitors -----------------------------------------------------------
def bessel_j01():
    """First positive zero of J0."""
    return brentq(j0, 2.0, 3.0, xtol=1e-15)


def _geom(state):
    from .geometry import compute_geometry
    return compute_geometry(state.flowmap, distance=False)


def _l2(cache, f, mask=None):
    f2 = np.sum(f**2, axis=tuple(range(f.ndim - 1))) if f.ndim > 1 else f**2
    if mask is not None:
        f2 = f2 * mask
    return float(np.sqrt(np.sum(cache.V * f2)))


def residual_divB(history, t):
    """L2 norm of div B at t and the residual of its heat equation.

    The heat equation D_t(div B) - lam Lap(div B) = -(div B)(div u) is checked
    with a centred time difference at interior nodes.
    """
    from .energies import fd_derivative
    from .numerics import divergence, laplacian
    i = history.index_of(t)
    s = history.snapshots[i]
    c = _geom(s)
    divB = divergence(c, s.B)
    out = {"divB": _l2(c, divB), "heat_residual": float("nan")}
    try:
        idx = history.window(t, 1)
    except WindowError:
        return out
    vals = []
    for j in idx:
        sj = history.snapshots[j]
        vals.append(divergence(_geom(sj), sj.B))
    ddt = fd_derivative(vals, history.interval, 1)
    lam = history.params.lam
    res = ddt - lam * laplacian(c, divB) + divB * divergence(c, s.u)
    mask = (~s.mesh.bmask).astype(float)
    out["heat_residual"] = _l2(c, res, mask)
    return out


def _fd_fields(history, t, name, k, npts=None):
    from .energies import material_derivative
    return material_derivative(history, name, k, t, npts=npts)


def wave_source(cache, params, p, dtp, u, B):
    """Source w of the wave equation for p.

    The density-weight coefficient is rho'^2/rho - rho''; the magnetic
    index pairing is the trace of (dB)^2, i.e. d_i B^k d_k B^i.
    """
    from .numerics import gradient
    rho = params.rho(p)
    r1 = params.drho(p)
    r2 = params.d2rho(p)
    dp = gradient(cache, p)
    du = gradient(cache, u)  # du[i, k] = d_i u^k
    dB = gradient(cache, B)
    P = p + 0.5 * np.sum(B**2, axis=0)
    dP = gradient(cache, P)
    BdB = np.einsum("km,kim->im", B, dB)  # B^k d_k B^i
    w = (r1**2 / rho - r2) * dtp**2
    w = w + (r1 / rho) * np.einsum("im,im->m", dp, BdB - dP)
    w = w + rho * np.einsum("ikm,kim->m", du, du)
    w = w - np.einsum("ikm,kim->m", dB, dB)
    w = w + np.einsum("ikm,ikm->m", dB, dB)
    return w


def residual_wave(history, t, npts=5):
    """Pointwise residual of rho' D_t^2 p - Lap p - B.Lap B - w (interior nodes)."""
    from .numerics import laplacian
    if len(history) < npts:
        raise WindowError(f"wave residual needs {npts} snapshots, history has {len(history)}")
    params = history.params
    s = history.snapshots[history.index_of(t)]
    c = _geom(s)
    d1 = _fd_fields(history, t, "p", 1, npts)
    d2 = _fd_fields(history, t, "p", 2, npts)
    lapB = np.stack([laplacian(c, s.B[k]) for k in range(s.dim)])
    res = params.drho(s.p) * d2 - laplacian(c, s.p) - np.sum(s.B * lapB, axis=0)
    res = res - wave_source(c, params, s.p, d1, s.u, s.B)
    res[s.mesh.bnodes] = 0.0
    return res


def laplace_commutator(cache, u, f):
    """[D_t, Lap] f = -2 d_i u^k d_i d_k f - Lap(u^k) d_k f."""
    from .numerics import gradient
    du = gradient(cache, u)
    df = gradient(cache, f)
    ddf = gradient(cache, df)
    lapu = np.einsum("iikm->km", gradient(cache, du))
    return -2.0 * np.einsum("ikm,ik...m->...m", du, ddf) - np.einsum("km,k...m->...m", lapu, df)


def residual_heat_k1(history, t, npts=5):
    """Residual of the differentiated induction equation (interior nodes).

    D_t^2 B - lam Lap D_t B - lam [D_t, Lap] B
        - (B.grad) D_t u - B rho'/rho D_t^2 p - h~
    with h~ = D_t B.grad u - B^l d_l u^m d_m u + D_t B rho'/rho D_t p
              + B (rho''/rho - rho'^2/rho^2)(D_t p)^2.
    """
    from .numerics import gradient, laplacian
    params = history.params
    s = history.snapshots[history.index_of(t)]
    c = _geom(s)
    B, u, p = s.B, s.u, s.p
    dB = _fd_fields(history, t, "B", 1, npts)
    d2B = _fd_fields(history, t, "B", 2, npts)
    du = _fd_fields(history, t, "u", 1, npts)
    dp = _fd_fields(history, t, "p", 1, npts)
    d2p = _fd_fields(history, t, "p", 2, npts)
    rho, r1, r2 = params.rho(p), params.drho(p), params.d2rho(p)
    gu = gradient(c, u)
    gdu = gradient(c, du)
    lap_dB = np.stack([laplacian(c, dB[k]) for k in range(s.dim)])
    comm = laplace_commutator(c, u, B)
    h2 = np.einsum("lm,lkm->km", B, gdu) + B * (r1 / rho) * d2p
    bgu = np.einsum("lm,lkm->km", B, gu)  # B^l d_l u^k
    ht = (np.einsum("lm,lkm->km", dB, gu) - np.einsum("lm,lkm->km", bgu, gu)
          + dB * (r1 / rho) * dp + B * (r2 / rho - r1**2 / rho**2) * dp**2)
    res = d2B - params.lam * lap_dB - params.lam * comm - h2 - ht
    res[:, s.mesh.bnodes] = 0.0
    return res

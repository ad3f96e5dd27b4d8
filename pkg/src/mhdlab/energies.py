"""Energy functionals, the Rayleigh-Taylor margin and a priori quantities."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .dynamics import Operators, RHO_FLOOR, mhd_rhs
from .errors import VacuumError, WindowError
from .geometry import compute_geometry, project
from .numerics import gradient, integrate

NU_MARGIN_FLOOR = 1e-6
NU_CAP = 1.0 / NU_MARGIN_FLOOR
R_MAX = 2


# equation of state helpers -----------------------------------------------------
def internal_energy(params, rho):
    """Q(rho) = int_1^rho p(R)/R^2 dR."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise VacuumError("non-positive density")
    if getattr(params, "closed_form", False):
        return params.kappa * (np.log(rho) + 1.0 / rho - 1.0)
    f = np.vectorize(lambda r: quad(lambda R: params.pressure(R) / R**2, 1.0, r,
                                    epsabs=1e-13, epsrel=1e-13)[0])
    return f(rho)


def enthalpy(params, rho):
    """h(rho) = int_1^rho p'(r)/r dr; kappa ln(rho) for the linear law."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise VacuumError("non-positive density")
    if getattr(params, "closed_form", False):
        out = params.kappa * np.log(rho)
    else:
        out = np.vectorize(lambda r: quad(lambda s: params.dpressure(s) / s, 1.0, r,
                                          epsabs=1e-13, epsrel=1e-13)[0])(rho)
    return float(out) if out.ndim == 0 else out


def _volumes(state, cache=None):
    if cache is not None:
        return cache.V
    return Operators(state.mesh, state.x).V


def physical_energy(state, params, cache=None):
    """1/2 int rho|u|^2 + 1/2 int |B|^2 + int rho Q(rho)."""
    V = _volumes(state, cache)
    rho = params.rho(state.p)
    if np.any(rho <= RHO_FLOOR):
        raise VacuumError(f"density {float(np.min(rho)):.3e} below floor")
    dens = 0.5 * rho * np.sum(state.u**2, axis=0) + 0.5 * np.sum(state.B**2, axis=0)
    dens = dens + rho * internal_energy(params, rho)
    return float(np.sum(V * dens))


def dissipation_rate(state, params):
    """lam int |dB|^2 with the element-local gradient."""
    if params.lam == 0:
        return 0.0
    ops = Operators(state.mesh, state.x)
    return float(params.lam * ops.dissipation_density(ops.gather_vec(state.B)))


# time differences ---------------------------------------------------------------
def fd_weights(offsets, k):
    """Fornberg weights for the k-th derivative at 0 on the given offsets."""
    x = np.asarray(offsets, dtype=float)
    n = x.size
    if k >= n:
        raise ValueError("need more points than the derivative order")
    c = np.zeros((n, k + 1))
    c[0, 0] = 1.0
    c1 = 1.0
    c4 = x[0]
    for i in range(1, n):
        mn = min(i, k)
        c2 = 1.0
        c5 = c4
        c4 = x[i]
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for s in range(mn, 0, -1):
                    c[i, s] = c1 * (s * c[i - 1, s - 1] - c5 * c[i - 1, s]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for s in range(mn, 0, -1):
                c[j, s] = (c4 * c[j, s] - s * c[j, s - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, k]


def fd_derivative(values, h, k, offsets=None):
    """k-th derivative from equally spaced samples (centred by default)."""
    n = len(values)
    if offsets is None:
        offsets = np.arange(n) - (n - 1) / 2.0
    w = fd_weights(offsets, k) / h**k
    out = w[0] * np.asarray(values[0], dtype=float)
    for wi, v in zip(w[1:], values[1:]):
        out = out + wi * np.asarray(v, dtype=float)
    return out


def field_values(state, field_id, params=None):
    if field_id in ("x", "u", "B", "p"):
        return getattr(state, field_id)
    if field_id == "P":
        return state.total_pressure()
    if field_id == "rho":
        return params.rho(state.p)
    raise KeyError(f"unknown field {field_id!r}")


def material_derivative(history, field_id, k, t, npts=None):
    """D_t^k of a field at fixed Lagrangian node by central time differences.

    ``npts`` defaults to 2k+1 (at least 3); k = 0 returns the field itself.
    """
    if k > 3:
        raise ValueError("material derivatives are supported up to order 3")
    i = history.index_of(t)
    s = history.snapshots[i]
    if k == 0:
        return np.array(field_values(s, field_id, history.params), dtype=float)
    npts = npts or max(3, 2 * k + 1)
    if npts % 2 == 0 or npts <= k:
        raise ValueError("stencil must have an odd number of points exceeding k")
    idx = history.window(t, npts // 2)
    vals = [field_values(history.snapshots[j], field_id, history.params) for j in idx]
    return fd_derivative(vals, history.interval, k)


def _shifted(history, i, field_id, k, npts):
    """D_t^k at snapshot i, with the stencil shifted inside the history."""
    if k == 0:
        return np.array(field_values(history.snapshots[i], field_id, history.params), dtype=float)
    n = len(history)
    if n < npts:
        raise WindowError(f"need {npts} snapshots for D_t^{k}, history has {n}")
    start = min(max(i - npts // 2, 0), n - npts)
    idx = list(range(start, start + npts))
    vals = [field_values(history.snapshots[j], field_id, history.params) for j in idx]
    return fd_derivative(vals, history.interval, k, offsets=np.array(idx) - i)


def dissipation_residual(history, t, npts=5):
    """|dE/dt + lam int |dB|^2| at t, dE/dt by a centred difference."""
    params = history.params
    i = history.index_of(t)
    half = npts // 2
    while half > 0:
        try:
            idx = history.window(t, half)
            break
        except WindowError:
            half -= 1
    if half == 0:
        raise WindowError(f"need at least 3 snapshots around t={t}")
    E = [physical_energy(history.snapshots[j], params) for j in idx]
    dE = fd_derivative(E, history.interval, 1)
    return abs(float(dE) + dissipation_rate(history.snapshots[i], params))


def integrated_dissipation_residual(history):
    """|E(T) - E(0) + int_0^T lam int |dB|^2 dt| with Simpson in time."""
    params = history.params
    E0 = physical_energy(history.snapshots[0], params)
    E1 = physical_energy(history.snapshots[-1], params)
    D = np.array([dissipation_rate(s, params) for s in history.snapshots])
    h = history.interval
    return abs(E1 - E0 + _simpson(D, h)), E0


def _simpson(f, h):
    """Composite Simpson rule; an odd interval count ends with a 3/8 panel."""
    n = len(f) - 1
    if n < 2:
        return h * 0.5 * (f[0] + f[-1]) if n == 1 else 0.0
    tail = 0.0
    if n % 2:
        tail = 3.0 * h / 8.0 * (f[-4] + 3 * f[-3] + 3 * f[-2] + f[-1])
        f = f[:-3]
        n -= 3
    if n == 0:
        return tail
    body = h / 3.0 * (f[0] + f[-1] + 4 * np.sum(f[1:-1:2]) + 2 * np.sum(f[2:-1:2]))
    return body + tail


# Rayleigh-Taylor margin and a priori quantities -----------------------------------
def _cache_of(state_or_cache, distance=False):
    if hasattr(state_or_cache, "em") and hasattr(state_or_cache, "N"):
        return state_or_cache
    return compute_geometry(state_or_cache.flowmap, distance=distance)


def rt_margin(state, P=None, cache=None):
    """eps0 = min over the boundary of -grad_N P and nu = 1/(-grad_N P).

    Where the margin drops below the floor, nu is capped and flagged.
    """
    cache = cache or _cache_of(state)
    if P is None:
        P = state.total_pressure()
    b = cache.mesh.bnodes
    dP = gradient(cache, P)
    mdn = -np.einsum("im,im->m", cache.N[:, b], dP[:, b])
    eps0 = float(np.min(mdn))
    nu = np.zeros(cache.mesh.nnode)
    low = mdn < NU_MARGIN_FLOOR
    nu[b] = np.where(low, NU_CAP, 1.0 / np.where(low, 1.0, mdn))
    return {"eps0": eps0, "nu": nu, "degenerate": bool(np.any(low)),
            "nu_min": float(np.min(nu[b])), "nu_max": float(np.max(nu[b]))}


def _sup(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return np.abs(a)
    return np.sqrt(np.sum(a**2, axis=tuple(range(a.ndim - 1))))


def apriori_report(state, params, cache=None):
    """K = sup|theta| + 1/iota0, M from density and low-order field sizes, eps0.

    The field part of M sums |d^s D_t^k f| for s + k <= 2 with k <= 1; the
    first time derivatives come from the equations of motion.
    """
    cache = cache or _cache_of(state)
    b = cache.mesh.bnodes
    th = float(np.max(np.sqrt(np.sum(cache.theta[:, :, b] ** 2, axis=(0, 1)))))
    K = th + 1.0 / cache.iota0
    rho = params.rho(state.p)
    rates = mhd_rhs(state, params)
    tot = np.zeros(cache.mesh.nnode)
    for f, fdot in ((state.p, rates[3]), (state.u, rates[1]), (state.B, rates[2])):
        tot += _sup(f) + _sup(fdot)
        g1 = gradient(cache, f)
        tot += _sup(g1) + _sup(gradient(cache, g1)) + _sup(gradient(cache, fdot))
    M = max(float(np.max(rho)), float(np.max(tot)), float(np.max(1.0 / rho)))
    margin = rt_margin(state, cache=cache)
    return {"K": K, "M": M, "eps0": margin["eps0"], "theta_sup": th, "iota0": cache.iota0}


# higher-order energies ---------------------------------------------------------
def q_form(q, a):
    """Pointwise Q(a, a) = q^{i1 j1} ... q^{ir jr} a_{i..} a_{j..}."""
    a = np.asarray(a, dtype=float)
    r = a.ndim - 1
    out = a
    for slot in range(r):
        out = np.moveaxis(np.einsum("ijm,j...m->i...m", q, np.moveaxis(out, slot, 0)), 0, slot)
    return np.sum(a * out, axis=tuple(range(r))) if r else a * a


def _derivs(cache, f, s):
    for _ in range(s):
        f = gradient(cache, f)
    return f


@dataclass
class EnergyReport:
    t: float
    r: int
    E_phys: float
    E_sk: dict
    K_r: float
    W_next: float
    H_next2: float
    H_integral: float
    H_instant: float
    E_r: float
    rt_margin: float
    nu_min: float
    nu_max: float
    degenerate: bool
    apriori: dict = field(default_factory=dict)

    def total_from_parts(self):
        return sum(self.E_sk[k] for k in sorted(self.E_sk)) + self.K_r + self.W_next**2 + self.H_next2

    def header(self):
        cols = ["t", "r", "E_phys"] + [f"E_{s}_{k}" for (s, k) in sorted(self.E_sk)]
        cols += [f"K_{self.r}", f"W_{self.r + 1}", f"H2_{self.r + 1}", f"E_{self.r}",
                 "rt_margin", "nu_min", "nu_max", "degenerate", "K", "M", "eps0"]
        return cols

    def row(self):
        vals = [self.t, self.r, self.E_phys] + [self.E_sk[k] for k in sorted(self.E_sk)]
        vals += [self.K_r, self.W_next, self.H_next2, self.E_r, self.rt_margin,
                 self.nu_min, self.nu_max, int(self.degenerate),
                 self.apriori.get("K", float("nan")), self.apriori.get("M", float("nan")),
                 self.apriori.get("eps0", float("nan"))]
        return vals


def _npts(k):
    return max(3, 2 * k + 1)


def higher_energy(history, t, r, R_max=R_MAX, with_apriori=True):
    """All components of E_r at time t from a uniformly sampled history."""
    if r < 0 or r > R_max:
        raise ValueError(f"order r={r} outside 0..{R_max}")
    params = history.params
    i = history.index_of(t)
    st = history.snapshots[i]
    cache = compute_geometry(st.flowmap)
    V = cache.V
    rho = params.rho(st.p)
    r1 = params.drho(st.p)
    q = cache.q
    margin = rt_margin(st, cache=cache)
    nu = margin["nu"]

    def dt(name, k):
        return material_derivative(history, name, k, t, npts=_npts(k))

    E_sk = {}
    for k in range(r + 1):
        s = r - k
        u_k, B_k, p_k = dt("u", k), dt("B", k), dt("p", k)
        if s == 0:
            dens = (0.5 * rho * r1 * np.sum(u_k**2, axis=0) + 0.5 * np.sum(B_k**2, axis=0)
                    + 0.5 * (r1 / rho) * p_k**2)
            E_sk[(0, k)] = float(np.sum(V * dens))
            continue
        du = _derivs(cache, u_k, s)
        dB = _derivs(cache, B_k, s)
        dp = _derivs(cache, p_k, s)
        dens = 0.5 * rho * q_form(q, du) + 0.5 * q_form(q, dB) + 0.5 * (r1 / rho) * q_form(q, dp)
        P_k = dt("P", k)
        dP = _derivs(cache, P_k, s)
        surf = 0.5 * np.sum(project(cache, dP) ** 2, axis=tuple(range(s))) * nu
        E_sk[(s, k)] = float(np.sum(V * dens)) + float(integrate(cache, surf, "boundary"))

    K_r = 0.0
    if r >= 1:
        for f, w in ((st.u, rho), (st.B, 1.0)):
            c = gradient(cache, f)
            c = c - np.swapaxes(c, 0, 1)
            c = _derivs(cache, c, r - 1)
            K_r += float(np.sum(V * w * np.sum(c**2, axis=tuple(range(c.ndim - 1)))))

    pn = dt("p", r + 1)
    pm = dt("p", r)
    gp = gradient(cache, pm)
    W = 0.5 * (math.sqrt(float(np.sum(V * (r1 * pn) ** 2)))
               + math.sqrt(float(np.sum(V * r1 * np.sum(gp**2, axis=0)))))

    # H_{r+1}^2: trapezoid in time of int |D_t^{r+1} B|^2, plus the instantaneous part
    vals = []
    for j in range(i + 1):
        sj = history.snapshots[j]
        Vj = Operators(sj.mesh, sj.x).V
        bk = _shifted(history, j, "B", r + 1, _npts(r + 1))
        vals.append(float(np.sum(Vj * np.sum(bk**2, axis=0))))
    vals = np.array(vals)
    h = history.interval
    H_int = float(h * (np.sum(vals) - 0.5 * (vals[0] + vals[-1]))) if len(vals) > 1 else 0.0
    gB = gradient(cache, dt("B", r))
    H_inst = 0.5 * params.lam * float(np.sum(V * np.sum(gB**2, axis=(0, 1))))
    H2 = H_int + H_inst

    rep = EnergyReport(t=float(st.t), r=r, E_phys=physical_energy(st, params, cache), E_sk=E_sk,
                       K_r=K_r, W_next=W, H_next2=H2, H_integral=H_int, H_instant=H_inst,
                       E_r=0.0, rt_margin=margin["eps0"], nu_min=margin["nu_min"],
                       nu_max=margin["nu_max"], degenerate=margin["degenerate"])
    rep.E_r = rep.total_from_parts()
    if with_apriori:
        rep.apriori = apriori_report(st, params, cache)
    return rep

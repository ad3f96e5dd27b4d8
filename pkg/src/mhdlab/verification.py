"""Checks of the D_t commutator identities and empirical inequality ratios.

Commutators are evaluated on a time history of flow maps and a test field.
D_t is plain time differentiation at fixed label (centred finite differences
at the middle sample), spatial derivatives are the Eulerian SEM derivatives
of the flow map at each sample. The right-hand sides are built from the
recursive expansions

    [d, D_t^k] = [d, D_t] D_t^{k-1} + D_t [d, D_t^{k-1}],
    D_t (d_a Y) = d_a D_t Y - (d_a u^m) d_m Y,

so no constants are transcribed by hand.
"""

import itertools
import logging
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .energies import fd_weights
from .errors import PreconditionError, UnsupportedOrderError
from .geometry import element_metric, project
from .numerics import grad_nodes, gradient, integrate, laplacian

log = logging.getLogger(__name__)

IDENTITIES = ("dt_gradr", "grad_dtk", "dtk_bdot", "dtk_laplace")
INEQUALITIES = ("hodge", "elliptic_I", "elliptic_II", "tensor", "theta")
MAX_K = 3
MAX_LAPLACE = 2


@dataclass
class IdentityCase:
    """One commutator check.

    ``x``, ``f`` (and ``B`` for dtk_bdot) are histories sampled at spacing
    ``dt``; the identity is tested at the middle sample. ``order`` is r for
    dt_gradr, k for grad_dtk/dtk_bdot and r-1 for dtk_laplace.
    """
    identity: str
    order: int
    mesh: object
    x: np.ndarray
    f: np.ndarray
    dt: float
    B: np.ndarray = None
    h: float = None
    region: np.ndarray = None

    def __post_init__(self):
        if self.identity not in IDENTITIES:
            raise ValueError(f"unknown identity {self.identity!r}; choose from {', '.join(IDENTITIES)}")
        top = MAX_LAPLACE if self.identity == "dtk_laplace" else MAX_K
        if not 1 <= self.order <= top:
            raise UnsupportedOrderError(f"{self.identity} supports orders 1..{top}, got {self.order}")
        self.x = np.asarray(self.x, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        if self.identity == "dtk_bdot":
            if self.B is None:
                raise ValueError("dtk_bdot needs a B history")
            self.B = np.asarray(self.B, dtype=float)
        if len(self.x) != len(self.f) or len(self.x) < stencil_size(self.order):
            raise ValueError(f"need at least {stencil_size(self.order)} equally spaced samples")
        if len(self.x) % 2 == 0:
            raise ValueError("histories must have an odd number of samples")


def stencil_size(k):
    """Fewest centred samples for a D_t^k of at least fourth order."""
    return 2 * k + 3


# --- chain algebra for [d, D_t^k] -------------------------------------------
# A chain (l_1, ..., l_{n-1}; l_n) stands for
#   (d_i D_t^{l_1} u^{m_1}) (d_{m_1} D_t^{l_2} u^{m_2}) ... (d_{m_{n-1}} D_t^{l_n} f).

def _dt_chain(chain):
    out = {}
    links, lf = chain
    factors = list(links) + [lf]
    for pos in range(len(factors)):
        # differentiate factor pos: raise its order ...
        up = factors.copy()
        up[pos] += 1
        key = (tuple(up[:-1]), up[-1])
        out[key] = out.get(key, 0) + 1
        # ... and insert -(d u) in front of it
        ins = factors[:pos] + [0] + factors[pos:]
        key = (tuple(ins[:-1]), ins[-1])
        out[key] = out.get(key, 0) - 1
    return out


def grad_dtk_chains(k):
    """Coefficient table of [d, D_t^k] as chains; frozen by recursion."""
    if k < 1:
        return {}
    table = {((0,), k - 1): 1}
    for key, c in grad_dtk_chains(k - 1).items():
        for key2, c2 in _dt_chain(key).items():
            table[key2] = table.get(key2, 0) + c * c2
    return {key: c for key, c in table.items() if c != 0}


def _eval_chain(chain, c, du, df):
    """Evaluate one chain; du[l][i, m] = d_i D_t^l u^m, df[l][i, ...] = d_i D_t^l f."""
    links, lf = chain
    v = df[lf]
    for l in reversed(links):
        v = np.einsum("im...,m...->i...", du[l], v)
    return c * v


# --- sampling helpers -------------------------------------------------------

class _Samples:
    def __init__(self, case):
        self.case = case
        self.mesh = case.mesh
        self.n = len(case.x)
        self.c = self.n // 2
        self._em = {}

    def em(self, j):
        if j not in self._em:
            self._em[j] = element_metric(self.mesh, self.case.x[j])
        return self._em[j]

    def dt(self, values, k):
        """D_t^k at the centre using every sample (list or array over time)."""
        if k == 0:
            return np.asarray(values[self.c])
        w = fd_weights(np.arange(self.n) - self.c, k) / self.case.dt**k
        out = 0.0
        for i in range(self.n):
            out = out + w[i] * np.asarray(values[i])
        return out

    def grad(self, j, f):
        return grad_nodes(self.mesh, self.em(j), f)

    def grad_r(self, j, f, r):
        for _ in range(r):
            f = self.grad(j, f)
        return f

    def over_time(self, fn):
        return [fn(j) for j in range(self.n)]


def _symmetrize(T, r):
    axes = list(range(r))
    rest = list(range(r, T.ndim))
    acc = 0.0
    perms = list(itertools.permutations(axes))
    for p in perms:
        acc = acc + np.transpose(T, list(p) + rest)
    return acc / len(perms)


def _dt_gradr(s, r):
    f = s.case.f
    lhs_a = s.dt(s.over_time(lambda j: s.grad_r(j, f[j], r)), 1)
    lhs_b = s.grad_r(s.c, s.dt(f, 1), r)
    u = s.dt(s.case.x, 1)
    rhs = 0.0
    for q in range(r):
        dqu = s.grad_r(s.c, u, 1 + q)          # slots (i_1..i_{1+q}, k)
        dpf = s.grad_r(s.c, f[s.c], r - q)      # slots (j_1..j_{r-q})
        # contract u^k with one (symmetric) derivative slot of f, pointwise
        a = "abcdefg"[: q + 1]
        b = "pqrst"[: r - q - 1]
        T = np.einsum(f"{a}kz,k{b}...z->{a}{b}...z", dqu, dpf)
        rhs = rhs - comb(r, q + 1) * _symmetrize(T, r)
    return lhs_a - lhs_b, rhs, lhs_a


def _u_levels(s, top):
    """d D_t^l u at the centre for l <= top (u = D_t x)."""
    return [s.grad(s.c, s.dt(s.case.x, l + 1)) for l in range(top + 1)]


def _grad_dtk_terms(s, k, f_hist):
    du = _u_levels(s, k - 1)
    df = [s.grad(s.c, s.dt(f_hist, l)) for l in range(k)]
    rhs = 0.0
    for chain, c in grad_dtk_chains(k).items():
        rhs = rhs + _eval_chain(chain, c, du, df)
    return rhs


def _grad_dtk(s, k):
    f = s.case.f
    lhs_a = s.grad(s.c, s.dt(f, k))
    lhs_b = s.dt(s.over_time(lambda j: s.grad(j, f[j])), k)
    return lhs_a - lhs_b, _grad_dtk_terms(s, k, f), lhs_a


def _dtk_bdot(s, k):
    f, B = s.case.f, s.case.B

    def bdot(j, g):
        return np.einsum("lm,l...m->...m", B[j], s.grad(j, g))

    lhs_a = s.dt(s.over_time(lambda j: bdot(j, f[j])), k)
    lhs_b = bdot(s.c, s.dt(f, k))
    rhs = 0.0
    for j in range(k):
        Bk = s.dt(B, k - j)
        rhs = rhs + comb(k, j) * np.einsum("lm,l...m->...m", Bk, s.grad(s.c, s.dt(f, j)))
    for j in range(1, k + 1):
        # [D_t^j, d_l] = -[d_l, D_t^j]
        Bk = s.dt(B, k - j)
        rhs = rhs - comb(k, j) * np.einsum("lm,l...m->...m", Bk, _grad_dtk_terms(s, j, f))
    return lhs_a - lhs_b, rhs, lhs_a


def _cm(s, du, ddu_lap, g1, g2):
    """[D_t, Lap] g = -2 d_i u^k d_i d_k g - (Lap u^k) d_k g."""
    return (-2.0 * np.einsum("ikm,ik...m->...m", du, g2)
            - np.einsum("km,k...m->...m", ddu_lap, g1))


def _dtk_laplace(s, m):
    f = s.case.f
    c = s.c
    lhs_a = s.dt(s.over_time(lambda j: _lap(s, j, f[j])), m)
    lhs_b = _lap(s, c, s.dt(f, m))
    u = s.dt(s.case.x, 1)
    ud = s.dt(s.case.x, 2)
    du = s.grad(c, u)
    du2 = s.grad(c, du)
    lapu = np.einsum("iikm->km", du2)

    def derivs(g):
        g1 = s.grad(c, g)
        return g1, s.grad(c, g1)

    f0 = f[c]
    f1 = s.dt(f, 1)
    F1, F2 = derivs(f0)
    if m == 1:
        return lhs_a - lhs_b, _cm(s, du, lapu, F1, F2), lhs_a
    # m == 2: [D_t^2, Lap] f = [D_t, Lap] D_t f + D_t([D_t, Lap] f)
    G1, G2 = derivs(f1)
    dud = s.grad(c, ud)
    dud2 = s.grad(c, dud)
    lapud = np.einsum("iikm->km", dud2)
    rhs = _cm(s, du, lapu, G1, G2)
    # D_t of (-2 d_i u^k d_ik f - Lap u^k d_k f), expanded with the D_t d rule
    D_du = dud - np.einsum("imn,mkn->ikn", du, du)
    D_F2 = (G2 - np.einsum("imn,mk...n->ik...n", du, F2)
            - np.einsum("kmn,im...n->ik...n", du, F2)
            - np.einsum("ikmn,m...n->ik...n", du2, F1))
    D_F1 = G1 - np.einsum("imn,m...n->i...n", du, F1)
    D_lapu = lapud + _cm(s, du, lapu, du, du2)
    rhs = rhs + (-2.0 * np.einsum("ikm,ik...m->...m", D_du, F2)
                 - 2.0 * np.einsum("ikm,ik...m->...m", du, D_F2)
                 - np.einsum("km,k...m->...m", D_lapu, F1)
                 - np.einsum("km,k...m->...m", lapu, D_F1))
    return lhs_a - lhs_b, rhs, lhs_a


def _lap(s, j, g):
    g2 = s.grad_r(j, g, 2)
    return np.einsum("ii...->...", g2)


_DISPATCH = {"dt_gradr": _dt_gradr, "grad_dtk": _grad_dtk, "dtk_bdot": _dtk_bdot,
             "dtk_laplace": _dtk_laplace}


def _single_residual(case):
    s = _Samples(case)
    lhs, rhs, ref = _DISPATCH[case.identity](s, case.order)
    if case.region is not None:
        lhs, rhs, ref = (np.asarray(a)[..., case.region] for a in (lhs, rhs, ref))
    diff = float(np.max(np.abs(lhs - rhs)))
    scale = max(float(np.max(np.abs(ref))), float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))),
                float(np.max(np.abs(case.f[len(case.f) // 2]))))
    rel = diff / scale if scale > 0 else diff
    return {"residual": rel, "absolute": diff, "scale": scale}


def commutator_residual(case, refined=()):
    """Max relative residual of a commutator identity.

    ``refined`` holds the same case at successively halved spacing; the
    empirical order is the smallest log2 ratio between consecutive levels.
    """
    levels = [case] + list(refined)
    recs = [_single_residual(c) for c in levels]
    res = [r["residual"] for r in recs]
    slope = None
    if len(res) > 1:
        orders = [np.log2(a / b) if a > 0 and b > 0 else np.inf for a, b in zip(res[:-1], res[1:])]
        slope = float(min(orders))
    out = {"identity": case.identity, "order": case.order, "max_residual": res[0],
           "residuals": res, "slope": slope}
    log.info("commutator %s order %d residuals %s", case.identity, case.order, res)
    return out


def sample_flow(mesh, kind, dt, n, seed=0, vector=False):
    """Flow-map and test-field histories for commutator checks.

    ``polynomial``: affine-in-label flow, quadratic-in-time, and a quadratic
    test field; every derivative is exact so the identities hold to round-off.
    ``smooth``: a non-polynomial flow and field; residuals shrink with dt.
    ``frozen``: x independent of time.
    Returns (x, f, B) arrays of shape (n, ...), centred at t = 0.
    """
    rng = np.random.default_rng(seed)
    d = mesh.dim
    y = mesh.y
    ts = (np.arange(n) - n // 2) * dt
    # strictly upper triangular rates keep the inverse Jacobian polynomial in t
    A1 = np.triu(0.3 * rng.standard_normal((d, d)), 1)
    A2 = np.triu(0.2 * rng.standard_normal((d, d)), 1)
    b1 = 0.1 * rng.standard_normal(d)
    cf = rng.standard_normal((d, d))
    cl = rng.standard_normal(d)
    xs, fs, Bs = [], [], []
    for t in ts:
        if kind == "polynomial":
            M = np.eye(d) + t * A1 + t * t * A2
            x = M @ y + (t * b1)[:, None]
            q = np.einsum("im,ij,jm->m", y, cf, y) + cl @ y
            f = (1.0 + t + 0.5 * t * t) * q + t * y[0]
            Bv = np.stack([(1 + t) * y[1] + t * t, -(1 - t) * y[0]] + [t * y[0]] * (d - 2))
        elif kind == "smooth":
            w = np.stack([np.sin(y[(i + 1) % d] + 0.3 * i) for i in range(d)])
            x = y + 0.2 * np.sin(t + 0.5) * w + 0.1 * t * t * np.cos(y[::-1])
            f = np.exp(0.5 * x[0] - 0.3 * x[1]) * np.cos(1.3 * t) + np.sin(t) * y[1] ** 3
            Bv = np.stack([np.cos(t + y[1]), np.sin(t - y[0])] + [np.cos(t) * y[0]] * (d - 2))
        elif kind == "frozen":
            x = y.copy()
            f = np.cos(t) * np.sin(y[0]) + t * y[-1] ** 2
            Bv = np.stack([y[1], -y[0]] + [y[0]] * (d - 2))
        else:
            raise ValueError(f"unknown sample flow {kind!r}")
        if vector:
            f = np.stack([f] + [f * y[i] for i in range(1, d)])
        xs.append(x)
        fs.append(f)
        Bs.append(Bv)
    return np.array(xs), np.array(fs), np.array(Bs)


def make_case(identity, order, mesh, kind="polynomial", dt=None, n=None, seed=0, vector=False):
    """Build an IdentityCase from :func:`sample_flow`.

    Polynomial cases use enough samples that the time differences are exact
    and are checked on the nodes where the space derivatives are exact.
    """
    if n is None:
        n = 17 if kind == "polynomial" else stencil_size(order + (identity == "dtk_laplace"))
    if dt is None:
        dt = 0.2 if kind == "polynomial" else 0.1
    x, f, B = sample_flow(mesh, kind, dt, n, seed=seed, vector=vector)
    region = exact_region(mesh, derivative_depth(identity, order)) if kind == "polynomial" else None
    return IdentityCase(identity, order, mesh, x, f, dt, B=B, region=region)


def derivative_depth(identity, order):
    """Deepest nesting of spatial derivatives an identity evaluates."""
    return {"dt_gradr": order, "dtk_laplace": 2}.get(identity, 1)


def exact_region(mesh, depth):
    """Nodes where ``depth`` nested SEM derivatives of a label polynomial are exact.

    Only the central block is affine. Each further derivative loses one
    layer of elements next to the curved blocks, because node values are
    averaged over every element sharing the node.
    """
    E = mesh.nelem
    conn = mesh.conn.reshape(E, -1)
    good_el = mesh.block == 0
    for level in range(depth):
        bad = np.zeros(mesh.nnode, dtype=bool)
        bad[conn[~good_el].ravel()] = True
        good_node = ~bad
        if level + 1 < depth:
            good_el = np.all(good_node[conn], axis=1)
    idx = np.flatnonzero(good_node)
    if idx.size == 0:
        raise ValueError(f"mesh too coarse for {depth} exact derivatives; raise K")
    return idx


# --- inequalities -----------------------------------------------------------

@dataclass
class InequalityCase:
    inequality: str
    cache: object
    field: np.ndarray
    r: int = 2
    delta: float = 1.0
    P: np.ndarray = None
    lhs: float = None
    rhs: float = None
    ratio: float = None
    vacuous: bool = False
    terms: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.inequality not in INEQUALITIES:
            raise ValueError(f"unknown inequality {self.inequality!r}; choose from {', '.join(INEQUALITIES)}")


def _bnorm(cache, T):
    T = np.asarray(T, dtype=float)
    sq = T**2 if T.ndim == 1 else np.sum(T**2, axis=tuple(range(T.ndim - 1)))
    return float(np.sqrt(max(integrate(cache, sq, "boundary"), 0.0)))


def _inorm(cache, T):
    T = np.asarray(T, dtype=float)
    sq = T**2 if T.ndim == 1 else np.sum(T**2, axis=tuple(range(T.ndim - 1)))
    return float(np.sqrt(max(integrate(cache, sq), 0.0)))


def _grads(cache, q, r):
    out = [np.asarray(q, dtype=float)]
    for _ in range(r):
        out.append(gradient(cache, out[-1]))
    return out


def _require_trace_zero(cache, q, what):
    b = cache.mesh.bnodes
    scale = max(1.0, float(np.max(np.abs(q))))
    tr = float(np.max(np.abs(q[b])))
    if tr > 1e-8 * scale:
        raise PreconditionError(f"{what}: q does not vanish on the boundary (max trace {tr:.3e})")


def _hodge(case):
    cache, beta = case.cache, np.asarray(case.field, dtype=float)
    if beta.ndim != 2:
        raise PreconditionError("hodge: beta must be a vector field")
    db = gradient(cache, beta)              # db[k, i] = d_k beta_i
    if cache.N_ext is None:
        raise PreconditionError("hodge: geometry computed without the extended normal")
    K = cache.K0 + 1.0 / cache.iota0
    nb = np.einsum("im,kim->km", cache.N_ext, db)
    div = np.einsum("iim->m", db)
    curl = db - np.swapaxes(db, 0, 1)
    lhs = integrate(cache, np.sum(db**2, axis=(0, 1)))
    rhs = integrate(cache, np.sum(nb**2, axis=0) + div**2 + 0.5 * np.sum(curl**2, axis=(0, 1))
                    + K**2 * np.sum(beta**2, axis=0))
    return np.sqrt(lhs), np.sqrt(rhs), {"K": K}


def _elliptic(case, kind):
    cache, q, r = case.cache, np.asarray(case.field, dtype=float), case.r
    if r < 2:
        raise PreconditionError(f"{kind}: r must be at least 2")
    g = _grads(cache, q, r)
    lq = laplacian(cache, q)
    gl = _grads(cache, lq, max(r - 1, 0))
    pis = sum(_bnorm(cache, _proj_full(cache, g[s])) for s in range(r + 1))
    if kind == "elliptic_I":
        lhs = _inorm(cache, g[r]) + _bnorm(cache, g[r])
        rhs = pis + sum(_inorm(cache, gl[s]) for s in range(r))
    else:
        dl = case.delta
        lhs = _inorm(cache, g[r]) + _bnorm(cache, g[r - 1])
        rhs = dl * pis + sum(_inorm(cache, gl[s]) for s in range(r - 1)) / dl
    return lhs, rhs, {}


def _proj_full(cache, T):
    """Pi on boundary nodes; rank 0 keeps the boundary values."""
    return project(cache, T) if np.ndim(T) > 1 else np.asarray(T)


def _tensor(case):
    cache, q, r = case.cache, np.asarray(case.field, dtype=float), case.r
    if r != 2:
        raise UnsupportedOrderError("tensor estimate implemented for r = 2")
    _require_trace_zero(cache, q, "tensor")
    g = _grads(cache, q, 2)
    dnq = np.einsum("im,im->m", cache.N, g[1])
    lhs = _bnorm(cache, project(cache, g[2]))
    rhs = _bnorm(cache, cache.theta * dnq) + _bnorm(cache, g[1])
    return lhs, rhs, {}


def _theta(case):
    from .energies import rt_margin
    cache, r = case.cache, case.r
    if r != 2:
        raise UnsupportedOrderError("theta estimate implemented for r = 2")
    P = np.asarray(case.field if case.P is None else case.P, dtype=float)
    m = rt_margin(None, P=P, cache=cache)
    if not m["eps0"] > 0:
        raise PreconditionError(f"theta: Rayleigh-Taylor margin not positive (eps0 = {m['eps0']:.3e})")
    g = _grads(cache, P, 2)
    lhs = _bnorm(cache, cache.theta)
    rhs = _bnorm(cache, project(cache, g[2])) + _bnorm(cache, g[1])
    return lhs, rhs, {"eps0": m["eps0"]}


def inequality_ratio(case):
    """Fill lhs, rhs and ratio of an inequality case; 0/0 is a vacuous pass."""
    if case.inequality == "hodge":
        lhs, rhs, extra = _hodge(case)
    elif case.inequality in ("elliptic_I", "elliptic_II"):
        lhs, rhs, extra = _elliptic(case, case.inequality)
    elif case.inequality == "tensor":
        lhs, rhs, extra = _tensor(case)
    else:
        lhs, rhs, extra = _theta(case)
    tiny = 1e-300
    case.lhs, case.rhs, case.terms = float(lhs), float(rhs), extra
    if lhs <= tiny and rhs <= tiny:
        case.vacuous, case.ratio = True, 0.0
    elif rhs <= tiny:
        case.ratio = np.inf
    else:
        case.ratio = lhs / rhs
    log.info("%s: lhs %.4e rhs %.4e ratio %.4e", case.inequality, case.lhs, case.rhs, case.ratio)
    return {"inequality": case.inequality, "lhs": case.lhs, "rhs": case.rhs,
            "ratio": case.ratio, "vacuous": case.vacuous}


def random_boundary_field(cache, rng, degree=4):
    """Random polynomial times (1 - |y|^2): vanishes on the boundary of the ball."""
    y = cache.mesh.y
    d = cache.mesh.dim
    val = np.zeros(y.shape[1])
    for powers in itertools.product(range(degree + 1), repeat=d):
        if sum(powers) <= degree:
            val += rng.standard_normal() * np.prod([y[i] ** powers[i] for i in range(d)], axis=0)
    return (1.0 - np.sum(y**2, axis=0)) * val


def ratio_sweep(inequality, cache, n=20, seed=0, r=2, delta=1.0):
    """Max ratio over n random boundary-vanishing fields (an empirical constant)."""
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(n):
        q = random_boundary_field(cache, rng)
        fld = gradient(cache, q) if inequality == "hodge" else q
        ratios.append(inequality_ratio(InequalityCase(inequality, cache, fld, r=r, delta=delta))["ratio"])
    return {"inequality": inequality, "n": n, "max_ratio": float(np.max(ratios)),
            "ratios": ratios}


"""Lagrangian-coordinate geometry of a flow map on the reference ball.

Index conventions: Eulerian tensors carry Cartesian components and are
stored component-first, ``(d, nnode)`` for vectors and ``(d, d, nnode)`` for
two-tensors. Lagrangian (reference) components are marked ``_lag``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConditioningError, OrientationError, PreconditionError

ETA_NORMAL = 2.0
COND_MAX = 1e12


@dataclass
class FlowMapState:
    mesh: object
    x: np.ndarray
    t: float = 0.0

    @property
    def dim(self):
        return self.mesh.dim


@dataclass
class ElementMetric:
    Dx: list
    C: list
    J: object


def cofactor(M, d):
    """Cofactor ``C[k][a] = J d(xi_a)/d(x_k)`` of the element Jacobian."""
    if d == 2:
        return [[M[1][1], -M[1][0]], [-M[0][1], M[0][0]]]
    C = [[None] * 3 for _ in range(3)]
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        for k in range(3):
            k1, k2 = (k + 1) % 3, (k + 2) % 3
            C[k][a] = M[k1][b] * M[k2][c] - M[k2][b] * M[k1][c]
    return C


def element_metric(mesh, x):
    d = mesh.dim
    xe = [mesh.gather(x[k]) for k in range(d)]
    Dx = [[mesh.dloc(xe[k], a) for a in range(d)] for k in range(d)]
    C = cofactor(Dx, d)
    J = sum(Dx[k][0] * C[k][0] for k in range(d))
    return ElementMetric(Dx, C, J)


def grad_e(mesh, em, fe):
    """Element-local Eulerian gradient of element values ``fe``."""
    d = mesh.dim
    dfa = [mesh.dloc(fe, a) for a in range(d)]
    return [sum(em.C[k][a] * dfa[a] for a in range(d)) / em.J for k in range(d)]


def ref_metric(mesh):
    if getattr(mesh, "_ref_metric", None) is None:
        mesh._ref_metric = element_metric(mesh, mesh.y)
    return mesh._ref_metric


def lagrangian_jacobian_e(mesh, x):
    """Element values of dx_i/dy_a."""
    emy = ref_metric(mesh)
    d = mesh.dim
    xe = [mesh.gather(x[k]) for k in range(d)]
    out = []
    for i in range(d):
        dxa = [mesh.dloc(xe[i], b) for b in range(d)]
        out.append([sum(dxa[b] * emy.C[a][b] for b in range(d)) / emy.J for a in range(d)])
    return out


@dataclass
class GeometryCache:
    mesh: object
    x: np.ndarray
    t: float
    em: ElementMetric = field(repr=False)
    F: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)
    ginv: np.ndarray = field(repr=False)
    J: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)
    N: np.ndarray = field(repr=False)
    N_lag: np.ndarray = field(repr=False)
    gamma: np.ndarray = field(repr=False)
    gamma_lag: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    theta_lag: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    dist: np.ndarray = field(repr=False)
    eta: np.ndarray = field(repr=False)
    N_ext: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    d0: float = 0.0
    iota0: float = 0.0
    K0: float = 0.0
    l1: float = 0.0
    radius: float = 0.0
    face_N: np.ndarray = field(repr=False, default=None)
    face_sJ: np.ndarray = field(repr=False, default=None)

    @property
    def dim(self):
        return self.mesh.dim

    @property
    def bnodes(self):
        return self.mesh.bnodes


def _face_normals(mesh, em):
    d = mesh.dim
    cols = np.stack([np.stack([mesh.face_values(em.C[k][a]) for k in range(d)]) for a in range(d)])
    F = mesh.nface
    ncol = cols[mesh.face_axis, :, np.arange(F)]  # (F, d, ...)
    ncol = np.moveaxis(ncol, 1, 0) * mesh.face_side.reshape((1, F) + (1,) * (d - 1))
    sJ = np.sqrt(np.sum(ncol**2, axis=0))
    return ncol / sJ, sJ


def _interp_matrix(xi, m):
    s = np.linspace(-1.0, 1.0, m)
    n = xi.size
    L = np.ones((m, n))
    for j in range(n):
        for k in range(n):
            if k != j:
                L[:, j] *= (s - xi[k]) / (xi[j] - xi[k])
    return L


def _lagrange(xi, s):
    """Lagrange basis on nodes ``xi`` and its first two derivatives at ``s``."""
    n = xi.size
    s = np.asarray(s, dtype=float)
    L = np.zeros(s.shape + (n,))
    dL = np.zeros_like(L)
    d2L = np.zeros_like(L)
    for j in range(n):
        others = [k for k in range(n) if k != j]
        den = np.prod([xi[j] - xi[k] for k in others])
        fac = [s - xi[k] for k in others]
        L[..., j] = np.prod(fac, axis=0) / den
        for a in range(n - 1):
            term = np.prod([fac[b] for b in range(n - 1) if b != a], axis=0) if n > 2 else 1.0
            dL[..., j] += term / den
            for c in range(n - 1):
                if c == a:
                    continue
                t2 = np.prod([fac[b] for b in range(n - 1) if b not in (a, c)], axis=0) if n > 3 else 1.0
                d2L[..., j] += t2 / den
    return L, dL, d2L


def _boundary_samples(mesh, x, N, m=None):
    d = mesh.dim
    m = m or 4 * mesh.p + 1
    s = np.linspace(-1.0, 1.0, m)
    L = _lagrange(mesh.xi, s)[0]
    xf = [mesh.face_values(mesh.gather(x[k])) for k in range(d)]
    nf = [mesh.face_values(mesh.gather(N[k])) for k in range(d)]

    def up(v):
        if d == 2:
            return np.einsum("mi,fi->fm", L, v).ravel()
        return np.einsum("mi,nj,fij->fmn", L, L, v).ravel()

    P = np.stack([up(v) for v in xf])
    Q = np.stack([up(v) for v in nf])
    Q /= np.sqrt(np.sum(Q**2, axis=0))
    nf_ = mesh.nface
    if d == 2:
        face = np.repeat(np.arange(nf_), m)
        par = np.tile(s, nf_)[None]
    else:
        face = np.repeat(np.arange(nf_), m * m)
        g1, g2 = np.meshgrid(s, s, indexing="ij")
        par = np.stack([np.tile(g1.ravel(), nf_), np.tile(g2.ravel(), nf_)])
    return P, Q, face, par, np.stack(xf), np.stack(nf)


def _foot_points(mesh, pts, face, par, xf, nf, iters=8):
    """Newton refinement of the nearest boundary point on the face interpolant."""
    d = mesh.dim
    par = par.copy()
    X = xf[:, face]  # (d, M, n[, n])
    Nn = nf[:, face]
    for _ in range(iters):
        if d == 2:
            L, dL, d2L = _lagrange(mesh.xi, par[0])
            pos = np.einsum("kmi,mi->km", X, L)
            t1 = np.einsum("kmi,mi->km", X, dL)
            t11 = np.einsum("kmi,mi->km", X, d2L)
            r = pos - pts
            g = np.sum(t1 * r, axis=0)
            h = np.sum(t1 * t1, axis=0) + np.sum(t11 * r, axis=0)
            h = np.where(h > 1e-14, h, np.sum(t1 * t1, axis=0))
            par[0] = np.clip(par[0] - g / h, -1.0, 1.0)
        else:
            L1, dL1, d2L1 = _lagrange(mesh.xi, par[0])
            L2, dL2, d2L2 = _lagrange(mesh.xi, par[1])
            ev = lambda A, B: np.einsum("kmij,mi,mj->km", X, A, B)
            pos = ev(L1, L2)
            ta, tb = ev(dL1, L2), ev(L1, dL2)
            taa, tab, tbb = ev(d2L1, L2), ev(dL1, dL2), ev(L1, d2L2)
            r = pos - pts
            g = np.stack([np.sum(ta * r, 0), np.sum(tb * r, 0)])
            h11 = np.sum(ta * ta, 0) + np.sum(taa * r, 0)
            h12 = np.sum(ta * tb, 0) + np.sum(tab * r, 0)
            h22 = np.sum(tb * tb, 0) + np.sum(tbb * r, 0)
            det = h11 * h22 - h12 * h12
            ok = det > 1e-14
            step = np.where(ok, np.stack([(h22 * g[0] - h12 * g[1]), (h11 * g[1] - h12 * g[0])])
                            / np.where(ok, det, 1.0), 0.0)
            par = np.clip(par - step, -1.0, 1.0)
    if d == 2:
        L = _lagrange(mesh.xi, par[0])[0]
        pos = np.einsum("kmi,mi->km", X, L)
        nrm = np.einsum("kmi,mi->km", Nn, L)
    else:
        L1 = _lagrange(mesh.xi, par[0])[0]
        L2 = _lagrange(mesh.xi, par[1])[0]
        pos = np.einsum("kmij,mi,mj->km", X, L1, L2)
        nrm = np.einsum("kmij,mi,mj->km", Nn, L1, L2)
    nrm /= np.sqrt(np.sum(nrm**2, axis=0))
    return pos, nrm


def distance_field(mesh, x, N):
    """Distance to the boundary and the normal at the nearest boundary point."""
    b = mesh.bmask
    P, Q, face, par, xf, nf = _boundary_samples(mesh, x, N)
    tree = cKDTree(P.T)
    dist = np.zeros(mesh.nnode)
    N_ext = N.copy()
    ii = np.flatnonzero(~b)
    # several candidates: the nearest sample may sit on a face edge whose
    # true foot point lies on the neighbouring face
    kc = 2 * mesh.dim
    _, idx = tree.query(x[:, ii].T, k=kc)
    dd = np.full(ii.size, np.inf)
    diff = np.zeros((mesh.dim, ii.size))
    nrm = np.zeros((mesh.dim, ii.size))
    for c in range(kc):
        fc, nc = _foot_points(mesh, x[:, ii], face[idx[:, c]], par[:, idx[:, c]], xf, nf)
        dc = fc - x[:, ii]
        ln = np.sqrt(np.sum(dc**2, axis=0))
        better = ln < dd
        dd = np.where(better, ln, dd)
        diff = np.where(better, dc, diff)
        nrm = np.where(better, nc, nrm)
    dist[ii] = dd
    scale = max(1.0, float(np.max(np.abs(x))))
    use = dd > 1e-6 * scale
    N_ext[:, ii] = np.where(use, diff / np.where(use, dd, 1.0), nrm)
    return dist, N_ext


def smoothstep_cutoff(dist, d0):
    """Quintic cutoff: 1 for dist <= d0/4, 0 for dist >= d0/2, C^2 between."""
    z = np.clip((np.asarray(dist, dtype=float) - 0.25 * d0) / (0.25 * d0), 0.0, 1.0)
    return 1.0 - z**3 * (10.0 - 15.0 * z + 6.0 * z**2)


def injectivity_bound(K0, l1):
    """Lower bound min{l1/2, 1/K0} on the normal injectivity radius."""
    if K0 < 0:
        raise ValueError("curvature bound must be non-negative")
    if not l1 > 0:
        raise ValueError("normal-spread length must be positive")
    inv = np.inf if K0 == 0 else 1.0 / K0
    return float(min(0.5 * l1, inv))


def normal_spread_length(points, normals, eta=ETA_NORMAL):
    """Largest l such that |N1-N2| <= eta whenever |x1-x2| <= l."""
    dn = np.sqrt(np.sum((normals[:, :, None] - normals[:, None, :]) ** 2, axis=0))
    bad = dn > eta + 1e-12
    if not np.any(bad):
        return np.inf
    dx = np.sqrt(np.sum((points[:, :, None] - points[:, None, :]) ** 2, axis=0))
    return float(np.min(dx[bad]))


def compute_geometry(flowmap, distance=True):
    """Metric, boundary geometry and interior q-tensor of a flow map.

    With ``distance=False`` the distance, cutoff and q-tensor fields are
    skipped (set to None); the metric and boundary quantities are unchanged.
    """
    mesh = flowmap.mesh
    x = np.asarray(flowmap.x, dtype=float)
    d = mesh.dim
    em = element_metric(mesh, x)
    if np.any(em.J <= 0):
        e = np.unravel_index(np.argmin(em.J), em.J.shape)
        raise OrientationError(int(mesh.conn[e]), float(em.J[e]))

    Fe = lagrangian_jacobian_e(mesh, x)
    F = np.stack([np.stack([mesh.dss(Fe[i][a]) for a in range(d)]) for i in range(d)])
    g = np.einsum("iam,ibm->abm", F, F)
    gm = np.moveaxis(g, -1, 0)
    ev = np.linalg.eigvalsh(gm)
    if np.any(ev[:, 0] <= 0):
        node = int(np.argmin(ev[:, 0]))
        raise OrientationError(node, float(ev[node, 0]))
    cond = ev[:, -1] / ev[:, 0]
    if np.any(cond > COND_MAX):
        node = int(np.argmax(cond))
        raise ConditioningError(f"metric condition number {cond[node]:.3e} at node {node}")
    ginv = np.moveaxis(np.linalg.inv(gm), 0, -1)
    J = np.linalg.det(np.moveaxis(F, -1, 0))
    V = mesh.scatter(mesh.W * em.J)

    face_N, face_sJ = _face_normals(mesh, em)
    N = np.stack(mesh.face_to_nodes(face_N))
    b = mesh.bnodes
    nb = np.sqrt(np.sum(N[:, b] ** 2, axis=0))
    N[:, b] /= nb

    # second fundamental form from tangential derivatives of N on faces
    xf = [mesh.face_values(mesh.gather(x[k])) for k in range(d)]
    nf = [mesh.face_values(mesh.gather(N[k])) for k in range(d)]
    T = [[mesh.face_dtan(xf[k], t) for k in range(d)] for t in range(d - 1)]
    dN = [[mesh.face_dtan(nf[j], t) for j in range(d)] for t in range(d - 1)]
    h = np.array([[sum(T[s][k] * T[t][k] for k in range(d)) for t in range(d - 1)] for s in range(d - 1)])
    hinv = np.moveaxis(np.linalg.inv(np.moveaxis(h, (0, 1), (-2, -1))), (-2, -1), (0, 1))
    th_f = np.zeros((d, d) + face_sJ.shape)
    for s in range(d - 1):
        for t in range(d - 1):
            for i in range(d):
                for j in range(d):
                    th_f[i, j] += hinv[s, t] * T[s][i] * dN[t][j]
    theta = np.stack([np.stack(mesh.face_to_nodes(th_f[i])) for i in range(d)])
    gam = np.zeros((d, d, mesh.nnode))
    gam[:, :, b] = np.eye(d)[:, :, None] - N[:, None, b] * N[None, :, b]
    theta = 0.5 * (theta + np.swapaxes(theta, 0, 1))
    theta = np.einsum("ikm,klm,jlm->ijm", gam, theta, gam)
    sigma = np.einsum("iim->m", theta)

    N_lag = np.einsum("iam,im->am", F, N)
    gamma_lag = np.zeros_like(g)
    gamma_lag[:, :, b] = g[:, :, b] - N_lag[:, None, b] * N_lag[None, :, b]
    theta_lag = np.einsum("iam,jbm,ijm->abm", F, F, theta)

    # distance, cutoff and interior projection tensor
    dist = N_ext = None
    if distance:
        dist, N_ext = distance_field(mesh, x, N)
    centroid = np.array([np.sum(V * x[k]) for k in range(d)]) / np.sum(V)
    radius = float(np.max(np.sqrt(np.sum((x[:, b] - centroid[:, None]) ** 2, axis=0))))
    K0 = float(np.max(np.sqrt(np.sum(theta[:, :, b] ** 2, axis=(0, 1)))))
    l1 = normal_spread_length(x[:, b], N[:, b])
    iota0 = injectivity_bound(K0, l1)
    d0 = min(0.5 * iota0, 0.25 * radius)
    eta = q = None
    if distance:
        eta = smoothstep_cutoff(dist, d0)
        q = np.eye(d)[:, :, None] - eta**2 * N_ext[:, None, :] * N_ext[None, :, :]

    return GeometryCache(mesh=mesh, x=x, t=flowmap.t, em=em, F=F, g=g, ginv=ginv, J=J, V=V,
                         N=N, N_lag=N_lag, gamma=gam, gamma_lag=gamma_lag, theta=theta,
                         theta_lag=theta_lag, sigma=sigma, dist=dist, eta=eta, N_ext=N_ext, q=q,
                         d0=d0, iota0=iota0, K0=K0, l1=l1, radius=radius,
                         face_N=face_N, face_sJ=face_sJ)


def metric_rates(cache, u):
    """Material derivatives of the metric quantities for velocity ``u``.

    The boundary measure factor is returned pointwise as the tangential
    divergence of ``u``; its boundary integral equals that of sigma u.N.
    """
    from .numerics import gradient
    mesh = cache.mesh
    d = mesh.dim
    Fe = lagrangian_jacobian_e(mesh, u)
    Fdot = np.stack([np.stack([mesh.dss(Fe[i][a]) for a in range(d)]) for i in range(d)])
    dg = np.einsum("iam,ibm->abm", Fdot, cache.F)
    dg = dg + np.swapaxes(dg, 0, 1)
    dginv = -np.einsum("acm,cdm,dbm->abm", cache.ginv, dg, cache.ginv)
    b = mesh.bnodes
    dN = np.zeros((d, mesh.nnode))
    corr = np.einsum("cm,cdm,dm->m", cache.N_lag[:, b], dginv[:, :, b], cache.N_lag[:, b])
    dN[:, b] = -0.5 * cache.N_lag[:, b] * corr
    du = gradient(cache, u)  # du[i, k] = d_i u^k
    div = np.einsum("iim->m", du)
    dmu_gamma = np.zeros(mesh.nnode)
    dmu_gamma[b] = np.einsum("ikm,ikm->m", cache.gamma[:, :, b], du[:, :, b])
    return {"dg": dg, "dginv": dginv, "dN": dN, "dmu_g": div, "dmu_gamma": dmu_gamma}


def project(cache, alpha):
    """Tangential projection of a rank-r tensor on every slot.

    ``alpha`` has shape ``(d,)*r + (nnode,)``; rank 0 is returned unchanged.
    """
    alpha = np.asarray(alpha, dtype=float)
    r = alpha.ndim - 1
    if r <= 0:
        return alpha.copy()
    out = alpha
    for slot in range(r):
        out = np.moveaxis(np.einsum("ijm,j...m->i...m", cache.gamma, np.moveaxis(out, slot, 0)), 0, slot)
    return out


def projection_identity_residual(cache, q, tol=1e-8):
    """Pointwise |Pi hess(q) - theta d_N q| on boundary nodes.

    For q vanishing on the boundary the tangential Hessian vanishes there,
    so the projected Hessian must equal theta times the normal derivative.
    """
    from .numerics import gradient
    q = np.asarray(q, dtype=float)
    b = cache.mesh.bnodes
    trace = float(np.max(np.abs(q[b]))) if b.size else 0.0
    scale = max(1.0, float(np.max(np.abs(q))))
    if trace > tol * scale:
        raise PreconditionError(f"q does not vanish on the boundary (max trace {trace:.3e})")
    dq = gradient(cache, q)
    hess = gradient(cache, dq)
    ph = project(cache, hess)
    dnq = np.einsum("im,im->m", cache.N, dq)
    res = ph - cache.theta * dnq
    return np.sqrt(np.sum(res[:, :, b] ** 2, axis=(0, 1)))

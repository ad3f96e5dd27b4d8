"""Spectral-element meshes of the reference unit ball.

The disk is covered by five blocks (a central square and four curved
blocks blending the square's edges into the circle); the ball uses seven
blocks in the same pattern. Each block is split into ``K**d`` elements
carrying a tensor grid of Gauss-Lobatto-Legendre (GLL) nodes of degree
``p``. Nodes shared by neighbouring elements are merged, so nodal fields are
continuous and element-local derivatives are assembled by direct stiffness
summation (DSS).
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.spatial import cKDTree

from .jets import lin


def gll(p):
    """GLL nodes, weights and differentiation matrix of degree ``p``."""
    if p < 1:
        raise ValueError("polynomial degree must be at least 1")
    cp = np.zeros(p + 1)
    cp[p] = 1.0
    interior = np.sort(npleg.legroots(npleg.legder(cp))) if p > 1 else np.array([])
    xi = np.concatenate([[-1.0], interior, [1.0]])
    lp = npleg.legval(xi, cp)
    w = 2.0 / (p * (p + 1) * lp**2)
    n = p + 1
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                D[i, j] = lp[i] / (lp[j] * (xi[i] - xi[j]))
    D[0, 0] = -p * (p + 1) / 4.0
    D[-1, -1] = p * (p + 1) / 4.0
    return xi, w, D


def _outer_point(dim, axis, sign, params):
    # equiangular projection of a cube face onto the unit sphere
    tans = [np.tan(0.25 * np.pi * s) for s in params]
    comps = []
    it = iter(tans)
    for k in range(dim):
        comps.append(np.full_like(tans[0], float(sign)) if k == axis else next(it))
    v = np.stack(comps)
    return v / np.sqrt(np.sum(v**2, axis=0))


def _inner_point(dim, axis, sign, params, a):
    comps = []
    it = iter(params)
    for k in range(dim):
        comps.append(np.full_like(params[0], a * sign) if k == axis else a * next(it))
    return np.stack(comps)


def _block_maps(dim, a):
    """List of (name, map) where map takes parameters in [-1,1]^d."""
    maps = [("center", lambda q: a * np.stack(q))]
    for axis in range(dim):
        for sign in (1, -1):
            def fmap(q, axis=axis, sign=sign):
                tang = list(q[:-1])
                r = 0.5 * (q[-1] + 1.0)
                inner = _inner_point(dim, axis, sign, tang, a)
                outer = _outer_point(dim, axis, sign, tang)
                return (1.0 - r) * inner + r * outer
            maps.append((f"{'+' if sign > 0 else '-'}{'xyz'[axis]}", fmap))
    return maps


def scatter_add(idx, vals, nnode):
    """Deterministic scatter-add of element values onto nodes.

    ``vals`` has shape ``(..., *idx.shape)``; leading axes are batch axes.
    """
    flat_idx = idx.ravel()
    lead = vals.shape[: vals.ndim - idx.ndim]
    v2 = vals.reshape((-1, flat_idx.size))
    out = np.empty((v2.shape[0], nnode))
    for r in range(v2.shape[0]):
        out[r] = np.bincount(flat_idx, weights=v2[r], minlength=nnode)
    return out.reshape(lead + (nnode,))


_LETTERS = "ijk"


def _deriv_subscripts(dim, axis, transpose=False):
    src = list(_LETTERS[:dim])
    dst = list(src)
    dst[axis] = "m"
    # D[m, i] contracts the local axis; transpose contracts the other index
    mat = f"{src[axis]}m" if transpose else f"m{src[axis]}"
    return f"{mat},...e{''.join(src)}->...e{''.join(dst)}"


@dataclass
class Mesh:
    dim: int
    p: int
    K: int
    a: float
    xi: np.ndarray
    w: np.ndarray
    D: np.ndarray
    conn: np.ndarray
    y: np.ndarray
    block: np.ndarray
    face_elem: np.ndarray
    face_axis: np.ndarray
    face_side: np.ndarray
    W: np.ndarray = field(repr=False, default=None)
    w_ref: np.ndarray = field(repr=False, default=None)
    dss_den: np.ndarray = field(repr=False, default=None)

    @property
    def n(self):
        return self.p + 1

    @property
    def nnode(self):
        return self.y.shape[1]

    @property
    def nelem(self):
        return self.conn.shape[0]

    @property
    def nface(self):
        return self.face_elem.size

    @property
    def bmask(self):
        return np.sqrt(np.sum(self.y**2, axis=0)) > 1.0 - 1e-9

    @property
    def bnodes(self):
        return np.flatnonzero(self.bmask)

    @property
    def inodes(self):
        return np.flatnonzero(~self.bmask)

    @property
    def nx(self):
        """Nodes across a diameter."""
        return 3 * self.p * self.K + 1

    # element-level primitives ------------------------------------------
    def gather(self, f):
        return lin(lambda c: c[..., self.conn], f)

    def scatter(self, fe):
        return lin(lambda c: scatter_add(self.conn, c, self.nnode), fe)

    def dloc(self, fe, axis):
        sub = _deriv_subscripts(self.dim, axis)
        return lin(lambda c: np.einsum(sub, self.D, c), fe)

    def dlocT(self, fe, axis):
        sub = _deriv_subscripts(self.dim, axis, transpose=True)
        return lin(lambda c: np.einsum(sub, self.D, c), fe)

    def dss(self, fe):
        """Average element values onto nodes with reference-volume weights.

        The weights are time independent, so DSS commutes with D_t.
        """
        return lin(lambda c: scatter_add(self.conn, self.w_ref * c, self.nnode) / self.dss_den, fe)

    # faces -----------------------------------------------------------------
    def _face_index(self, axis, side):
        idx = [slice(None)] * self.dim
        idx[axis] = 0 if side < 0 else self.n - 1
        return tuple(idx)

    def face_values(self, fe):
        """Values on boundary faces: shape ``(..., F, n[, n])``."""
        def fn(c):
            out = np.empty(c.shape[:-self.dim - 1] + (self.nface,) + (self.n,) * (self.dim - 1))
            for f in range(self.nface):
                idx = self._face_index(self.face_axis[f], self.face_side[f])
                out[(Ellipsis, f) + (slice(None),) * (self.dim - 1)] = c[(Ellipsis, self.face_elem[f]) + idx]
            return out
        return lin(fn, fe)

    @property
    def face_nodes(self):
        return np.asarray(self.face_values(self.conn[None].astype(float))[0].round(), dtype=int)

    @property
    def face_w(self):
        if self.dim == 2:
            return self.w.copy()
        return np.outer(self.w, self.w)

    def face_dtan(self, fv, t):
        """Derivative along tangential face axis ``t`` (0 or 1)."""
        sub = _deriv_subscripts(self.dim - 1, t)
        return lin(lambda c: np.einsum(sub, self.D, c), fv)

    def face_tangent_axes(self, f):
        return [a for a in range(self.dim) if a != self.face_axis[f]]

    def face_to_nodes(self, fv):
        """Average face values onto boundary nodes (surface weights)."""
        fn = self.face_nodes
        wts = np.broadcast_to(self.face_w, fn.shape)
        den = np.bincount(fn.ravel(), weights=wts.ravel(), minlength=self.nnode)
        def op(c):
            num = scatter_add(fn, wts * c, self.nnode)
            with np.errstate(invalid="ignore", divide="ignore"):
                return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        return lin(op, fv)


def build_ball_mesh(dim=2, K=4, p=4, a=0.5):
    """Build the multi-block spectral-element mesh of the unit ball."""
    if dim not in (2, 3):
        raise ValueError("dimension must be 2 or 3")
    if K < 1:
        raise ValueError("K must be positive")
    xi, w, D = gll(p)
    n = p + 1
    edges = np.linspace(-1.0, 1.0, K + 1)
    elem_xyz = []
    blocks = []
    for bid, (name, fmap) in enumerate(_block_maps(dim, a)):
        for eidx in np.ndindex(*(K,) * dim):
            grids = []
            for k, ei in enumerate(eidx):
                lo, hi = edges[ei], edges[ei + 1]
                grids.append(lo + 0.5 * (xi + 1.0) * (hi - lo))
            q = np.meshgrid(*grids, indexing="ij")
            xyz = fmap(q)
            elem_xyz.append(xyz)
            blocks.append(bid)
    elem_xyz = np.stack(elem_xyz)  # (E, d, n, ...)

    # fix orientation so every element has positive Jacobian
    for e in range(elem_xyz.shape[0]):
        if _center_jacobian(elem_xyz[e], D, dim) < 0:
            elem_xyz[e] = np.swapaxes(elem_xyz[e], 1, 2)

    E = elem_xyz.shape[0]
    pts = np.moveaxis(elem_xyz, 1, -1).reshape(-1, dim)
    tree = cKDTree(pts)
    pairs = tree.query_pairs(1e-9, output_type="ndarray")
    parent = np.arange(pts.shape[0])

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            lo, hi = min(ri, rj), max(ri, rj)
            parent[hi] = lo
    roots = np.array([find(i) for i in range(pts.shape[0])])
    uniq, first = np.unique(roots, return_index=True)
    order = np.argsort(first)
    new_id = np.empty(pts.shape[0], dtype=int)
    remap = {int(r): k for k, r in enumerate(uniq[order])}
    new_id = np.array([remap[int(r)] for r in roots])
    y = pts[np.sort(first)].T.copy()
    # snap boundary nodes exactly onto the sphere
    r = np.sqrt(np.sum(y**2, axis=0))
    onb = r > 1.0 - 1e-9
    y[:, onb] /= r[onb]
    conn = new_id.reshape((E,) + (n,) * dim)

    bmask = onb
    face_elem, face_axis, face_side = [], [], []
    for e in range(E):
        for ax in range(dim):
            for side in (-1, 1):
                idx = [slice(None)] * dim
                idx[ax] = 0 if side < 0 else n - 1
                if np.all(bmask[conn[e][tuple(idx)]]):
                    face_elem.append(e)
                    face_axis.append(ax)
                    face_side.append(side)

    mesh = Mesh(dim=dim, p=p, K=K, a=a, xi=xi, w=w, D=D, conn=conn, y=y,
                block=np.array(blocks), face_elem=np.array(face_elem, dtype=int),
                face_axis=np.array(face_axis, dtype=int), face_side=np.array(face_side, dtype=int))
    W = w
    for _ in range(dim - 1):
        W = np.multiply.outer(W, w)
    mesh.W = W
    from .geometry import element_metric
    em = element_metric(mesh, y)
    if np.any(em.J <= 0):
        raise RuntimeError("mesh construction produced an inverted element")
    mesh.w_ref = W * em.J
    mesh.dss_den = scatter_add(conn, mesh.w_ref, mesh.nnode)
    return mesh


def _center_jacobian(xyz, D, dim):
    n = D.shape[0]
    c = n // 2
    jac = np.empty((dim, dim))
    for k in range(dim):
        for a in range(dim):
            sub = _deriv_subscripts(dim, a)
            jac[k, a] = np.einsum(sub, D, xyz[k][None])[0][(c,) * dim]
    return np.linalg.det(jac)


def resolution_to_K(nx, p=4):
    """Elements per block side giving roughly ``nx`` nodes across a diameter."""
    return max(1, int(round((nx - 1) / (3.0 * p))))

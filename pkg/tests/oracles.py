"""Independent reference computations on analytic inputs.

Nothing here calls the package's derivative, geometry or energy code: fields
are given in closed form together with their derivatives, boundary geometry
of an ellipse is written out by hand, and integrals over the disk use a
tensor Gauss rule in polar coordinates.
"""

import numpy as np
from scipy.optimize import minimize_scalar

# affine flow map x = A y carrying the unit disk onto an ellipse
A_ELLIPSE = np.array([[1.3, 0.2], [0.1, 0.8]])


def ellipse_geometry(A, y):
    """Metric, Jacobian, outer normal and mean curvature of x = A y.

    Normal and curvature are only meaningful for |y| = 1.
    """
    g = A.T @ A
    J = np.linalg.det(A)
    Ninv = np.linalg.inv(A).T @ y
    N = Ninv / np.sqrt(np.sum(Ninv**2, axis=0))
    tang = A @ np.stack([-y[1], y[0]])
    sigma = J / np.sum(tang**2, axis=0) ** 1.5
    return g, J, N, sigma


def ellipse_distance(A, x, n_coarse=2000):
    """Distance from points x (d, n) to the ellipse boundary, brute force."""
    s = np.linspace(0.0, 2 * np.pi, n_coarse, endpoint=False)
    curve = A @ np.stack([np.cos(s), np.sin(s)])
    out = np.empty(x.shape[1])
    for m in range(x.shape[1]):
        d2 = np.sum((curve - x[:, m:m + 1]) ** 2, axis=0)
        k = int(np.argmin(d2))
        step = 2 * np.pi / n_coarse

        def f(th):
            c = A @ np.array([np.cos(th), np.sin(th)])
            return float(np.sum((c - x[:, m]) ** 2))

        res = minimize_scalar(f, bounds=(s[k] - step, s[k] + step), method="bounded",
                              options={"xatol": 1e-14})
        out[m] = np.sqrt(min(res.fun, d2[k]))
    return out


def polar_integral(func, n_r=64, n_th=128):
    """Integral of func(y) over the unit disk; func maps (2, n) -> (n,)."""
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * (xr + 1.0)
    wr = 0.5 * wr
    th = 2 * np.pi * np.arange(n_th) / n_th
    R, T = np.meshgrid(r, th, indexing="ij")
    W = (wr[:, None] * R) * (2 * np.pi / n_th)
    y = np.stack([R.ravel() * np.cos(T.ravel()), R.ravel() * np.sin(T.ravel())])
    return float(np.sum(W.ravel() * func(y)))


# analytic fields -----------------------------------------------------------------
# Polynomials in y and quadratic in t. p and B vanish on |y| = 1 so that the
# total pressure has no tangential gradient there.

def fields(y, t):
    y1, y2 = y
    bub = 1.0 - y1**2 - y2**2
    p = 0.2 * bub * (1.0 + 0.3 * y1 + 0.2 * t + 0.1 * t**2 * y2)
    u = np.stack([0.4 + 0.3 * y2 - 0.2 * t * y1 + 0.1 * t**2 * y1 * y2,
                  -0.3 * y1 + 0.25 * y1 * y2 + 0.15 * t + 0.05 * t**2 * y2**2])
    B = np.stack([bub * (0.3 + 0.1 * y2 + 0.2 * t * y1),
                  bub * (-0.2 * y1 + 0.1 * t**2)])
    return p, u, B


def field_dt(y, t, k):
    """k-th time derivative of (p, u, B)."""
    y1, y2 = y
    bub = 1.0 - y1**2 - y2**2
    z = 0.0 * y1
    if k == 1:
        p = 0.2 * bub * (0.2 + 0.2 * t * y2)
        u = np.stack([-0.2 * y1 + 0.2 * t * y1 * y2, z + 0.15 + 0.1 * t * y2**2])
        B = np.stack([bub * 0.2 * y1, bub * 0.2 * t])
    elif k == 2:
        p = 0.2 * bub * 0.2 * y2
        u = np.stack([0.2 * y1 * y2, 0.1 * y2**2])
        B = np.stack([z, bub * 0.2])
    else:
        raise ValueError(k)
    return p, u, B


def field_grad(y, t, k=0):
    """Spatial gradients (index order [i, comp]) of D_t^k (p, u, B)."""
    y1, y2 = y
    bub = 1.0 - y1**2 - y2**2
    bx, by = -2 * y1, -2 * y2
    z = 0.0 * y1
    if k == 0:
        c = 1.0 + 0.3 * y1 + 0.2 * t + 0.1 * t**2 * y2
        gp = 0.2 * np.stack([bx * c + bub * 0.3, by * c + bub * 0.1 * t**2])
        gu = np.array([[-0.2 * t + 0.1 * t**2 * y2, -0.3 + 0.25 * y2],
                       [0.3 + 0.1 * t**2 * y1, 0.25 * y1 + 0.1 * t**2 * y2]])
        c1 = 0.3 + 0.1 * y2 + 0.2 * t * y1
        c2 = -0.2 * y1 + 0.1 * t**2
        gB = np.array([[bx * c1 + bub * 0.2 * t, bx * c2 + bub * (-0.2)],
                       [by * c1 + bub * 0.1, by * c2 + z]])
    elif k == 1:
        c = 0.2 + 0.2 * t * y2
        gp = 0.2 * np.stack([bx * c, by * c + bub * 0.2 * t])
        gu = np.array([[-0.2 + 0.2 * t * y2, z],
                       [0.2 * t * y1, 0.2 * t * y2]])
        gB = np.array([[bx * 0.2 * y1 + bub * 0.2, bx * 0.2 * t],
                       [by * 0.2 * y1, by * 0.2 * t]])
    else:
        raise ValueError(k)
    return gp, np.broadcast_to(gu, (2, 2) + y1.shape), gB


# energies ------------------------------------------------------------------------

def physical_energy_oracle(A, kappa, t=0.3):
    """1/2 rho|u|^2 + 1/2 |B|^2 + rho Q(rho) over x = A y, fields taken at label y."""
    J = abs(np.linalg.det(A))

    def dens(y):
        p, u, B = fields(y, t)
        rho = 1.0 + p / kappa
        Qr = kappa * (np.log(rho) + 1.0 / rho - 1.0)
        return J * (0.5 * rho * np.sum(u**2, axis=0) + 0.5 * np.sum(B**2, axis=0) + rho * Qr)

    return polar_integral(dens)


def quintic_cutoff(s, d0):
    z = np.clip((s - d0 / 4) / (d0 / 4), 0.0, 1.0)
    return 1.0 - 10 * z**3 + 15 * z**4 - 6 * z**5


def e1_oracle(y, V, t, kappa, lam, d0=0.25):
    """Components of E_1 on the identity map of the unit disk at time t.

    ``V`` are the nodal quadrature weights; everything else is analytic.
    """
    r = np.sqrt(np.sum(y**2, axis=0))
    eta = quintic_cutoff(1.0 - r, d0)
    n = y / np.where(r > 0, r, 1.0)
    q = np.eye(2)[:, :, None] - eta**2 * n[:, None] * n[None, :]
    p, u, B = fields(y, t)
    rho = 1.0 + p / kappa
    r1 = 1.0 / kappa

    def Q1(a):  # a[i, m]
        return np.einsum("ijm,im,jm->m", q, a, a)

    def Q2(a):  # a[i, k, m]
        return np.einsum("ijm,klm,ikm,jlm->m", q, q, a, a)

    gp, gu, gB = field_grad(y, t)
    E10 = np.sum(V * (0.5 * rho * Q2(gu) + 0.5 * Q2(gB) + 0.5 * (r1 / rho) * Q1(gp)))
    p1, u1, B1 = field_dt(y, t, 1)
    E01 = np.sum(V * (0.5 * rho * r1 * np.sum(u1**2, axis=0) + 0.5 * np.sum(B1**2, axis=0)
                      + 0.5 * (r1 / rho) * p1**2))
    cu = gu - np.swapaxes(gu, 0, 1)
    cB = gB - np.swapaxes(gB, 0, 1)
    K1 = np.sum(V * (rho * np.sum(cu**2, axis=(0, 1)) + np.sum(cB**2, axis=(0, 1))))
    p2, _, B2 = field_dt(y, t, 2)
    gp1, _, gB1 = field_grad(y, t, 1)
    W2 = 0.5 * (np.sqrt(np.sum(V * (r1 * p2) ** 2)) + np.sqrt(np.sum(V * r1 * np.sum(gp1**2, axis=0))))
    # D_t^2 B does not depend on t, so the time integral is t times the rate
    H2 = t * np.sum(V * np.sum(B2**2, axis=0)) + 0.5 * lam * np.sum(V * np.sum(gB1**2, axis=(0, 1)))
    return {"E_1_0": E10, "E_0_1": E01, "K_1": K1, "W_2": W2, "H2_2": H2,
            "E_1": E10 + E01 + K1 + W2**2 + H2}

import numpy as np
import pytest

from mhdlab.errors import UnsupportedOrderError
from mhdlab.numerics import (EllipticProblem, curl, derivative_tensors, dirichlet_direct,
                             divergence, eulerian_derivative, gradient, integrate, laplacian,
                             multi_indices, poisson_solve)


def test_gradient_of_polynomial(cache2):
    y = cache2.mesh.y
    f = y[0] ** 2 * y[1] + 3 * y[1]
    g = gradient(cache2, f)
    assert np.max(np.abs(g[0] - 2 * y[0] * y[1])) < 1e-3
    assert np.max(np.abs(g[1] - (y[0] ** 2 + 3))) < 1e-3


def test_gradient_converges_spectrally():
    from mhdlab.geometry import FlowMapState, compute_geometry
    from mhdlab.mesh import build_ball_mesh
    errs = []
    for p in (4, 6, 8):
        m = build_ball_mesh(2, 2, p)
        c = compute_geometry(FlowMapState(m, m.y.copy()), distance=False)
        g = gradient(c, np.sin(m.y[0]) * m.y[1])
        errs.append(np.max(np.abs(g[0] - np.cos(m.y[0]) * m.y[1])))
    assert errs[0] > 10 * errs[1] > 100 * errs[2]


def test_laplacian_strong(cache2):
    y = cache2.mesh.y
    f = y[0] ** 2 + 2 * y[1] ** 2
    assert np.max(np.abs(laplacian(cache2, f) - 6.0)) < 1e-2


def test_div_and_curl_of_rotation(cache2):
    y = cache2.mesh.y
    v = np.stack([-y[1], y[0]])
    assert np.max(np.abs(divergence(cache2, v))) < 1e-10
    c = curl(cache2, v)
    assert np.max(np.abs(np.asarray(c) - 2.0)) < 1e-8 or np.max(np.abs(np.asarray(c) + 2.0)) < 1e-8


def test_eulerian_derivative_forms(cache2):
    y = cache2.mesh.y
    f = y[0] ** 3
    full = eulerian_derivative(cache2, f, 2)
    mixed = eulerian_derivative(cache2, f, (2, 0))
    assert np.max(np.abs(full[0, 0] - 6 * y[0])) < 1e-2
    assert np.max(np.abs(mixed - 6 * y[0])) < 1e-2
    with pytest.raises(UnsupportedOrderError):
        eulerian_derivative(cache2, f, 5)
    with pytest.raises(ValueError):
        eulerian_derivative(cache2, f, (1,))


def test_integrals(cache2):
    assert abs(integrate(cache2, np.ones(cache2.mesh.nnode)) - np.pi) < 1e-6
    assert abs(integrate(cache2, np.ones(cache2.mesh.nnode), "boundary") - 2 * np.pi) < 1e-6
    with pytest.raises(ValueError):
        integrate(cache2, np.ones(3), "nowhere")


def test_dirichlet_poisson(cache2):
    y = cache2.mesh.y
    exact = 1.0 - np.sum(y**2, axis=0)
    rhs = -4.0 * np.ones(cache2.mesh.nnode)
    u = poisson_solve(EllipticProblem(rhs, cache2, "dirichlet"))
    assert np.max(np.abs(u - exact)) < 1e-6
    assert np.max(np.abs(dirichlet_direct(cache2, rhs) - u)) < 1e-8


def test_neumann_poisson(cache2):
    y = cache2.mesh.y
    exact = y[0] ** 2 - y[1] ** 2
    n = y / np.sqrt(np.sum(y**2, axis=0)).clip(1e-300)
    flux = 2 * y[0] * n[0] - 2 * y[1] * n[1]
    u = poisson_solve(EllipticProblem(np.zeros(cache2.mesh.nnode), cache2, "neumann", flux))
    exact = exact - np.sum(cache2.V * exact) / np.sum(cache2.V)
    assert np.max(np.abs(u - exact)) < 1e-5


def test_derivative_tensors_and_indices(cache2):
    f = cache2.mesh.y[0]
    ts = derivative_tensors(cache2, f, 2)
    assert len(ts) == 3 and ts[2].shape == (2, 2, cache2.mesh.nnode)
    assert sorted(multi_indices(2, 2)) == [(0, 2), (1, 1), (2, 0)]

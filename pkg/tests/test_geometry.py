import numpy as np
import pytest

from mhdlab.errors import OrientationError
from mhdlab.geometry import (FlowMapState, cofactor, compute_geometry, injectivity_bound,
                             normal_spread_length, project, smoothstep_cutoff)

import oracles


def test_identity_map_is_flat(cache2):
    d = cache2.dim
    assert np.allclose(cache2.g, np.eye(d)[:, :, None], atol=1e-12)
    assert np.allclose(cache2.J, 1.0, atol=1e-12)
    assert abs(cache2.V.sum() - np.pi) < 1e-6


def test_disk_boundary_normal_and_curvature(cache2):
    b = cache2.bnodes
    y = cache2.mesh.y[:, b]
    assert np.max(np.abs(cache2.N[:, b] - y)) < 1e-6
    assert np.max(np.abs(cache2.sigma[b] - 1.0)) < 1e-4


def test_affine_ellipse_metric(mesh2):
    A = oracles.A_ELLIPSE
    c = compute_geometry(FlowMapState(mesh2, A @ mesh2.y), distance=False)
    g, J, _, _ = oracles.ellipse_geometry(A, mesh2.y[:, mesh2.bnodes])
    assert np.max(np.abs(c.g - g[:, :, None])) < 1e-11
    assert np.max(np.abs(c.J - J)) < 1e-11
    assert c.dist is None and c.q is None


def test_q_tensor_interpolates(cache2):
    b = cache2.bnodes
    # at the boundary q is the tangential projection
    assert np.allclose(cache2.q[:, :, b], cache2.gamma[:, :, b], atol=1e-10)
    deep = cache2.dist > cache2.d0 / 2
    assert np.allclose(cache2.q[:, :, deep], np.eye(2)[:, :, None])


def test_distance_matches_radius(cache2):
    r = np.sqrt(np.sum(cache2.mesh.y**2, axis=0))
    assert np.max(np.abs(cache2.dist - (1 - r))) < 1e-8


def test_inverted_map_raises(mesh2):
    x = mesh2.y.copy()
    x[0] *= -1.0
    with pytest.raises(OrientationError):
        compute_geometry(FlowMapState(mesh2, x))


def test_cutoff_profile():
    d0 = 0.4
    s = np.array([0.0, 0.1, 0.15, 0.2, 0.5])
    eta = smoothstep_cutoff(s, d0)
    assert eta[0] == 1.0 and eta[1] == 1.0 and eta[3] == 0.0 and eta[4] == 0.0
    assert abs(eta[2] - 0.5) < 1e-12


def test_injectivity_bound():
    assert injectivity_bound(1.0, np.inf) == 1.0
    assert injectivity_bound(0.5, 1.0) == 0.5
    with pytest.raises(ValueError):
        injectivity_bound(-1.0, 1.0)


def test_normal_spread_circle():
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    pts = np.stack([np.cos(th), np.sin(th)])
    assert normal_spread_length(pts, pts) == np.inf
    assert normal_spread_length(pts, pts, eta=1.0) > 0


def test_cofactor_2d():
    M = [[2.0, 1.0], [0.5, 3.0]]
    C = np.array(cofactor(M, 2))
    A = np.array(M)
    assert np.allclose(C.T @ A, np.linalg.det(A) * np.eye(2)) or np.allclose(A @ C.T, np.linalg.det(A) * np.eye(2))


def test_project_kills_normal(cache2):
    b = cache2.bnodes
    P = project(cache2, cache2.N)
    assert np.max(np.abs(P[:, b])) < 1e-12


def test_three_dimensional_ball(mesh3):
    c = compute_geometry(FlowMapState(mesh3, mesh3.y.copy()), distance=False)
    assert abs(c.V.sum() - 4 * np.pi / 3) < 1e-2
    b = c.bnodes
    assert np.max(np.abs(c.N[:, b] - mesh3.y[:, b])) < 1e-2

import numpy as np
import pytest

from mhdlab.errors import PreconditionError, UnsupportedOrderError
from mhdlab.mesh import build_ball_mesh
from mhdlab.verification import (IdentityCase, InequalityCase, commutator_residual,
                                 exact_region, inequality_ratio, make_case, ratio_sweep,
                                 stencil_size)


@pytest.fixture(scope="module")
def exact_mesh():
    return build_ball_mesh(2, 6, 4)


@pytest.mark.parametrize("ident,order", [("dt_gradr", 1), ("grad_dtk", 2), ("dtk_bdot", 1),
                                         ("dtk_laplace", 1)])
def test_polynomial_cases_are_exact(exact_mesh, ident, order):
    r = commutator_residual(make_case(ident, order, exact_mesh, "polynomial"))
    assert r["max_residual"] <= 1e-10


def test_smooth_case_converges(mesh2):
    mesh = build_ball_mesh(2, 2, 8)
    cases = [make_case("grad_dtk", 1, mesh, "smooth", dt=0.4 / 2**j) for j in range(3)]
    r = commutator_residual(cases[0], cases[1:])
    assert r["slope"] >= 3


def test_case_validation(mesh2):
    x = np.zeros((5, 2, mesh2.nnode))
    with pytest.raises(UnsupportedOrderError):
        IdentityCase("dt_gradr", 4, mesh2, x, x[:, 0], 0.1)
    with pytest.raises(ValueError):
        IdentityCase("nonsense", 1, mesh2, x, x[:, 0], 0.1)
    with pytest.raises(ValueError):
        IdentityCase("dtk_bdot", 1, mesh2, x, x[:, 0], 0.1)
    with pytest.raises(ValueError):
        IdentityCase("grad_dtk", 1, mesh2, x[:4], x[:4, 0], 0.1)
    assert stencil_size(3) == 9


def test_exact_region_shrinks(exact_mesh):
    a, b = exact_region(exact_mesh, 1), exact_region(exact_mesh, 2)
    assert np.count_nonzero(b) < np.count_nonzero(a) > 0


@pytest.mark.parametrize("ineq", ["hodge", "elliptic_I", "elliptic_II", "tensor"])
def test_inequality_ratios_are_bounded(cache2, ineq):
    s = ratio_sweep(ineq, cache2, n=4, seed=3)
    assert 0 < s["max_ratio"] < 10


def test_theta_needs_positive_margin(cache2):
    y = cache2.mesh.y
    r2 = np.sum(y**2, axis=0)
    ok = inequality_ratio(InequalityCase("theta", cache2, 0.5 * (1 - r2)))
    assert np.isfinite(ok["ratio"]) and ok["ratio"] > 0
    with pytest.raises(PreconditionError):
        inequality_ratio(InequalityCase("theta", cache2, 0.5 * (r2 - 1)))


def test_vacuous_case(cache2):
    zero = np.zeros((2, cache2.mesh.nnode))
    out = inequality_ratio(InequalityCase("hodge", cache2, zero))
    assert out["vacuous"] and out["ratio"] == 0.0

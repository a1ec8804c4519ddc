import numpy as np
import pytest

from oslab.errors import IncompatibleGridError, InvalidResolutionError
from oslab.grid import (build_grid, differentiate, helmholtz_inverse,
                        interpolate, quad_integrate)


@pytest.fixture(scope="module")
def g64():
    return build_grid(64)


def test_minimum_resolution_rejected():
    with pytest.raises(InvalidResolutionError):
        build_grid(7)


def test_endpoints_and_midpoint():
    g = build_grid(8)
    assert g.nodes[0] == 1.0
    assert g.nodes[7] == -1.0
    g = build_grid(33)
    assert g.nodes[16] == 0.0
    assert np.all(np.diff(g.nodes) < 0)


@pytest.mark.parametrize("n", [8, 33, 64, 129])
def test_d1_invariants(n):
    g = build_grid(n)
    ones = np.ones(n)
    assert np.max(np.abs(g.d1 @ ones)) <= 1e-12 * n**2
    assert np.max(np.abs(g.d1 @ g.nodes - ones)) <= 1e-12 * n**2
    assert np.max(np.abs(g.d2 - g.d1 @ g.d1)) <= 1e-10 * n**3


def test_d1_on_quadratic(g64):
    err = np.max(np.abs(g64.d1 @ g64.nodes**2 - 2 * g64.nodes))
    assert err <= 1e-10


@pytest.mark.parametrize("n", [8, 33, 64, 129])
def test_weights_sum_and_exactness(n):
    g = build_grid(n)
    assert abs(g.weights.sum() - 2.0) <= 1e-13
    rng = np.random.default_rng(3)
    coeffs = rng.standard_normal(n)  # random polynomial of degree n-1
    vals = np.polynomial.polynomial.polyval(g.nodes, coeffs)
    exact = sum(c * (2.0 / (j + 1)) for j, c in enumerate(coeffs) if j % 2 == 0)
    assert abs(g.weights @ vals - exact) <= 1e-12 * max(1.0, np.abs(coeffs).sum())


def test_differentiate_basics(g64):
    one = g64.from_callable(lambda y: np.ones_like(y))
    assert np.max(np.abs(differentiate(one, 1).values)) <= 1e-12 * 64**2

    s = g64.from_callable(lambda y: np.sin(np.pi * y))
    d2 = differentiate(s, 2).values
    rel = np.linalg.norm(d2 + np.pi**2 * s.values) / np.linalg.norm(np.pi**2 * s.values)
    assert rel <= 1e-8


def test_differentiate_exponential():
    g = build_grid(32)
    e = g.from_callable(np.exp)
    rel = np.linalg.norm(differentiate(e, 1).values - e.values) / np.linalg.norm(e.values)
    assert rel <= 1e-10


def test_differentiate_rejects_bad_order(g64):
    with pytest.raises(ValueError):
        differentiate(g64.from_callable(np.exp), 3)


def test_grid_mismatch_rejected(g64):
    other = build_grid(32)
    with pytest.raises(IncompatibleGridError):
        g64.function(np.zeros(other.n))


def test_quadrature_values(g64):
    assert abs(quad_integrate(g64.from_callable(lambda y: np.ones_like(y))) - 2.0) <= 1e-13
    assert abs(quad_integrate(g64.from_callable(lambda y: y))) <= 1e-13
    assert abs(quad_integrate(g64.from_callable(lambda y: 1 - y**2)) - 4.0 / 3.0) <= 1e-12


def test_spectral_convergence_ratio():
    # e^{5y} still has visible truncation error at n=16 while n=32 reaches
    # the roundoff floor, so the error ratio certifies super-algebraic decay
    errs = {}
    for n in (16, 24, 32):
        g = build_grid(n)
        f = g.from_callable(lambda y: np.exp(5 * y))
        d = differentiate(f, 1).values
        exact = 5 * np.exp(5 * g.nodes)
        errs[n] = np.sqrt(g.weights @ np.abs(d - exact) ** 2)
    assert errs[32] / errs[16] < 1e-4
    assert errs[24] < errs[16]


def test_helmholtz_zero(g64):
    z = g64.function(np.zeros(64))
    phi = helmholtz_inverse(z, (1, 0))
    assert np.max(np.abs(phi.values)) == 0.0


def test_helmholtz_eigenfunction(g64):
    w = g64.from_callable(lambda y: -(np.pi**2 + 1) * np.sin(np.pi * y))
    phi = helmholtz_inverse(w, (1, 0))
    exact = np.sin(np.pi * g64.nodes)
    assert np.linalg.norm(phi.values - exact) / np.linalg.norm(exact) <= 1e-8


def test_helmholtz_refinement_oracle():
    # constant forcing at |k| = 2: the dense solve on a twice-finer grid is
    # the oracle for phi(0) (interpolated; even grids have no midpoint node)
    ref_grid = build_grid(128)
    ref = helmholtz_inverse(ref_grid.function(np.ones(128)), (2, 0))
    g = build_grid(64)
    phi = helmholtz_inverse(g.function(np.ones(64)), (2, 0))
    assert abs(interpolate(phi, 0.0) - interpolate(ref, 0.0)) <= 1e-8
    exact_mid = 0.25 * (1.0 / np.cosh(2.0) - 1.0)
    assert abs(interpolate(phi, 0.0) - exact_mid) <= 1e-10


def test_helmholtz_residual(g64):
    # the algebraic residual is measured in extended precision: the near-wall
    # rows of d2 are ~n^4 and drown a double-precision residual evaluation
    rng = np.random.default_rng(11)
    w = g64.function(np.polynomial.chebyshev.chebval(g64.nodes, rng.standard_normal(12)))
    phi = helmholtz_inverse(w, (1, 3))
    pl = phi.values.astype(np.clongdouble)
    res = (g64.d2.astype(np.longdouble) @ pl - 10.0 * pl - w.values.astype(np.clongdouble))[1:-1]
    assert np.linalg.norm(np.asarray(res, complex)) <= 1e-10 * np.linalg.norm(w.values)


def test_helmholtz_requires_k_at_least_one(g64):
    with pytest.raises(ValueError):
        helmholtz_inverse(g64.from_callable(np.exp), (0.5, 0))

import numpy as np
import pytest

from oslab.grid import build_grid, differentiate
from oslab.norms import NormKind, norm


@pytest.fixture(scope="module")
def g():
    return build_grid(129)


def _random_h10_samples(grid, count, seed=0, degree=10):
    """Random degree-<=10 polynomials times (1 - y^2): smooth, vanish at walls."""
    rng = np.random.default_rng(seed)
    y = grid.nodes
    out = []
    for _ in range(count):
        p = np.polynomial.polynomial.polyval(y, rng.standard_normal(degree + 1))
        out.append((1.0 - y**2) * p)
    return out


def test_norm_constants(g):
    one = g.from_callable(lambda y: np.ones_like(y))
    assert abs(norm(one, NormKind("L2")) - np.sqrt(2.0)) <= 1e-12
    assert abs(norm(one, NormKind("L1")) - 2.0) <= 1e-12
    assert norm(one, NormKind("Linf")) == 1.0


def test_h1k_and_dual_on_eigenfunction(g):
    s = g.from_callable(lambda y: np.sin(np.pi * y))
    k = NormKind("H1k", (1, 0))
    kd = NormKind("Hm1k", (1, 0))
    assert abs(norm(s, k) - np.sqrt(np.pi**2 + 1)) <= 1e-8
    assert abs(norm(s, kd) - 1.0 / np.sqrt(np.pi**2 + 1)) <= 1e-8


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        NormKind("H2")
    with pytest.raises(ValueError):
        NormKind("H1k")  # missing k


def test_hardy_inequalities(g):
    y = g.nodes
    q = g.weights
    for i, f in enumerate(_random_h10_samples(g, 200, seed=42)):
        p = f / (1.0 - y**2 + (np.abs(y) == 1.0))  # endpoint 0/0 -> polynomial part
        p[0] = p[-1] = 0.0  # times (1-y^2): f/(1-y^2) equals the polynomial factor
        fp = g.d1 @ f
        lhs1 = q @ np.abs(p) ** 2
        lhs2 = q @ ((1.0 - y**2) * np.abs(p) ** 2)
        rhs = q @ np.abs(fp) ** 2
        assert lhs1 <= 4.0 * rhs + 1e-8, f"sample {i}"
        assert lhs2 <= 0.5 * rhs + 1e-8, f"sample {i}"


def test_hardy_endpoint_division_exact(g):
    # f = (1-y^2) * poly: f/(1-y^2) must be evaluated as the polynomial part
    y = g.nodes
    p = 1.0 + y + y**2
    f = (1.0 - y**2) * p
    ratio = np.empty_like(f)
    ratio[1:-1] = f[1:-1] / (1.0 - y[1:-1] ** 2)
    ratio[0] = p[0]
    ratio[-1] = p[-1]
    assert np.allclose(ratio, p, atol=1e-12)


def test_interpolation_inequality(g):
    y = g.nodes
    q = g.weights
    for f in _random_h10_samples(g, 200, seed=2024):
        p = np.zeros_like(f)
        p[1:-1] = f[1:-1] / (1.0 - y[1:-1] ** 2)
        fl2 = q @ np.abs(f) ** 2
        weighted = np.sqrt(q @ ((1.0 - y**2) * np.abs(f) ** 2))
        inv = np.sqrt(q @ np.abs(p) ** 2)
        assert fl2 <= weighted ** (4.0 / 3.0) * inv ** (2.0 / 3.0) + 1e-8


@pytest.mark.parametrize("k", [(1, 0), (1, 3), (4, 2)])
def test_dual_norm_cauchy_schwarz(g, k):
    q = g.weights
    for f in _random_h10_samples(g, 25, seed=7):
        gf = g.function(f)
        pairing = q @ np.abs(f) ** 2
        assert norm(gf, NormKind("Hm1k", k)) * norm(gf, NormKind("H1k", k)) >= pairing - 1e-8

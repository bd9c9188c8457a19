import math

import numpy as np
import pytest

from gl2harmonic.numerics import (
    Grid1D,
    QuadSpec,
    SampledFunction,
    barycentric_interp,
    central_diff,
    fd_derivative,
    gauss_legendre,
    integrate,
    periodic_grid,
    tensor_rule,
    uniform_grid,
    weighted_gauss,
)


def _bisect_root(f, lo, hi):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(lo) * f(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def test_two_point_rule_matches_bisected_roots():
    p2 = lambda x: 1.5 * x * x - 0.5  # noqa: E731
    root = _bisect_root(p2, 0.0, 1.0)
    g = gauss_legendre(2, -1.0, 1.0)
    np.testing.assert_allclose(g.nodes, [-root, root], atol=1e-15)
    np.testing.assert_allclose(g.nodes, [-1 / math.sqrt(3), 1 / math.sqrt(3)], atol=1e-15)
    np.testing.assert_allclose(g.weights, [1.0, 1.0], atol=1e-15)


@pytest.mark.parametrize("n", [3, 7, 20, 64, 150])
def test_rule_against_numpy_and_weight_sum(n):
    g = gauss_legendre(n, -0.5, 2.0)
    x, w = np.polynomial.legendre.leggauss(n)
    np.testing.assert_allclose(g.nodes, 0.75 + 1.25 * x, atol=1e-14)
    np.testing.assert_allclose(g.weights, 1.25 * w, atol=1e-14)
    assert abs(g.weights.sum() - 2.5) < 1e-13


def test_polynomial_exactness():
    g = gauss_legendre(8, 0.0, 1.0)
    assert abs(np.sum(g.weights * g.nodes**7) - 1 / 8) < 1e-15
    assert abs(np.sum(g.weights * g.nodes**15) - 1 / 16) < 1e-15


def test_grid_validation():
    with pytest.raises(ValueError):
        gauss_legendre(1, 0, 1)
    with pytest.raises(ValueError):
        gauss_legendre(4, 1, 0)
    with pytest.raises(ValueError):
        Grid1D(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        Grid1D(np.array([0.0, 1.0]), np.array([1.0, -1.0]))


def test_integrate_examples():
    f = SampledFunction([gauss_legendre(4, 0, 2), gauss_legendre(5, 0, 3)], np.ones((4, 5)))
    assert abs(integrate(f) - 6) < 1e-14
    g = gauss_legendre(31, -2, 2)
    odd = SampledFunction([g], g.nodes**3 + np.sin(g.nodes))
    assert abs(integrate(odd)) < 1e-15
    g = gauss_legendre(64, -8, 8)
    assert abs(integrate(SampledFunction([g], np.exp(-g.nodes**2))) - math.sqrt(math.pi)) < 1e-12


def test_tensor_rule_weights():
    grids = [gauss_legendre(3, 0, 1), gauss_legendre(4, 0, 2), gauss_legendre(2, -1, 1)]
    nodes, w = tensor_rule(grids)
    assert len(nodes) == 3 and w.size == 24
    assert abs(w.sum() - 4.0) < 1e-14


def test_uniform_and_periodic_grids():
    g = uniform_grid(11, 0, 1)
    assert abs(g.weights.sum() - 1) < 1e-15 and g.step == pytest.approx(0.1)
    p = uniform_grid(8, 0, 2 * math.pi, endpoint=False)
    assert abs(np.sum(p.weights * np.cos(p.nodes) ** 2) - math.pi) < 1e-14
    q = periodic_grid(16, 2 * math.pi, 0.1)
    assert q.nodes[0] == pytest.approx(0.1)
    with pytest.raises(ValueError):
        gauss_legendre(5, 0, 1).step


def test_central_diff_examples():
    g = uniform_grid(41, -1, 1)
    r = central_diff(SampledFunction([g], g.nodes**2), step_refinements=2)
    np.testing.assert_allclose(r.derivative.values.real, 2 * g.nodes, atol=1e-12)
    r = central_diff(SampledFunction([g], np.full(41, 3.0)))
    assert np.max(np.abs(r.derivative.values)) < 1e-13
    errs = []
    for n in (41, 81, 161):
        g = uniform_grid(n, 0, 2)
        d = central_diff(SampledFunction([g], np.sin(g.nodes))).derivative.values.real
        errs.append(np.max(np.abs(d[2:-2] - np.cos(g.nodes[2:-2]))))
    assert 13 < errs[0] / errs[1] < 19 and 13 < errs[1] / errs[2] < 19


def test_central_diff_error_estimate_ratio():
    g = uniform_grid(257, 0, 2)
    r = central_diff(SampledFunction([g], np.sin(3 * g.nodes)), step_refinements=3)
    assert r.ratios and all(10 < x < 20 for x in r.ratios)


def test_central_diff_requires_uniform():
    g = gauss_legendre(10, 0, 1)
    with pytest.raises(ValueError):
        central_diff(SampledFunction([g], g.nodes))


def test_fd_derivative():
    x = np.linspace(0.5, 2, 7)
    np.testing.assert_allclose(fd_derivative(np.exp, x), np.exp(x), rtol=1e-11)
    np.testing.assert_allclose(fd_derivative(np.exp, x, order=2), np.exp(x), rtol=1e-6)


def test_weighted_gauss_exact_against_weight():
    weight = lambda x: np.exp(-1 / (1 - x * x))  # noqa: E731
    rule = weighted_gauss(weight, -1, 1, 8)
    fine = gauss_legendre(400, -1, 1)
    for k in range(16):
        ref = np.sum(fine.weights * weight(fine.nodes) * fine.nodes**k)
        assert abs(np.sum(rule.weights * rule.nodes**k) - ref) < 1e-14
    assert np.all(rule.weights > 0) and np.all(np.diff(rule.nodes) > 0)


def test_barycentric_interp():
    g = gauss_legendre(20, -1, 1)
    x = np.linspace(-0.95, 0.95, 13)
    np.testing.assert_allclose(barycentric_interp(g.nodes, np.exp(g.nodes), x), np.exp(x), rtol=1e-13)
    assert barycentric_interp(g.nodes, np.exp(g.nodes), np.array([2.0]))[0] == 0


def test_quadspec():
    q = QuadSpec((4, 6), ((0, 1), (2, 3)), refine=2.0)
    assert q.refined().counts == (8, 12)
    assert q.enlarged(0.5).box[0] == (-0.25, 1.25)
    with pytest.raises(ValueError):
        QuadSpec((3,), ((0, 1),))

import numpy as np
import pytest
import sympy as sp

from gl2harmonic.gl2 import (
    ENTRIES,
    GroupElement,
    apply_generator,
    bump_function,
    box_rule,
    convolve_at,
    group_integral,
    haar_weight,
    invariant_function,
    mobius_act,
    product_box,
    standard_family,
)


def test_haar_weight_examples():
    assert haar_weight(1, 0, 0, 1) == 1
    assert haar_weight(2, 0, 0, 1) == 0.25
    assert haar_weight(1, 1, -1, 1) == 0.25
    with pytest.raises(ValueError):
        haar_weight(1, 1, 1, 1)


def test_group_element_algebra():
    g = GroupElement(1.2, 0.3, -0.4, 0.9)
    np.testing.assert_allclose((g @ g.inverse()).matrix(), np.eye(2), atol=1e-15)
    assert GroupElement.identity().det == 1
    with pytest.raises(ValueError):
        GroupElement(1, 2, 2, 4)


def test_mobius_act():
    t = np.linspace(-3, 3, 7)
    np.testing.assert_array_equal(mobius_act(GroupElement.identity(), t), t)
    np.testing.assert_allclose(mobius_act(GroupElement(1, 1, 0, 1), t), t + 1)
    g, h = GroupElement(1.2, 0.3, -0.4, 0.9), GroupElement(0.7, -0.2, 0.1, 1.5)
    # right action: t.(gh) = (t.g).h
    np.testing.assert_allclose(mobius_act(g @ h, 0.37), mobius_act(h, mobius_act(g, 0.37)), rtol=1e-14)
    with pytest.raises(ZeroDivisionError):
        mobius_act(GroupElement(1, 0, 1, 2), -1.0)


def _sample_points(F, n=30, seed=0):
    rng = np.random.default_rng(seed)
    lo = np.array([iv[0] for iv in F.box])
    hi = np.array([iv[1] for iv in F.box])
    pts = lo + (hi - lo) * (0.1 + 0.8 * rng.random((n, 4)))
    return pts.T


def test_exact_partials_match_finite_differences():
    F = standard_family()[1]
    a, b, c, d = _sample_points(F)
    h = 1e-5
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        fd = (F.value(a + e[0], b + e[1], c + e[2], d + e[3]) - F.value(a - e[0], b - e[1], c - e[2], d - e[3])) / (2 * h)
        np.testing.assert_allclose(F.partial(k, a, b, c, d), fd, atol=1e-7 * np.abs(F.value(a, b, c, d)).max() + 1e-9)


def test_support_mask():
    F = bump_function()
    assert F.value(0.5, 0, 0, 1.5) == 0
    assert F.value(1.5, 0, 0, 1.5) != 0
    with pytest.raises(ValueError):
        bump_function(box=((0.0, 1.0), (-1, 1), (-1, 1), (0.0, 1.0)))


def test_e12_on_function_independent_of_a_b():
    F = bump_function()
    G = F.derived(sp.exp(-ENTRIES[2] ** 2) * ENTRIES[3], "cd-only")
    assert apply_generator("e12", G).expr == 0
    assert apply_generator("e12", G, variant="printed").expr == 0


def test_e14_at_c_zero_is_d_db():
    F = standard_family()[1]
    E = apply_generator("e14", F)
    a, b, _, d = _sample_points(F)
    c = np.zeros_like(a)
    np.testing.assert_allclose(E.value(a, b, c, d), F.partial(1, a, b, c, d), rtol=1e-13, atol=1e-16)


def test_e32_matches_four_dimensional_finite_difference():
    F = standard_family()[2]
    E = apply_generator("e32", F)
    a, b, c, d = _sample_points(F, 12, seed=3)
    h = 1e-4

    def fd(k):
        e = np.zeros(4)
        e[k] = h
        f = lambda s: F.value(a + s * e[0], b + s * e[1], c + s * e[2], d + s * e[3])  # noqa: E731
        return (-f(2) + 8 * f(1) - 8 * f(-1) + f(-2)) / (12 * h)

    fa, fb, fc, fd_ = (fd(k) for k in range(4))
    ref = -(a * c * fa + a * d * fb + c * c * fc + c * d * fd_) - c * F.value(a, b, c, d)
    np.testing.assert_allclose(E.value(a, b, c, d), ref, atol=1e-9)


def test_multiplication_operators():
    F = bump_function()
    a, b, c, d = _sample_points(F)
    base = F.value(a, b, c, d)
    np.testing.assert_allclose(apply_generator("mult_det_inv", F).value(a, b, c, d), base / (a * d - b * c))
    np.testing.assert_allclose(apply_generator("mult_c", F).value(a, b, c, d), c * base)
    with pytest.raises(ValueError):
        apply_generator("e99", F)


def _translated_integral(F, g0, left: bool, n: int):
    inv = g0.inverse()
    point = tuple((x, x) for x in (inv.a, inv.b, inv.c, inv.d))
    # F(g0 g) is supported in g0^{-1} box, F(g g0) in box g0^{-1}
    rule = box_rule(product_box(point, F.box) if left else product_box(F.box, point), n)
    m = g0.matrix()
    total = 0.0
    for ch in rule.chunks(400_000):
        pts = np.stack([ch.a, ch.b, ch.c, ch.d]).T.reshape(-1, 2, 2)
        mv = m @ pts if left else pts @ m
        total += np.dot(F.value(mv[:, 0, 0], mv[:, 0, 1], mv[:, 1, 0], mv[:, 1, 1]), ch.weights)
    return total


def test_haar_left_and_right_invariance():
    F = standard_family()[1]
    g0 = GroupElement(1.1, 0.2, -0.15, 0.95)
    ref = group_integral(F, box_rule(F.box, 40))
    for left in (True, False):
        assert abs(_translated_integral(F, g0, left, 44) - ref) / abs(ref) < 1e-6


def test_approximate_identity_convolution():
    eps = 0.02
    box = ((1 - eps, 1 + eps), (-eps, eps), (-eps, eps), (1 - eps, 1 + eps))
    delta = bump_function(box, name="delta")
    mass = group_integral(delta, box_rule(box, 12)).real
    delta = delta.scaled(1 / mass)
    F = standard_family()[1]
    a, b, c, d = _sample_points(F, 20, seed=5)
    target = F.value(a, b, c, d)
    conv = convolve_at(delta, F, a, b, c, d, counts=10)
    big = np.abs(target) > 0.2 * np.abs(target).max()
    assert np.max(np.abs(conv[big] - target[big]) / np.abs(target[big])) < 0.02


def test_convolution_mass_and_zero():
    F1 = bump_function(((1.0, 1.3), (-0.1, 0.1), (-0.1, 0.1), (1.0, 1.3)), name="n")
    F2 = bump_function(((1.0, 1.4), (-0.15, 0.15), (-0.15, 0.15), (1.0, 1.4)), {(0, 0, 0, 0): 1.0, (0, 1, 0, 0): 2.0}, "w")
    box = product_box(F1.box, F2.box)
    rule = box_rule(box, 14)
    conv = convolve_at(F1, F2, rule.a, rule.b, rule.c, rule.d, counts=10)
    total = np.dot(conv, rule.weights)
    ref = group_integral(F1, box_rule(F1.box, 16)) * group_integral(F2, box_rule(F2.box, 16))
    assert abs(total - ref) / abs(ref) < 1e-2
    Z = F2.derived(sp.Integer(0), "zero")
    assert np.all(convolve_at(F1, Z, rule.a[:50], rule.b[:50], rule.c[:50], rule.d[:50]) == 0)


def test_invariant_function_is_bi_rotation_invariant():
    F = invariant_function()
    g = GroupElement(1.1, 0.3, -0.2, 0.9)
    k1, k2 = GroupElement.rotation(0.7), GroupElement.rotation(-1.9)
    h = k1 @ g @ k2
    assert abs(F(g) - F(h)) < 1e-13 * abs(F(g))
    assert abs(F(g)) > 0

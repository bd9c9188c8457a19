import math

import numpy as np
import pytest

from gl2harmonic.fourier import (
    DiscreteSeriesPoint,
    DiskRule,
    KernelCache,
    KernelMatrix,
    PrincipalSeriesPoint,
    direct_operator_apply,
    ds_matrix,
    ds_trace,
    dump_kernel,
    group_l2_inner,
    holomorphy_residual,
    hs_inner,
    kernel_apply_exact,
    kernel_oracle,
    kernel_transform,
    load_kernel,
    principal_action,
    s_support,
    s_support_all,
)
from gl2harmonic.gl2 import GroupElement, box_rule, bump_function, invariant_function, standard_family
from gl2harmonic.numerics import Grid1D, QuadSpec, SampledFunction, gauss_legendre
from gl2harmonic.specfun import signed_power

P = PrincipalSeriesPoint(0.3j, 0, -0.2j, 1)


@pytest.fixture(scope="module")
def poly1():
    return standard_family()[1]


@pytest.fixture(scope="module")
def small_kernel(poly1):
    tg = gauss_legendre(10, -1, 1)
    sg = gauss_legendre(12, *s_support_all(poly1.box))
    return kernel_transform(poly1, P, tg, sg, QuadSpec((14,) * 4, poly1.box))


def _phi():
    g = gauss_legendre(160, -9, 9)
    return SampledFunction([g], np.exp(-g.nodes**2) * (1 + 0.4 * g.nodes))


def _l2(f):
    return math.sqrt(float(np.sum(f.grids[0].weights * np.abs(f.values) ** 2)))


def test_principal_action_identity_and_diag():
    phi = _phi()
    out = principal_action(P, GroupElement.identity(), phi)
    np.testing.assert_allclose(out.values, phi.values, atol=1e-14)
    lam = 1.7
    out = principal_action(P, GroupElement(lam, 0, 0, lam), phi)
    scal = signed_power(lam, (-1 + P.gap, P.eps1 - P.eps2)) * signed_power(lam**2, (0.5 + P.mu2, P.eps2))
    np.testing.assert_allclose(out.values, scal * phi.values, atol=1e-13)


def test_principal_action_unitary_on_unitary_axis():
    phi = _phi()
    for g in (GroupElement(1.1, 0.1, 0.05, 0.95), GroupElement(0.8, -0.3, 0.1, 1.2)):
        assert abs(_l2(principal_action(P, g, phi)) / _l2(phi) - 1) < 1e-6


def test_principal_action_pole_on_grid():
    g = gauss_legendre(8, -1, 1)
    phi = SampledFunction([g], np.ones(8))
    bad = GroupElement(-g.nodes[2], 0.0, 1.0, 1.0)
    with pytest.raises(ZeroDivisionError):
        principal_action(P, bad, phi)


def test_kernel_linearity(poly1, small_kernel):
    K2 = kernel_transform(poly1.scaled(2.5), P, small_kernel.tgrid, small_kernel.sgrid, small_kernel.quad)
    np.testing.assert_allclose(K2.values, 2.5 * small_kernel.values, rtol=1e-12, atol=1e-18)


def test_kernel_against_independent_oracle(poly1):
    q = QuadSpec((24,) * 4, poly1.box)
    for t, frac in [(0.55, 0.4), (-0.7, 0.55)]:
        lo, hi = s_support(poly1.box, t)
        s = lo + frac * (hi - lo)
        tg = Grid1D(np.array([t, t + 0.5]), np.ones(2))
        sg = Grid1D(np.array([s, s + 0.01]), np.ones(2))
        K = kernel_transform(poly1, P, tg, sg, q).values[0, 0]
        ref = kernel_oracle(poly1, P, t, s, n=48)
        assert abs(ref) > 0 and abs(K - ref) < 1e-4 * abs(ref)


def test_kernel_row_integral_matches_direct_operator(poly1):
    phi = lambda s: np.exp(-(s**2)) * (1 + 0.3 * s)  # noqa: E731
    t = np.array([-0.4, 0.5])
    via_kernel = kernel_apply_exact(poly1, P, phi, t, n_s=40, quad_n=20)
    direct = direct_operator_apply(poly1, P, phi, t, counts=28)
    assert np.max(np.abs(via_kernel - direct)) < 1e-4 * np.max(np.abs(direct))


def test_kernel_holomorphic_in_mu(poly1):
    tg = gauss_legendre(4, -0.8, 0.8)
    sg = gauss_legendre(4, *s_support_all(poly1.box))
    res = holomorphy_residual(poly1, P, tg, sg, quad=QuadSpec((12,) * 4, poly1.box))
    assert res["mu1"] < 1e-7 and res["mu2"] < 1e-7


def test_kernel_rejects_bad_box(poly1):
    tg = gauss_legendre(4, -1, 1)
    with pytest.raises(ValueError):
        kernel_transform(poly1, P, tg, tg, QuadSpec((8,) * 4, ((1.0, 1.5),) + poly1.box[1:]))
    wide = bump_function(((1.0, 2.0), (-0.5, 0.5), (-1.5, 1.5), (2.0, 3.0)), name="wide")
    with pytest.raises(ValueError):
        kernel_transform(wide, P, gauss_legendre(4, -1, 1), tg)


def test_kernel_matrix_validation(small_kernel):
    with pytest.raises(ValueError):
        KernelMatrix(small_kernel.tgrid, small_kernel.sgrid, np.zeros((3, 3)), P)
    bad = small_kernel.values.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        small_kernel.with_values(bad)


def test_hs_inner_properties(small_kernel):
    K1 = small_kernel
    K2 = K1.with_values(np.cos(K1.values.real * 1e6) + 1j * K1.values.imag * 1e4)
    v = hs_inner(K1, K1)
    assert v.real > 0 and abs(v.imag) < 1e-12 * v.real
    assert abs(hs_inner(K1, K2) - np.conj(hs_inner(K2, K1))) < 1e-15 * abs(hs_inner(K1, K2))
    assert abs(hs_inner(K1, K2)) ** 2 <= (hs_inner(K1, K1) * hs_inner(K2, K2)).real * (1 + 1e-12)
    other = KernelMatrix(K1.sgrid, K1.tgrid, K1.values.T, P)
    with pytest.raises(ValueError):
        hs_inner(K1, other)


def test_group_l2_inner_properties():
    F = bump_function()
    rule = box_rule(F.box, 12)
    v = group_l2_inner(F, F, rule)
    assert v.real > 0 and abs(v.imag) == 0
    assert abs(group_l2_inner(F.scaled(3), F, rule) - 3 * v) < 1e-14 * abs(v)
    far = bump_function(((3.0, 4.0), (-0.5, 0.5), (-0.5, 0.5), (3.0, 4.0)), name="far")
    assert group_l2_inner(F, far, rule) == 0


def test_kernel_dump_load_round_trip(small_kernel):
    text = dump_kernel(small_kernel)
    assert text.splitlines()[0] == "gl2harmonic-kernel v1"
    back = load_kernel(text)
    np.testing.assert_array_equal(back.values, small_kernel.values)
    np.testing.assert_array_equal(back.sgrid.nodes, small_kernel.sgrid.nodes)
    assert back.point == small_kernel.point and back.quad.counts == small_kernel.quad.counts
    assert dump_kernel(back) == text
    with pytest.raises(ValueError):
        load_kernel("something else\n")


def test_kernel_cache(tmp_path, poly1, small_kernel):
    cache = KernelCache(tmp_path)
    key = KernelCache.key(poly1, P, small_kernel.tgrid, small_kernel.sgrid, small_kernel.quad)
    assert cache.get(key) is None and cache.misses == 1
    cache.put(key, small_kernel)
    got = cache.get(key)
    assert cache.hits == 1
    np.testing.assert_array_equal(got.values, small_kernel.values)
    other = KernelCache.key(poly1, PrincipalSeriesPoint(0.3j, 1, -0.2j, 1), small_kernel.tgrid,
                            small_kernel.sgrid, small_kernel.quad)
    assert other != key
    assert not list(tmp_path.glob("*.tmp"))


def test_ds_identity_and_diag():
    disk = DiskRule(32, 64)
    dp = DiscreteSeriesPoint(2, 0.0, 0)
    M = ds_matrix(dp, GroupElement.identity(), 5, disk)
    np.testing.assert_allclose(M, np.eye(10), atol=1e-8)
    lam = 1.4
    dp = DiscreteSeriesPoint(3, 0.7, 1)
    M = ds_matrix(dp, GroupElement(lam, 0, 0, lam), 4, disk)
    scal = signed_power(lam**2, (0.5 + dp.n / 2 + 1j * dp.tau, dp.delta)) * lam ** (-1 - dp.n)
    np.testing.assert_allclose(M, scal * np.eye(8), atol=1e-8)
    with pytest.raises(ValueError):
        DiscreteSeriesPoint(0, 0.0, 0)


def test_ds_rotation_unitarity_improves_with_truncation():
    dp = DiscreteSeriesPoint(2, 0.0, 0)
    g = GroupElement.rotation(0.6) @ GroupElement(1.3, 0.2, 0.0, 1 / 1.3)
    errs = []
    for N in (4, 12, 24):
        M = ds_matrix(dp, g, N, DiskRule(48, 96))
        lead = M[:, [0, N]]  # low modes of both sheets
        errs.append(np.max(np.abs(lead.conj().T @ lead - np.eye(2))))
    assert errs[2] < errs[0] and errs[2] < 1e-2


def test_ds_trace_properties():
    F = invariant_function()
    dp = DiscreteSeriesPoint(2, 0.0, 0)
    from gl2harmonic.gl2 import conformal_polar_rule, invariant_radii

    rule = conformal_polar_rule(invariant_radii(F), 10, 10, 8)
    tr = ds_trace(F, dp, 2, rule, DiskRule(12, 24))
    assert tr.real >= 0 and tr.imag == 0
    zero = F.scaled(0)
    assert ds_trace(zero, dp, 2, rule, DiskRule(12, 24)) == 0

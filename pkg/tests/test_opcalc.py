from fractions import Fraction

import numpy as np
import pytest

from gl2harmonic.fourier import PrincipalSeriesPoint, kernel_transform
from gl2harmonic.gl2 import standard_family
from gl2harmonic.numerics import QuadSpec, SampledFunction, central_diff, gauss_legendre, uniform_grid
from gl2harmonic.opcalc import (
    SOURCE,
    TARGET,
    Coefficient,
    ShiftOp,
    Term,
    apply_diffdiff,
    apply_synthetic,
    builtin_ops,
    fd_kernel_derivatives,
    resolve_order,
    shift_point,
    symmetry_defect,
    verify_correspondence,
    verify_correspondences,
)

V1P, V1M, V2M = ShiftOp(1, 1), ShiftOp(1, -1), ShiftOp(2, -1)
P = PrincipalSeriesPoint(0.3, 0, -0.2, 1)


@pytest.fixture(scope="module")
def bump():
    return standard_family()[0]


def test_shift_point_examples():
    p = PrincipalSeriesPoint(0.4j, 0, -0.1j, 0)
    assert shift_point(p, V1P) == PrincipalSeriesPoint(1 + 0.4j, 1, -0.1j, 0)
    assert shift_point(shift_point(p, V1P), V1M) == p
    q = PrincipalSeriesPoint(0.4j, 1, -0.1j, 0)
    assert shift_point(q, (V1M, V2M)) == PrincipalSeriesPoint(-1 + 0.4j, 0, -1 - 0.1j, 1)
    with pytest.raises(ValueError):
        ShiftOp(3, 1)
    with pytest.raises(ValueError):
        ShiftOp(1, 0)


def test_builtin_catalog():
    ops = builtin_ops()
    assert len(ops) == 7
    assert ops["e12"].terms == (Term(Coefficient.const(1), "dt"),)
    (t,) = ops["mult_det_inv"].terms
    assert t.coeff == Coefficient.const(1) and t.deriv == "none" and t.shift == (V1M, V2M)
    for op in ops.values():
        for term in op.terms:
            assert term.coeff.gap_power in (0, 1)


def test_coefficient_gap_guard():
    c = Coefficient(((1, 0, Fraction(1)),), 1)
    assert c(PrincipalSeriesPoint(2, 0, 1, 0)) == 2
    with pytest.raises(ValueError):
        c(PrincipalSeriesPoint(0.5, 0, 0.5 + 1e-8, 0))
    with pytest.raises(ValueError):
        Term(c, "d2t")


def test_e43_on_synthetic_kernel():
    op = builtin_ops()["e43"]
    tg, sg = gauss_legendre(3, -1, 1), gauss_legendre(5, -1, 1)

    def kernel(T, S, q):
        return S, np.zeros_like(S), np.ones_like(S)

    out = apply_synthetic(op, P, kernel, tg, sg)
    s = sg.nodes[None, :]
    np.testing.assert_allclose(out, np.broadcast_to((-2 - P.mu1 + P.mu2) * s**2, out.shape), atol=1e-15)


def test_e12_equals_t_derivative_of_kernel(bump):
    q = QuadSpec((20,) * 4, bump.box)
    tg = uniform_grid(81, -0.1, 0.1)
    sg = gauss_legendre(4, -0.2, 0.2)
    E = apply_diffdiff(builtin_ops()["e12"], bump, P, tg, sg, q).values
    K = kernel_transform(bump, P, tg, sg, q).values
    fd = central_diff(SampledFunction([tg, sg], K), axis=0).derivative.values
    # limited by the t-dependence of the clipped fiber rule, not by the stencil
    assert np.max(np.abs(E[4:-4] - fd[4:-4])) < 1e-5 * np.max(np.abs(E))


def test_analytic_and_finite_difference_derivatives_agree(bump):
    # the gap is the fiber-rule error of differentiating before vs after integrating
    tg, sg = gauss_legendre(4, -0.5, 0.5), gauss_legendre(4, -0.3, 0.3)
    gaps = []
    for n in (20, 28):
        q = QuadSpec((n,) * 4, bump.box)
        dt, ds = fd_kernel_derivatives(bump, P, tg, sg, q)
        _, Kt, Ks = kernel_transform(bump, P, tg, sg, q, derivs=True)
        gaps.append(max(np.max(np.abs(Kt.values - dt)) / np.max(np.abs(Kt.values)),
                        np.max(np.abs(Ks.values - ds)) / np.max(np.abs(Ks.values))))
    assert gaps[1] < gaps[0] / 10 and gaps[1] < 1e-7


def test_mult_det_inv_residual_below_1e8(bump):
    tg, sg = gauss_legendre(8, -1, 1), gauss_legendre(8, -1, 1)
    rec = verify_correspondence("mult_det_inv", bump, P, tg, sg, QuadSpec((14,) * 4, bump.box))
    assert rec.residual < 1e-8 and rec.passes()


def test_e12_residual_converges_under_refinement(bump):
    tg, sg = gauss_legendre(8, -1, 1), gauss_legendre(8, -1, 1)
    rec = verify_correspondence("e12", bump, P, tg, sg, QuadSpec((20,) * 4, bump.box))
    assert rec.residual < 1e-4 and rec.refinement_ratio >= 4
    assert rec.residual_refined < 1e-7


def test_e14_at_default_grids(bump):
    rec = verify_correspondence("e14", bump, P)
    assert rec.residual < 1e-4
    assert rec.passes()
    assert rec.as_dict()["grids"]["quad"] == [20, 20, 20, 20]


def test_source_order_wins_for_e14_and_e32(bump):
    tg, sg = gauss_legendre(8, -1, 1), gauss_legendre(8, -1, 1)
    recs = verify_correspondences(["e14", "e32"], bump, [P], tg, sg, QuadSpec((12,) * 4, bump.box),
                                  orders=(SOURCE, TARGET))
    res = resolve_order(recs)
    assert res["e14"]["winner"] == SOURCE and res["e32"]["winner"] == SOURCE
    assert res["e14"]["worst"][TARGET] > 1e-2


def test_unitary_axis_reparametrization_invariance(bump):
    tg, sg = gauss_legendre(8, -1, 1), gauss_legendre(8, -1, 1)
    p2 = PrincipalSeriesPoint(P.mu1 + 0.7j, P.eps1, P.mu2 + 0.7j, P.eps2)
    for pair, n in (("e12", 28), ("mult_det_inv", 12)):
        q = QuadSpec((n,) * 4, bump.box)
        r1 = verify_correspondence(pair, bump, P, tg, sg, q).residual
        r2 = verify_correspondence(pair, bump, p2, tg, sg, q).residual
        assert abs(r1 - r2) < 1e-8


def test_symmetry_diagnostic():
    F1, F2 = standard_family()[1], standard_family()[2]
    for gen in ("e12", "e43"):
        assert symmetry_defect(gen, F1, F2) < 1e-6

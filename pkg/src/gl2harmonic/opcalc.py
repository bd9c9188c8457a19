"""Operational calculus: generators of the two-sided action on test functions
and their images, differential-difference operators in (t, s) with unit
shifts of the spectral parameters, plus the harness comparing both sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .fourier import (
    KernelMatrix,
    PrincipalSeriesPoint,
    kernel_bundle,
    kernel_quadspec,
    _check_support,
)
from .gl2 import apply_generator
from .numerics import Grid1D, QuadSpec, gauss_legendre

SOURCE = "source"
TARGET = "target"


@dataclass(frozen=True)
class ShiftOp:
    index: int
    sign: int

    def __post_init__(self):
        if self.index not in (1, 2):
            raise ValueError("shift index must be 1 or 2")
        if self.sign not in (1, -1):
            raise ValueError("shift sign must be +1 or -1")

    def __str__(self):
        return f"V{self.index}{'+' if self.sign > 0 else '-'}"


def shift_point(p: PrincipalSeriesPoint, v) -> PrincipalSeriesPoint:
    """(μ_i, ε_i) -> (μ_i ± 1, ε_i + 1); a tuple of ShiftOps applies all of them."""
    if isinstance(v, (tuple, list)):
        for x in v:
            p = shift_point(p, x)
        return p
    if v.index == 1:
        return PrincipalSeriesPoint(p.mu1 + v.sign, p.eps1 + 1, p.mu2, p.eps2)
    return PrincipalSeriesPoint(p.mu1, p.eps1, p.mu2 + v.sign, p.eps2 + 1)


# coefficients are polynomials in (mu1, mu2) over a power of (mu1 - mu2):
# numerator stored as {(i, j): Fraction} for mu1^i mu2^j
@dataclass(frozen=True)
class Coefficient:
    numerator: tuple  # ((i, j, Fraction), ...)
    gap_power: int = 0

    def __call__(self, p: PrincipalSeriesPoint) -> complex:
        num = sum(complex(cf) * p.mu1**i * p.mu2**j for i, j, cf in self.numerator)
        if self.gap_power:
            p.check_gap()
            return num / p.gap**self.gap_power
        return num

    @classmethod
    def const(cls, value) -> "Coefficient":
        return cls(((0, 0, Fraction(value)),))

    def __str__(self):
        terms = []
        for i, j, cf in self.numerator:
            mono = "".join(x for x in (f"mu1^{i}" if i > 1 else "mu1" if i else "", f"mu2^{j}" if j > 1 else "mu2" if j else ""))
            terms.append(f"{cf}{'*' + mono if mono else ''}")
        s = " + ".join(terms)
        return f"({s})/(mu1-mu2)^{self.gap_power}" if self.gap_power else s


DERIVS = ("none", "dt", "ds", "moebius_s")


@dataclass(frozen=True)
class Term:
    coeff: Coefficient
    deriv: str = "none"
    shift: tuple = ()  # tuple of ShiftOp, applied in order

    def __post_init__(self):
        if self.deriv not in DERIVS:
            raise ValueError(f"unknown derivative tag {self.deriv!r}")


@dataclass(frozen=True)
class DiffDiffOp:
    """Sum of coefficient x derivative x shift terms.

    ``order`` fixes where a coefficient is evaluated: at the source point p
    or at the shifted point the kernel is read from.
    "moebius_s" is the operator -s^2 d/ds + (-1 - mu1 + mu2) s.
    """

    name: str
    terms: tuple
    order: str = SOURCE

    def with_order(self, order: str) -> "DiffDiffOp":
        if order not in (SOURCE, TARGET):
            raise ValueError("order is 'source' or 'target'")
        return DiffDiffOp(self.name, self.terms, order)

    def points_needed(self, p: PrincipalSeriesPoint) -> list:
        return [shift_point(p, t.shift) for t in self.terms]


F_ = Fraction
V1P, V1M, V2P, V2M = ShiftOp(1, 1), ShiftOp(1, -1), ShiftOp(2, 1), ShiftOp(2, -1)


def builtin_ops() -> dict:
    """The seven Fourier-side images, keyed by the group-side generator id."""
    one = Coefficient.const(1)
    return {
        "e12": DiffDiffOp("E12", (Term(one, "dt"),)),
        "e43": DiffDiffOp("E43", (Term(one, "moebius_s"),)),
        "e14": DiffDiffOp("E14", (
            Term(Coefficient(((0, 0, F_(-1, 2)), (1, 0, F_(1))), 1), "ds", (V1M,)),
            Term(Coefficient(((0, 0, F_(-1, 2)), (0, 1, F_(1))), 1), "dt", (V2M,)),
        )),
        "e32": DiffDiffOp("E32", (
            Term(Coefficient(((0, 0, F_(1, 2)), (1, 0, F_(1))), 1), "dt", (V1P,)),
            Term(Coefficient(((0, 0, F_(1, 2)), (0, 1, F_(1))), 1), "ds", (V2P,)),
        )),
        "mult_c": DiffDiffOp("mult_c", (
            Term(Coefficient(((0, 0, F_(1)),), 1), "dt", (V1P,)),
            Term(Coefficient(((0, 0, F_(1)),), 1), "ds", (V2P,)),
        )),
        "mult_det_inv": DiffDiffOp("mult_det_inv", (Term(one, "none", (V1M, V2M)),)),
        "d_db": DiffDiffOp("d_db", (
            Term(Coefficient(((0, 0, F_(-3, 2)), (1, 0, F_(1))), 1), "ds", (V1M,)),
            Term(Coefficient(((0, 0, F_(-3, 2)), (0, 1, F_(1))), 1), "dt", (V2M,)),
        )),
    }


def combine_terms(op: DiffDiffOp, p: PrincipalSeriesPoint, kernels: dict, s_nodes: np.ndarray) -> np.ndarray:
    """Sum the terms given kernels[(point, deriv)] -> array on the (t, s) grid."""
    total = 0.0
    for term in op.terms:
        q = shift_point(p, term.shift)
        cpt = p if op.order == SOURCE else q
        cf = term.coeff(cpt)
        if term.deriv == "moebius_s":
            Ks = kernels[(q, "ds")]
            K = kernels[(q, "none")]
            val = -(s_nodes[None, :] ** 2) * Ks + (-1 - q.mu1 + q.mu2) * s_nodes[None, :] * K
        else:
            val = kernels[(q, term.deriv)]
        total = total + cf * val
    return total


def apply_synthetic(op: DiffDiffOp, p: PrincipalSeriesPoint, kernel_fn, tgrid: Grid1D, sgrid: Grid1D) -> np.ndarray:
    """Apply op to a closed-form kernel ``kernel_fn(t, s, point) -> (K, K_t, K_s)``."""
    T, S = np.meshgrid(tgrid.nodes, sgrid.nodes, indexing="ij")
    kernels = {}
    for q in op.points_needed(p):
        K, Kt, Ks = kernel_fn(T, S, q)
        kernels[(q, "none")], kernels[(q, "dt")], kernels[(q, "ds")] = K, Kt, Ks
    return combine_terms(op, p, kernels, sgrid.nodes)


def apply_diffdiff(op: DiffDiffOp, F, p: PrincipalSeriesPoint, tgrid: Grid1D, sgrid: Grid1D,
                   quad: QuadSpec | None = None) -> KernelMatrix:
    """Fourier-side operator applied to K_F: shifts by re-evaluation at the
    shifted parameters, derivatives under the integral sign."""
    quad = kernel_quadspec(F) if quad is None else quad
    _check_support(F, quad, tgrid)
    pts = list(dict.fromkeys(op.points_needed(p)))
    res = kernel_bundle([F], pts, tgrid, sgrid, quad, derivs=True)
    kernels = {}
    for j, q in enumerate(pts):
        K, Kt, Ks = res[(0, j)]
        kernels[(q, "none")], kernels[(q, "dt")], kernels[(q, "ds")] = K, Kt, Ks
    return KernelMatrix(tgrid, sgrid, combine_terms(op, p, kernels, sgrid.nodes), p, quad, {"op": op.name, "order": op.order})


def fd_kernel_derivatives(F, p: PrincipalSeriesPoint, tgrid: Grid1D, sgrid: Grid1D, quad: QuadSpec,
                          h: float = 1e-3):
    """Five-point finite differences of K in t and s, at the nodes of tgrid x sgrid."""
    offs = np.array([-2, -1, 1, 2]) * h
    cf = np.array([1, -8, 8, -1]) / (12 * h)
    dt = 0
    ds = 0
    for o, c in zip(offs, cf):
        tg = Grid1D(tgrid.nodes + o, tgrid.weights, tgrid.kind)
        sg = Grid1D(sgrid.nodes + o, sgrid.weights, sgrid.kind)
        dt = dt + c * kernel_bundle([F], [p], tg, sgrid, quad)[(0, 0)][0]
        ds = ds + c * kernel_bundle([F], [p], tgrid, sg, quad)[(0, 0)][0]
    return dt, ds


@dataclass
class ResidualRecord:
    pair: str
    function: str
    point: list
    order: str
    grids: dict
    residual: float
    residual_refined: float
    refinement_ratio: float
    max_abs_diff: float
    norm_lhs: float
    converged_floor: bool
    extra: dict = field(default_factory=dict)

    def passes(self, tol: float = 1e-4, min_ratio: float = 4.0, floor: float = 1e-12) -> bool:
        if not self.residual < tol:
            return False
        return self.residual_refined < floor or self.refinement_ratio >= min_ratio

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "pair", "function", "point", "order", "grids", "residual", "residual_refined",
            "refinement_ratio", "max_abs_diff", "norm_lhs", "converged_floor", "extra")}


NOISE_FLOOR = 1e-12


def _residuals(pairs, F, points, tgrid, sgrid, quad, orders, variant="consistent"):
    """Relative HS residuals for several pairs and points sharing one fiber rule.

    Function values on the fiber nodes do not depend on the parameter point,
    so one pass serves every point.
    """
    ops = builtin_ops()
    lhs_funcs = [apply_generator(g, F, variant if g == "e12" else "consistent") for g in pairs]
    pts = list(points)
    for p in points:
        for g in pairs:
            for q in ops[g].points_needed(p):
                if q not in pts:
                    pts.append(q)
    res = kernel_bundle([F] + lhs_funcs, pts, tgrid, sgrid, quad, derivs=[0])
    kernels = {}
    for j, q in enumerate(pts):
        K, Kt, Ks = res[(0, j)]
        kernels[(q, "none")], kernels[(q, "dt")], kernels[(q, "ds")] = K, Kt, Ks
    W = np.outer(tgrid.weights, sgrid.weights)
    out = {}
    for jp, p in enumerate(points):
        for i, g in enumerate(pairs):
            L = res[(i + 1, jp)][0]
            nL = math.sqrt(float(np.sum(W * np.abs(L) ** 2)))
            for order in orders:
                R = combine_terms(ops[g].with_order(order), p, kernels, sgrid.nodes)
                diff = L - R
                r = math.sqrt(float(np.sum(W * np.abs(diff) ** 2))) / nL
                out[(jp, g, order)] = (r, float(np.max(np.abs(diff))), nL)
    return out


def default_grids(n: int = 24):
    return gauss_legendre(n, -1.0, 1.0), gauss_legendre(n, -1.0, 1.0)


def verify_correspondences(pairs, F, points, tgrid=None, sgrid=None, quad=None,
                           orders=(SOURCE, TARGET), variant="consistent", fname: str | None = None) -> list:
    """Residual records for several pairs and points at one F, with the refinement study."""
    if isinstance(points, PrincipalSeriesPoint):
        points = [points]
    if tgrid is None:
        tgrid, sgrid = default_grids()
    quad = kernel_quadspec(F) if quad is None else quad
    _check_support(F, quad, tgrid)
    for p in points:
        p.check_gap()
    base = _residuals(pairs, F, points, tgrid, sgrid, quad, orders, variant)
    fine_q = quad.refined()
    fine = _residuals(pairs, F, points, tgrid, sgrid, fine_q, orders, variant)
    recs = []
    for jp, p in enumerate(points):
        for g in pairs:
            for order in orders:
                r0, mx, nL = base[(jp, g, order)]
                r1 = fine[(jp, g, order)][0]
                ratio = r0 / r1 if r1 > 0 else math.inf
                recs.append(ResidualRecord(
                    pair=g if variant == "consistent" or g != "e12" else f"e12[{variant}]",
                    function=fname or F.descriptor.get("family", "F"), point=p.as_list(), order=order,
                    grids={"t": len(tgrid), "s": len(sgrid), "quad": list(quad.counts), "quad_refined": list(fine_q.counts)},
                    residual=r0, residual_refined=r1, refinement_ratio=ratio, max_abs_diff=mx, norm_lhs=nL,
                    converged_floor=r1 < NOISE_FLOOR))
    return recs


def verify_correspondence(pair: str, F, p: PrincipalSeriesPoint, tgrid=None, sgrid=None, quad=None,
                          order: str = SOURCE) -> ResidualRecord:
    """‖K[e F] - E K_F‖_HS / ‖K[e F]‖_HS with the refinement ratio."""
    return verify_correspondences([pair], F, p, tgrid, sgrid, quad, orders=(order,))[0]


def resolve_order(records: list) -> dict:
    """Per pair, the coefficient order whose residuals are uniformly smaller."""
    out = {}
    for pair in sorted({r.pair for r in records}):
        by = {o: max(r.residual for r in records if r.pair == pair and r.order == o)
              for o in (SOURCE, TARGET) if any(r.pair == pair and r.order == o for r in records)}
        out[pair] = {"worst": by, "winner": min(by, key=by.get) if by else None}
    return out


def symmetry_defect(gen: str, F1, F2, tau1: float = 0.0, rule=None) -> float:
    """|<e F1, F2> + <F1, e F2>| / (|<eF1,F2>| + |<F1,eF2>|), L² of the group.

    e_kl are vector fields of one-parameter translation subgroups, so on
    compactly supported functions i e_kl is formally symmetric.
    """
    from .fourier import group_l2_inner
    from .gl2 import box_rule

    eF1 = apply_generator(gen, F1)
    eF2 = apply_generator(gen, F2)
    if rule is None:
        # the product is supported on the overlap of the boxes; integrating there keeps the edges on nodes
        overlap = tuple((max(x[0], y[0]), min(x[1], y[1])) for x, y in zip(F1.box, F2.box))
        if any(lo >= hi for lo, hi in overlap):
            return 0.0
        rule = box_rule(overlap, 40)
    x = group_l2_inner(eF1, F2, rule)
    y = group_l2_inner(F1, eF2, rule)
    return abs(x + y) / (abs(x) + abs(y))

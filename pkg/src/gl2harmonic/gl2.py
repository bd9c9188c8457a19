"""The group GL(2, R): elements, Haar density, Moebius action, Lie-algebra
generators acting on closed-form test functions, and convolution.

Test functions are sympy expressions in the matrix entries ``a, b, c, d``
multiplied by the indicator of a support region on which the expression is
smooth and outside of which it vanishes to infinite order.  Generators are
applied symbolically, so every derived function keeps exact partials.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import sympy as sp

from .numerics import gauss_legendre, periodic_grid, tensor_rule, weighted_gauss

A, B, C, D = sp.symbols("a b c d", real=True)
ENTRIES = (A, B, C, D)
DET = A * D - B * C


@dataclass(frozen=True)
class GroupElement:
    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if self.det == 0:
            raise ValueError("singular matrix is not a group element")

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=float)

    @classmethod
    def from_matrix(cls, m) -> "GroupElement":
        m = np.asarray(m, dtype=float)
        return cls(m[0, 0], m[0, 1], m[1, 0], m[1, 1])

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        return GroupElement.from_matrix(self.matrix() @ other.matrix())

    def inverse(self) -> "GroupElement":
        return GroupElement.from_matrix(np.linalg.inv(self.matrix()))

    @classmethod
    def identity(cls) -> "GroupElement":
        return cls(1.0, 0.0, 0.0, 1.0)

    @classmethod
    def rotation(cls, theta: float) -> "GroupElement":
        return cls(math.cos(theta), math.sin(theta), -math.sin(theta), math.cos(theta))


def haar_weight(a, b, c, d):
    """Bi-invariant Haar density ``1 / det**2`` w.r.t. da db dc dd."""
    det = np.asarray(a) * d - np.asarray(b) * c
    if np.any(det == 0):
        raise ValueError("haar_weight undefined on det = 0")
    out = 1.0 / det**2
    return out if np.ndim(out) else float(out)


def mobius_act(g: GroupElement, t):
    """``(b + t d) / (a + t c)``, the action underlying the principal series."""
    t = np.asarray(t, dtype=float)
    den = g.a + t * g.c
    if np.any(den == 0):
        bad = t[den == 0] if t.ndim else t
        raise ZeroDivisionError(f"Moebius action has a pole at t = {bad}")
    out = (g.b + t * g.d) / den
    return out if out.ndim else float(out)


# profile functions -------------------------------------------------------

def bump_expr(x, lo: float, hi: float, sharpness: float = 1.0):
    """exp(-k / (1 - u^2)) with u the affine image of [lo, hi] on [-1, 1]."""
    mid = sp.Rational(lo + hi) / 2 if float(lo + hi).is_integer() else sp.Float(0.5 * (lo + hi), 17)
    half = sp.Float(0.5 * (hi - lo), 17)
    u = (x - mid) / half
    k = sp.Integer(1) if sharpness == 1 else sp.Float(sharpness, 17)
    return sp.exp(-k / (1 - u**2))


def flat_cutoff_expr(v):
    """exp(1 - 1/(1 - v^8)): equal to 1 to high order at v = 0, zero to all orders at |v| = 1."""
    return sp.exp(1 - 1 / (1 - v**8))


class TestFunction:
    """Closed-form smooth function on GL(2, R) with compact support.

    ``region`` holds the support description used for masking:
    kind "box" (rectangular support, exact) or "invariant" (defined through
    the bi-rotation invariants X = |g|_F^2 / det and log det).
    ``box`` always bounds the support.
    """

    __test__ = False  # not a pytest class

    def __init__(self, expr, region: dict, descriptor: dict, box, det_sign: int, margin: float):
        self.expr = sp.sympify(expr)
        self.region = region
        self.descriptor = descriptor
        self.box = tuple((float(lo), float(hi)) for lo, hi in box)
        self.det_sign = int(det_sign)
        self.margin = float(margin)

    # construction helpers
    def derived(self, expr, tag: str) -> "TestFunction":
        desc = {"family": "derived", "op": tag, "parent": self.descriptor}
        return TestFunction(expr, self.region, desc, self.box, self.det_sign, self.margin)

    def scaled(self, alpha) -> "TestFunction":
        return self.derived(sp.nsimplify(alpha) * self.expr if isinstance(alpha, int) else alpha * self.expr, f"scale:{alpha}")

    @cached_property
    def _value_fn(self):
        return sp.lambdify(ENTRIES, self.expr, "numpy", cse=True)

    @cached_property
    def _grad_fns(self):
        return [sp.lambdify(ENTRIES, sp.diff(self.expr, v), "numpy", cse=True) for v in ENTRIES]

    @cached_property
    def key(self) -> str:
        blob = json.dumps(self.descriptor, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def mask(self, a, b, c, d) -> np.ndarray:
        a, b, c, d = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a, b, c, d)))
        r = self.region
        if r["kind"] == "box":
            m = np.ones(a.shape, dtype=bool)
            for x, (lo, hi) in zip((a, b, c, d), r["box"]):
                m &= (x > lo) & (x < hi)
            return m
        if r["kind"] == "invariant":
            det = a * d - b * c
            m = det > 0
            with np.errstate(divide="ignore", invalid="ignore"):
                ell = np.log(np.where(m, det, 1.0))
                X = (a * a + b * b + c * c + d * d) / np.where(m, det, 1.0)
            m &= np.abs(ell - r["m"]) < r["w_ell"]
            m &= (X - 2.0) < r["w_x"]
            return m
        raise ValueError(f"unknown region kind {r['kind']!r}")

    def _eval(self, fn, a, b, c, d):
        a, b, c, d = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a, b, c, d)))
        m = self.mask(a, b, c, d)
        out = np.zeros(a.shape, dtype=complex)
        if np.any(m):
            vals = fn(a[m], b[m], c[m], d[m])
            out[m] = vals
        return out

    def value(self, a, b, c, d) -> np.ndarray:
        return self._eval(self._value_fn, a, b, c, d)

    def __call__(self, g: GroupElement) -> complex:
        return complex(self.value(g.a, g.b, g.c, g.d))

    def partial(self, which: int, a, b, c, d) -> np.ndarray:
        return self._eval(self._grad_fns[which], a, b, c, d)

    def partials(self, a, b, c, d) -> list:
        return [self.partial(k, a, b, c, d) for k in range(4)]

    def __repr__(self):
        return f"TestFunction({self.descriptor})"


DEFAULT_BOX = ((1.0, 2.0), (-0.5, 0.5), (-0.5, 0.5), (1.0, 2.0))


def _box_margin(box) -> float:
    (a0, a1), (b0, b1), (c0, c1), (d0, d1) = box
    worst = min(a * d for a in (a0, a1) for d in (d0, d1)) - max(abs(b * c) for b in (b0, b1) for c in (c0, c1))
    return worst


def bump_function(box=DEFAULT_BOX, poly: dict | None = None, name: str = "bump", sharpness: float = 1.0) -> TestFunction:
    """Separable product of bumps on ``box`` times an optional polynomial.

    ``poly`` maps exponent tuples (i, j, k, l) to coefficients of
    a^i b^j c^k d^l.
    """
    margin = _box_margin(box)
    if margin <= 0:
        raise ValueError("support box must keep det > 0 with a positive margin")
    expr = sp.Integer(1)
    for x, (lo, hi) in zip(ENTRIES, box):
        expr = expr * bump_expr(x, lo, hi, sharpness)
    if poly:
        p = sum(sp.Float(cf, 17) * A**i * B**j * C**k * D**l for (i, j, k, l), cf in sorted(poly.items()))
        expr = p * expr
    desc = {"family": name, "box": [list(iv) for iv in box], "sharpness": sharpness, "poly": sorted([list(k) + [v] for k, v in (poly or {}).items()])}
    return TestFunction(expr, {"kind": "box", "box": tuple(box)}, desc, box, +1, margin)


def convolution_pairs() -> list:
    """Two (F1, F2) pairs for composition checks: a narrow F1 against a wider F2."""
    return [
        (bump_function(((1.0, 1.2), (-0.1, 0.1), (-0.1, 0.1), (1.0, 1.2)), {(0, 0, 0, 0): 1.0, (1, 0, 0, 0): 0.5}, "narrow1"),
         bump_function(((1.1, 1.7), (-0.25, 0.35), (-0.3, 0.25), (1.1, 1.7)), {(0, 0, 0, 0): 1.0, (0, 1, 0, 0): 2.0}, "wide1")),
        (bump_function(((1.05, 1.3), (-0.15, 0.1), (-0.1, 0.12), (1.0, 1.25)), {(0, 0, 0, 0): 1.0, (0, 0, 1, 0): 1.5}, "narrow2"),
         bump_function(((1.0, 1.6), (-0.3, 0.3), (-0.2, 0.3), (1.2, 1.8)), {(0, 0, 0, 0): 1.0, (0, 0, 0, 1): -0.4}, "wide2")),
    ]


def invariant_function(alpha: float = 2.0, m: float = 0.0, sigma: float = 0.3, beta: float = 0.0,
                       w_ell: float | None = None, w_x: float | None = None) -> TestFunction:
    """Bi-SO(2)-invariant function of X = |g|_F^2/det and log det on det > 0.

    F = (1 + beta (X - 2)) exp(-alpha (X - 2)) exp(-(log det - m)^2 / 2 sigma^2)
    times flat cutoffs making the support compact.  Both invariants are
    unchanged under g -> k1 g k2 for rotations k1, k2.
    """
    w_ell = 8.5 * sigma if w_ell is None else w_ell
    w_x = 40.0 / alpha if w_x is None else w_x
    X = (A**2 + B**2 + C**2 + D**2) / DET
    ell = sp.log(DET)
    u = (ell - m) / sigma
    expr = (1 + beta * (X - 2)) * sp.exp(-alpha * (X - 2)) * sp.exp(-u**2 / 2)
    expr = expr * flat_cutoff_expr((ell - m) / w_ell) * flat_cutoff_expr((X - 2) / w_x)
    # bounding box: |entries|^2 <= |g|_F^2 = X det
    det_max = math.exp(m + w_ell)
    emax = math.sqrt((2 + w_x) * det_max)
    box = ((-emax, emax),) * 4
    region = {"kind": "invariant", "m": m, "w_ell": w_ell, "w_x": w_x, "alpha": alpha, "sigma": sigma}
    desc = {"family": "invariant", "alpha": alpha, "m": m, "sigma": sigma, "beta": beta, "w_ell": w_ell, "w_x": w_x}
    return TestFunction(expr, region, desc, box, +1, math.exp(m - w_ell))


def standard_family() -> list:
    """Box-supported functions used by the operational-calculus checks."""
    return [
        bump_function(name="bump"),
        bump_function(poly={(0, 0, 0, 0): 1.0, (1, 0, 0, 0): 0.5, (0, 1, 1, 0): -2.0, (0, 0, 0, 2): 0.25}, name="poly1"),
        bump_function(box=((1.1, 1.9), (-0.4, 0.3), (-0.3, 0.45), (1.05, 1.8)),
                      poly={(0, 0, 0, 0): 1.0, (0, 0, 1, 0): 1.5, (1, 0, 0, 1): -0.3}, name="poly2"),
    ]


def invariant_family() -> list:
    """Five distinct bi-SO(2)-invariant functions."""
    return [
        invariant_function(alpha=3.0, m=0.2, sigma=0.3),
        invariant_function(alpha=2.5, m=0.0, sigma=0.3),
        invariant_function(alpha=3.0, m=-0.2, sigma=0.28, beta=0.5),
        invariant_function(alpha=3.5, m=0.1, sigma=0.32, beta=-0.2),
        invariant_function(alpha=2.8, m=0.3, sigma=0.27, beta=1.0),
    ]


# generators ---------------------------------------------------------------

GENERATORS = ("e12", "e43", "e14", "e32")
MULTIPLIERS = ("mult_a", "mult_b", "mult_c", "mult_d", "mult_det_inv", "d_db")
GENERATOR_IDS = GENERATORS + MULTIPLIERS


def generator_expr(gen: str, f, variant: str = "consistent"):
    """Apply a generator / multiplication operator to a sympy expression.

    ``variant="printed"`` gives e12 exactly as displayed in the source
    (-b d/da - d d/db); the default is the left-translation field
    -c d/da - d d/db that matches the Fourier image d/dt.
    """
    fa, fb, fc, fd = (sp.diff(f, v) for v in ENTRIES)
    if gen == "e12":
        if variant == "printed":
            return -B * fa - D * fb
        return -C * fa - D * fb
    if gen == "e43":
        return B * fa + D * fc
    if gen == "e14":
        return fb + C / DET * f
    if gen == "e32":
        return -(A * C * fa + A * D * fb + C**2 * fc + C * D * fd) - C * f
    if gen == "mult_a":
        return A * f
    if gen == "mult_b":
        return B * f
    if gen == "mult_c":
        return C * f
    if gen == "mult_d":
        return D * f
    if gen == "mult_det_inv":
        return f / DET
    if gen == "d_db":
        return fb
    raise ValueError(f"unknown generator {gen!r}")


def apply_generator(gen: str, F: TestFunction, variant: str = "consistent") -> TestFunction:
    """The differential / multiplication operator ``gen`` applied to F."""
    tag = gen if variant == "consistent" else f"{gen}[{variant}]"
    return F.derived(generator_expr(gen, F.expr, variant), tag)


# group quadrature ---------------------------------------------------------

@dataclass
class GroupRule:
    """Points of GL(2, R) with weights that already include the Haar density."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    weights: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.weights.size

    def chunks(self, size: int):
        for i in range(0, len(self), size):
            sl = slice(i, i + size)
            yield GroupRule(self.a[sl], self.b[sl], self.c[sl], self.d[sl], self.weights[sl], self.meta)


def box_rule(box, counts) -> GroupRule:
    """Tensor Gauss-Legendre rule on a box with Haar weights."""
    if isinstance(counts, int):
        counts = (counts,) * 4
    grids = [gauss_legendre(n, lo, hi) for n, (lo, hi) in zip(counts, box)]
    (a, b, c, d), w = tensor_rule(grids)
    det = a * d - b * c
    keep = det != 0
    return GroupRule(a[keep], b[keep], c[keep], d[keep], (w / det**2)[keep], {"kind": "box", "box": box, "counts": tuple(counts)})


def _bump_profile(x, lo: float, hi: float, sharpness: float = 1.0):
    u = (np.asarray(x, dtype=float) - 0.5 * (lo + hi)) / (0.5 * (hi - lo))
    inside = np.abs(u) < 1
    out = np.zeros_like(u)
    out[inside] = np.exp(-sharpness / (1 - u[inside] ** 2))
    return out


def bump_weighted_rule(box, counts, sharpness: float = 1.0) -> tuple:
    """Tensor rule Gaussian for the separable bump weight on ``box``.

    Returns the rule (Haar and bump weights folded in) and the bump profile
    at its nodes, so callers can divide it out of the integrand.
    """
    if isinstance(counts, int):
        counts = (counts,) * 4
    grids = [weighted_gauss(lambda x, lo=lo, hi=hi: _bump_profile(x, lo, hi, sharpness), lo, hi, n)
             for n, (lo, hi) in zip(counts, box)]
    (a, b, c, d), w = tensor_rule(grids)
    profile = np.ones_like(a)
    for x, (lo, hi) in zip((a, b, c, d), box):
        profile = profile * _bump_profile(x, lo, hi, sharpness)
    det = a * d - b * c
    meta = {"kind": "bump-weighted", "box": box, "counts": tuple(counts), "sharpness": sharpness}
    return GroupRule(a, b, c, d, w / det**2, meta), profile


def conformal_polar_rule(r_range, n_r: int, n_v: int, n_angle: int) -> GroupRule:
    """Quadrature on det > 0 in conformal / anticonformal polar coordinates.

    g = [[p+u, v-q], [q+v, p-u]] with (p, q) = R(cos phi, sin phi),
    (u, v) = S(cos psi, sin psi), 0 <= S < R; then det = R^2 - S^2 and
    da db dc dd = 4 R S dR dS dphi dpsi.  S = R * x with x in [0, 1).
    A linear change of variables followed by two planar polar maps.
    """
    R = gauss_legendre(n_r, *r_range)
    x = gauss_legendre(n_v, 0.0, 1.0)
    ang = periodic_grid(n_angle)
    RR, XX, PH, PS = np.meshgrid(R.nodes, x.nodes, ang.nodes, ang.nodes, indexing="ij")
    W = np.einsum("i,j,k,l->ijkl", R.weights, x.weights, ang.weights, ang.weights)
    S = RR * XX
    W = W * 4.0 * RR * S * RR  # dS = R dx
    p, q = RR * np.cos(PH), RR * np.sin(PH)
    u, v = S * np.cos(PS), S * np.sin(PS)
    a, b, c, d = p + u, v - q, q + v, p - u
    det = RR**2 - S**2
    W = W / det**2
    return GroupRule(a.ravel(), b.ravel(), c.ravel(), d.ravel(), W.ravel(),
                     {"kind": "conformal-polar", "r_range": tuple(r_range), "counts": (n_r, n_v, n_angle)})


def conformal_polar_reduced(r_range, n_r: int, n_v: int, n_theta: int) -> GroupRule:
    """Conformal-polar rule with the angle phi frozen at 0 and weight 2*pi.

    Exact reduction for integrands that depend on the two angles only through
    psi + phi: |g|_F^2, det and a^2 + b^2 are such functions, so bi-rotation
    invariant F times any function of (a^2 + b^2, det) qualifies.
    """
    R = gauss_legendre(n_r, *r_range)
    x = gauss_legendre(n_v, 0.0, 1.0)
    ang = periodic_grid(n_theta)
    RR, XX, PS = np.meshgrid(R.nodes, x.nodes, ang.nodes, indexing="ij")
    W = np.einsum("i,j,k->ijk", R.weights, x.weights, ang.weights) * 2 * math.pi
    S = RR * XX
    W = W * 4.0 * RR * S * RR / (RR**2 - S**2) ** 2
    p, q = RR, np.zeros_like(RR)
    u, v = S * np.cos(PS), S * np.sin(PS)
    return GroupRule((p + u).ravel(), (v - q).ravel(), (q + v).ravel(), (p - u).ravel(), W.ravel(),
                     {"kind": "conformal-polar-reduced", "r_range": tuple(r_range), "counts": (n_r, n_v, n_theta)})


def invariant_radii(F: TestFunction) -> tuple:
    r = F.region
    # det = R^2 (1 - x^2) and X - 2 = 4 x^2 / (1 - x^2) < w_x bound R
    r_lo = math.sqrt(math.exp(r["m"] - r["w_ell"]))
    xmax2 = r["w_x"] / (4 + r["w_x"])
    r_hi = math.sqrt(math.exp(r["m"] + r["w_ell"]) / (1 - xmax2))
    return r_lo, r_hi


def reduced_rule(F: TestFunction, n_r: int = 96, n_v: int = 96, n_theta: int = 256) -> GroupRule:
    if F.region["kind"] != "invariant":
        raise ValueError("reduced rule needs a bi-rotation-invariant function")
    return conformal_polar_reduced(invariant_radii(F), n_r, n_v, n_theta)


def default_rule(F: TestFunction, scale: float = 1.0) -> GroupRule:
    """A group quadrature rule adapted to F's support description."""
    if F.region["kind"] == "box":
        n = int(math.ceil(20 * scale))
        return box_rule(F.region["box"], n)
    return conformal_polar_rule(invariant_radii(F), int(48 * scale), int(48 * scale), int(16 * scale))


def group_integral(F: TestFunction, rule: GroupRule | None = None, fn=None) -> complex:
    """∫ F(g) [fn(g)] dμ(g) over a group quadrature rule."""
    rule = default_rule(F) if rule is None else rule
    total = 0.0 + 0.0j
    for ch in rule.chunks(400_000):
        vals = F.value(ch.a, ch.b, ch.c, ch.d)
        if fn is not None:
            vals = vals * fn(ch.a, ch.b, ch.c, ch.d)
        total += complex(np.dot(vals, ch.weights))
    return total


def convolve_at(F1: TestFunction, F2: TestFunction, a, b, c, d, counts: int = 14) -> np.ndarray:
    """(F1 * F2)(g) = ∫ F1(h) F2(h^{-1} g) dμ(h) at the points g = (a, b, c, d).

    The h-integral runs over F1's support box.  For separable bumps the
    tensor rule is Gaussian with respect to the bump profile itself, so only
    the smooth remainder is sampled; otherwise plain Gauss-Legendre.  F2's
    support is checked only through its mask.
    """
    if F1.region["kind"] != "box":
        raise ValueError("convolve_at integrates over F1's support box")
    if "sharpness" in F1.descriptor:
        rule, profile = bump_weighted_rule(F1.region["box"], counts, F1.descriptor["sharpness"])
        f1 = F1.value(rule.a, rule.b, rule.c, rule.d) / profile * rule.weights
    else:
        rule = box_rule(F1.region["box"], counts)
        f1 = F1.value(rule.a, rule.b, rule.c, rule.d) * rule.weights
    keep = f1 != 0
    ha, hb, hc, hd, f1 = rule.a[keep], rule.b[keep], rule.c[keep], rule.d[keep], f1[keep]
    hdet = ha * hd - hb * hc
    # h^{-1} = [[hd, -hb], [-hc, ha]] / hdet
    ia, ib, ic, id_ = hd / hdet, -hb / hdet, -hc / hdet, ha / hdet
    g = [np.ravel(np.asarray(x, dtype=float)) for x in np.broadcast_arrays(a, b, c, d)]
    out = np.zeros(g[0].size, dtype=complex)
    step = max(1, 2_000_000 // max(1, f1.size))
    for i in range(0, g[0].size, step):
        ga, gb, gc, gd = (x[i : i + step, None] for x in g)
        ka = ia * ga + ib * gc
        kb = ia * gb + ib * gd
        kc = ic * ga + id_ * gc
        kd = ic * gb + id_ * gd
        out[i : i + step] = F2.value(ka, kb, kc, kd) @ f1
    return out.reshape(np.shape(np.broadcast_arrays(a, b, c, d)[0]))


def product_box(box1, box2):
    """Interval-arithmetic bound for the entries of g1 g2 with g_i in box_i."""

    def mul(i1, i2):
        p = [x * y for x in i1 for y in i2]
        return (min(p), max(p))

    def add(i1, i2):
        return (i1[0] + i2[0], i1[1] + i2[1])

    (a1, b1, c1, d1), (a2, b2, c2, d2) = box1, box2
    return (add(mul(a1, a2), mul(b1, c2)), add(mul(a1, b2), mul(b1, d2)),
            add(mul(c1, a2), mul(d1, c2)), add(mul(c1, b2), mul(d1, d2)))


def convolve(F1: TestFunction, F2: TestFunction, out_grid, counts: int = 14) -> np.ndarray:
    """Sampled convolution on a 4D tensor grid given as four node arrays."""
    box = product_box(F1.box, F2.box)
    if _box_margin(box) <= 0:
        raise ValueError("convolution support reaches det = 0")
    mesh = np.meshgrid(*out_grid, indexing="ij")
    return convolve_at(F1, F2, *mesh, counts=counts)


class ConvolutionFunction:
    """Lazy F1 * F2 evaluated pointwise by quadrature; usable as a kernel input."""

    def __init__(self, F1: TestFunction, F2: TestFunction, counts: int = 14):
        box = product_box(F1.box, F2.box)
        if _box_margin(box) <= 0:
            raise ValueError("convolution support reaches det = 0")
        self.F1, self.F2, self.counts = F1, F2, counts
        self.box = box
        self.region = {"kind": "box", "box": box}
        self.descriptor = {"family": "convolution", "F1": F1.descriptor, "F2": F2.descriptor, "counts": counts}
        self.det_sign = +1
        self.margin = _box_margin(box)

    @cached_property
    def key(self) -> str:
        return hashlib.sha256(json.dumps(self.descriptor, sort_keys=True, default=str).encode()).hexdigest()[:16]

    def value(self, a, b, c, d):
        return convolve_at(self.F1, self.F2, a, b, c, d, counts=self.counts)

"""Principal-series actions and the operator-valued Fourier transform.

For a test function F the operator T(F) = ∫ F(g) T(g) dμ(g) on the principal
series is an integral operator with kernel

    K(t, s | μ, ε) = ∫∫∫ F(a, b*, c, d) A^{μ1-3/2 // ε1} D^{μ2-3/2 // ε2} da dc dd,

    b* = s (a + t c) - t d,   A = a + t c,   D = d - s c,

obtained by substituting s = (b + t d)/(a + t c) for b (db = A ds); the
determinant factorizes as ad - b* c = A D.  The fiber integral is computed by
nested Gauss-Legendre rules on the exact intersection of the support box with
the slab b0 < b* < b1, so the integrand's support edges are quadrature
endpoints.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .gl2 import GroupElement, TestFunction, box_rule, default_rule, group_integral
from .numerics import (
    Grid1D,
    QuadSpec,
    SampledFunction,
    barycentric_interp,
    gauss_legendre,
    legendre_reference,
)
from .specfun import signed_power

GAP_MIN = 1e-6


@dataclass(frozen=True)
class PrincipalSeriesPoint:
    mu1: complex
    eps1: int
    mu2: complex
    eps2: int

    def __post_init__(self):
        object.__setattr__(self, "mu1", complex(self.mu1))
        object.__setattr__(self, "mu2", complex(self.mu2))
        object.__setattr__(self, "eps1", int(self.eps1) % 2)
        object.__setattr__(self, "eps2", int(self.eps2) % 2)

    @classmethod
    def unitary(cls, tau1: float, eps1: int, tau2: float, eps2: int) -> "PrincipalSeriesPoint":
        return cls(1j * tau1, eps1, 1j * tau2, eps2)

    @property
    def gap(self) -> complex:
        return self.mu1 - self.mu2

    def check_gap(self) -> None:
        if abs(self.gap) < GAP_MIN:
            raise ValueError(f"|mu1 - mu2| = {abs(self.gap):.3e} is below {GAP_MIN}")

    def shifted(self, d1: int = 0, d2: int = 0) -> "PrincipalSeriesPoint":
        return PrincipalSeriesPoint(self.mu1 + d1, self.eps1 + abs(d1), self.mu2 + d2, self.eps2 + abs(d2))

    def as_list(self) -> list:
        return [self.mu1.real, self.mu1.imag, self.eps1, self.mu2.real, self.mu2.imag, self.eps2]


# principal-series action --------------------------------------------------

def principal_action(p: PrincipalSeriesPoint, g: GroupElement, phi: SampledFunction) -> SampledFunction:
    """(T(g) φ)(t) = φ((b+td)/(a+tc)) (a+tc)^{-1+μ1-μ2 // ε1-ε2} det^{1/2+μ2 // ε2}.

    φ at the moved points comes from barycentric interpolation on its grid
    and is taken as zero outside the grid range.
    """
    if len(phi.grids) != 1:
        raise ValueError("principal_action acts on functions of one variable")
    t = phi.grids[0].nodes
    den = g.a + t * g.c
    if np.any(den == 0):
        raise ZeroDivisionError(f"a + t c vanishes at grid node t = {t[den == 0][0]!r}")
    moved = (g.b + t * g.d) / den
    vals = barycentric_interp(t, phi.values, moved)
    mult = signed_power(den, (-1 + p.gap, p.eps1 - p.eps2)) * signed_power(g.det, (0.5 + p.mu2, p.eps2))
    return phi.with_values(vals * mult)


# fiber quadrature ---------------------------------------------------------

_ZERO_COEF = 1e-14


def _scaled_interval(coef, lo, hi):
    """Solution set of lo < coef * x < hi (coef != 0), as (xlo, xhi)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        x1, x2 = lo / coef, hi / coef
    return np.minimum(x1, x2), np.maximum(x1, x2)


def _range_of(coef, lo, hi):
    v1, v2 = coef * lo, coef * hi
    return np.minimum(v1, v2), np.maximum(v1, v2)


def _clip_interval(coef, rlo, rhi, box_lo, box_hi):
    small = np.abs(coef) < _ZERO_COEF
    safe = np.where(small, 1.0, coef)
    xl, xh = _scaled_interval(safe, rlo, rhi)
    xl = np.where(small, box_lo, np.maximum(xl, box_lo))
    xh = np.where(small, box_hi, np.minimum(xh, box_hi))
    return xl, np.maximum(xh, xl)


@dataclass
class FiberNodes:
    """Quadrature nodes on the fibers over a batch of (t, s) pairs; arrays (P, N)."""

    t: np.ndarray
    s: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    w: np.ndarray

    @property
    def A(self):
        return self.a + self.t[:, None] * self.c

    @property
    def D(self):
        return self.d - self.s[:, None] * self.c


def fiber_nodes(box, t, s, counts) -> FiberNodes:
    """Nested Gauss-Legendre nodes on {(a,c,d) in box : b0 < s a + s t c - t d < b1}.

    Outer variable c, then d, then a; each interval is the exact projection of
    the feasible polytope onto that variable given the outer ones.
    """
    (a0, a1), (b0, b1), (c0, c1), (d0, d1) = box
    na, _, nc, nd = counts
    t = np.asarray(t, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    alpha, gamma, delta = s, s * t, -t
    xa, wa = legendre_reference(na)
    xc, wc = legendre_reference(nc)
    xd, wd = legendre_reference(nd)

    ra_lo, ra_hi = _range_of(alpha, a0, a1)
    rd_lo, rd_hi = _range_of(delta, d0, d1)
    cl, ch = _clip_interval(gamma, b0 - ra_hi - rd_hi, b1 - ra_lo - rd_lo, c0, c1)
    hc = 0.5 * (ch - cl)
    c = (cl + hc)[:, None] + hc[:, None] * xc[None, :]  # (P, nc)
    wcv = hc[:, None] * wc[None, :]

    gc = gamma[:, None] * c
    dl, dh = _clip_interval(delta[:, None], b0 - gc - ra_hi[:, None], b1 - gc - ra_lo[:, None], d0, d1)
    hd = 0.5 * (dh - dl)
    d = (dl + hd)[..., None] + hd[..., None] * xd  # (P, nc, nd)
    wdv = hd[..., None] * wd

    gcd = gc[..., None] + delta[:, None, None] * d
    al, ah = _clip_interval(alpha[:, None, None], b0 - gcd, b1 - gcd, a0, a1)
    ha = 0.5 * (ah - al)
    a = (al + ha)[..., None] + ha[..., None] * xa  # (P, nc, nd, na)
    wav = ha[..., None] * wa

    P = t.size
    shape = (P, nc, nd, na)
    c4 = np.broadcast_to(c[:, :, None, None], shape)
    d4 = np.broadcast_to(d[..., None], shape)
    w = wcv[:, :, None, None] * wdv[..., None] * wav
    b4 = s[:, None, None, None] * (a + t[:, None, None, None] * c4) - t[:, None, None, None] * d4
    flat = lambda x: np.ascontiguousarray(x).reshape(P, -1)
    return FiberNodes(t, s, flat(a), flat(b4), flat(c4), flat(d4), flat(w))


def _power_table(points, A, Dm) -> np.ndarray:
    """A^{mu1-3/2 // eps1} D^{mu2-3/2 // eps2} for every point.

    Points whose exponents differ by integers from an earlier one reuse its
    complex exponential and multiply by integer powers.
    """
    logA, logD = np.log(np.abs(A)), np.log(np.abs(Dm))
    absA, absD = np.abs(A), np.abs(Dm)
    roots = []  # (point, |A|^p1 |D|^p2)
    ipow = {}

    def int_power(x, key, k):
        if (key, k) not in ipow:
            ipow[(key, k)] = x**k
        return ipow[(key, k)]

    out = np.empty((len(points),) + A.shape, dtype=complex)
    for j, q in enumerate(points):
        found = None
        for r, br in roots:
            k1, k2 = q.mu1 - r.mu1, q.mu2 - r.mu2
            if k1.imag == 0 and k2.imag == 0 and k1.real == round(k1.real) and k2.real == round(k2.real) \
                    and abs(k1.real) <= 2 and abs(k2.real) <= 2:
                found = (br, int(round(k1.real)), int(round(k2.real)))
                break
        if found is None:
            br = np.exp((q.mu1 - 1.5) * logA + (q.mu2 - 1.5) * logD)
            roots.append((q, br))
            val = br
        else:
            br, k1, k2 = found
            val = br
            if k1:
                val = val * int_power(absA, "A", k1)
            if k2:
                val = val * int_power(absD, "D", k2)
        if q.eps1:
            val = val * np.sign(A)
        if q.eps2:
            val = val * np.sign(Dm)
        out[j] = val
    return out


def _signed_pow(x, mu, eps):
    out = np.exp(mu * np.log(np.abs(x)))
    if eps % 2:
        out = out * np.sign(x)
    return out


def kernel_quadspec(F, n: int = 20) -> QuadSpec:
    return QuadSpec((n, n, n, n), F.box, refine=2.0)


DEFAULT_CHUNK_POINTS = 600_000


def kernel_bundle(functions, points, tgrid: Grid1D, sgrid: Grid1D, quad: QuadSpec,
                  derivs: bool = False, box=None, chunk_points: int = DEFAULT_CHUNK_POINTS) -> dict:
    """Kernels of several functions at several parameter points on one fiber rule.

    All functions must be supported in ``box`` (default: quad.box).  Returns
    {(i, j): (K, dK/dt, dK/ds)} with the derivatives None unless requested;
    derivatives are taken under the integral sign and need the exact partial
    db of each function, so they are limited to TestFunction inputs.
    ``derivs`` may also be a collection of function indices.
    """
    if derivs is True:
        want = set(range(len(functions)))
    elif not derivs:
        want = set()
    else:
        want = set(derivs)
    box = quad.box if box is None else box
    T, S = np.meshgrid(tgrid.nodes, sgrid.nodes, indexing="ij")
    T, S = T.ravel(), S.ravel()
    nodes_per_pair = int(np.prod([quad.counts[0], quad.counts[2], quad.counts[3]]))
    step = max(1, chunk_points // nodes_per_pair)
    out = {}
    shape = (tgrid.nodes.size, sgrid.nodes.size)
    for i in range(len(functions)):
        for j in range(len(points)):
            dv = i in want
            out[(i, j)] = [np.zeros(T.size, complex), np.zeros(T.size, complex) if dv else None,
                           np.zeros(T.size, complex) if dv else None]
    dlist = sorted(want)
    for k0 in range(0, T.size, step):
        sl = slice(k0, k0 + step)
        fn = fiber_nodes(box, T[sl], S[sl], quad.counts)
        A, Dm = fn.A, fn.D
        base = _power_table(points, A, Dm)  # (n_q, P, N)
        stack = [F.value(fn.a, fn.b, fn.c, fn.d) * fn.w for F in functions]
        for i in dlist:
            # d/dt: b* moves by -D and A by c; d/ds: b* moves by A and D by -c
            fb = functions[i].partial(1, fn.a, fn.b, fn.c, fn.d) * fn.w
            fv = stack[i]
            stack += [-Dm * fb, fn.c * fv / A, A * fb, fn.c * fv / Dm]
        vals = np.stack(stack, axis=1)  # (P, n_f', N)
        sums = np.matmul(vals, np.transpose(base, (1, 2, 0)))  # (P, n_f', n_q)
        nf = len(functions)
        for i in range(nf):
            for j in range(len(points)):
                out[(i, j)][0][sl] = sums[:, i, j]
        for r, i in enumerate(dlist):
            g1, g2, g3, g4 = (sums[:, nf + 4 * r + k, :] for k in range(4))
            for j, p in enumerate(points):
                out[(i, j)][1][sl] = g1[:, j] + (p.mu1 - 1.5) * g2[:, j]
                out[(i, j)][2][sl] = g3[:, j] - (p.mu2 - 1.5) * g4[:, j]
    return {k: tuple(None if x is None else x.reshape(shape) for x in v) for k, v in out.items()}


@dataclass
class KernelMatrix:
    tgrid: Grid1D
    sgrid: Grid1D
    values: np.ndarray
    point: PrincipalSeriesPoint
    quad: QuadSpec | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (len(self.tgrid), len(self.sgrid)):
            raise ValueError("kernel values do not match the (t, s) grids")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("kernel has non-finite entries")

    def with_values(self, values) -> "KernelMatrix":
        return KernelMatrix(self.tgrid, self.sgrid, values, self.point, self.quad, dict(self.meta))

    def apply(self, phi_values) -> np.ndarray:
        """(T φ)(t) = ∫ K(t, s) φ(s) ds on the s rule."""
        return self.values @ (self.sgrid.weights * np.asarray(phi_values))


def kernel_transform(F, p: PrincipalSeriesPoint, tgrid: Grid1D, sgrid: Grid1D,
                     quad: QuadSpec | None = None, derivs: bool = False):
    """Kernel of T(F) at p sampled on tgrid x sgrid.

    With ``derivs`` returns (K, K_t, K_s) as three KernelMatrix values.
    """
    quad = kernel_quadspec(F) if quad is None else quad
    _check_support(F, quad, tgrid)
    K, Kt, Ks = kernel_bundle([F], [p], tgrid, sgrid, quad, derivs=derivs)[(0, 0)]
    km = KernelMatrix(tgrid, sgrid, K, p, quad)
    if not derivs:
        return km
    return km, km.with_values(Kt), km.with_values(Ks)


def _check_support(F, quad: QuadSpec, tgrid: Grid1D) -> None:
    for (lo, hi), (qlo, qhi) in zip(F.box, quad.box):
        if lo < qlo - 1e-12 or hi > qhi + 1e-12:
            raise ValueError("quadrature box does not contain the support box")
    (a0, a1), _, (c0, c1), _ = quad.box
    t = np.array([tgrid.nodes[0], tgrid.nodes[-1]])
    amin = np.min([a0 + t * c0, a0 + t * c1, a1 + t * c0, a1 + t * c1])
    amax = np.max([a0 + t * c0, a0 + t * c1, a1 + t * c0, a1 + t * c1])
    if amin <= 0 < amax or amin < 0 <= amax:
        raise ValueError("a + t c changes sign on the integration region")


def s_support(box, t) -> tuple:
    """Range of s = (b + t d)/(a + t c) over the box, for fixed t (a + t c > 0)."""
    (a0, a1), (b0, b1), (c0, c1), (d0, d1) = box
    vals = []
    for a in (a0, a1):
        for b in (b0, b1):
            for c in (c0, c1):
                for d in (d0, d1):
                    vals.append((b + t * d) / (a + t * c))
    return float(min(vals)), float(max(vals))


def s_support_all(box, t_lo: float = -1.0, t_hi: float = 1.0, samples: int = 201) -> tuple:
    ts = np.linspace(t_lo, t_hi, samples)
    rng = np.array([s_support(box, t) for t in ts])
    return float(rng[:, 0].min()), float(rng[:, 1].max())


# kernel serialization --------------------------------------------------------

KERNEL_FORMAT = "gl2harmonic-kernel v1"


def _fmt(x: float) -> str:
    return repr(float(x))


def dump_kernel(km: KernelMatrix) -> str:
    """Versioned structured text: header lines, grids, then row-major re/im pairs."""
    lines = [KERNEL_FORMAT]
    lines.append("point " + " ".join(_fmt(v) for v in km.point.as_list()))
    for name, g in (("tgrid", km.tgrid), ("sgrid", km.sgrid)):
        lines.append(f"{name} {g.kind} {len(g)}")
        lines.append(" ".join(_fmt(v) for v in g.nodes))
        lines.append(" ".join(_fmt(v) for v in g.weights))
    if km.quad is not None:
        lines.append("quad " + json.dumps({"counts": km.quad.counts, "box": km.quad.box}))
    else:
        lines.append("quad null")
    lines.append(f"values {km.values.shape[0]} {km.values.shape[1]}")
    for row in km.values:
        lines.append(" ".join(f"{_fmt(z.real)} {_fmt(z.imag)}" for z in row))
    return "\n".join(lines) + "\n"


def load_kernel(text: str) -> KernelMatrix:
    lines = text.splitlines()
    if not lines or lines[0] != KERNEL_FORMAT:
        raise ValueError(f"not a {KERNEL_FORMAT!r} file")
    pv = [float(x) for x in lines[1].split()[1:]]
    point = PrincipalSeriesPoint(complex(pv[0], pv[1]), int(pv[2]), complex(pv[3], pv[4]), int(pv[5]))
    grids = []
    i = 2
    for _ in range(2):
        _, kind, _n = lines[i].split()
        nodes = np.array([float(x) for x in lines[i + 1].split()])
        weights = np.array([float(x) for x in lines[i + 2].split()])
        grids.append(Grid1D(nodes, weights, kind))
        i += 3
    q = lines[i].split(" ", 1)[1]
    quad = None if q == "null" else QuadSpec(**{k: tuple(map(tuple, v)) if k == "box" else tuple(v) for k, v in json.loads(q).items()})
    i += 1
    nr, ns = (int(x) for x in lines[i].split()[1:])
    vals = np.empty((nr, ns), dtype=complex)
    for r in range(nr):
        nums = np.array([float(x) for x in lines[i + 1 + r].split()])
        vals[r] = nums[0::2] + 1j * nums[1::2]
    return KernelMatrix(grids[0], grids[1], vals, point, quad)


class KernelCache:
    """Directory cache of kernels keyed by a content hash of all inputs.

    Writes go through a temporary file and an atomic rename, so concurrent
    readers never see partial entries.
    """

    def __init__(self, root):
        self.root = str(root)
        os.makedirs(self.root, exist_ok=True)
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(F, p: PrincipalSeriesPoint, tgrid: Grid1D, sgrid: Grid1D, quad: QuadSpec, tag: str = "K") -> str:
        blob = json.dumps({
            "F": F.descriptor, "p": p.as_list(), "tag": tag,
            "t": [list(map(float, tgrid.nodes)), tgrid.kind], "s": [list(map(float, sgrid.nodes)), sgrid.kind],
            "quad": [quad.counts, quad.box],
        }, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def get(self, key: str):
        path = os.path.join(self.root, key + ".kernel")
        if not os.path.exists(path):
            self.misses += 1
            return None
        self.hits += 1
        with open(path) as fh:
            return load_kernel(fh.read())

    def put(self, key: str, km: KernelMatrix) -> None:
        path = os.path.join(self.root, key + ".kernel")
        tmp = f"{path}.{os.getpid()}.tmp"
        with open(tmp, "w") as fh:
            fh.write(dump_kernel(km))
        os.replace(tmp, path)


# Hilbert-Schmidt pairings ----------------------------------------------------

def hs_inner(K1: KernelMatrix, K2: KernelMatrix) -> complex:
    """∫∫ K1 conj(K2) dt ds on the kernels' common rule."""
    if K1.tgrid != K2.tgrid or K1.sgrid != K2.sgrid:
        raise ValueError("kernels live on different grids")
    W = np.outer(K1.tgrid.weights, K1.sgrid.weights)
    return complex(np.sum(W * K1.values * np.conj(K2.values)))


def hs_norm(K: KernelMatrix) -> float:
    return math.sqrt(max(hs_inner(K, K).real, 0.0))


def group_l2_inner(F1, F2, quad=None) -> complex:
    """⟨F1, F2⟩ = ∫ F1(g) conj(F2(g)) dμ(g)."""
    rule = default_rule(F1) if quad is None else quad
    return group_integral(F1, rule, fn=lambda a, b, c, d: np.conj(F2.value(a, b, c, d)))


def weyl_conjugate(F: TestFunction) -> TestFunction:
    """F'' (g) = F(w g w) with w = [[0, 1], [1, 0]], i.e. (a, b, c, d) -> (d, c, b, a)."""
    from .gl2 import A, B, C, D

    if F.region["kind"] != "box":
        raise ValueError("weyl_conjugate is implemented for box-supported functions")
    expr = F.expr.xreplace({A: D, B: C, C: B, D: A})
    box = (F.box[3], F.box[2], F.box[1], F.box[0])
    desc = {"family": "weyl", "parent": F.descriptor}
    return TestFunction(expr, {"kind": "box", "box": box}, desc, box, F.det_sign, F.margin)


def full_line_hs(F1: TestFunction, F2: TestFunction, p: PrincipalSeriesPoint, n_t: int = 24, n_s: int = 32,
                 quad_n: int = 20) -> complex:
    """HS pairing of T(F1), T(F2) over all of R x R on the unitary axis.

    The region |t| > 1 is folded back onto |t| < 1 by t -> 1/t, s -> 1/s,
    which relates K_F to K_{F''} for the Weyl-conjugated function F''.
    """
    total = 0.0 + 0.0j
    for G1, G2 in ((F1, F2), (weyl_conjugate(F1), weyl_conjugate(F2))):
        box = tuple((min(x[0], y[0]), max(x[1], y[1])) for x, y in zip(G1.box, G2.box))
        lo, hi = s_support_all(box)
        tg = gauss_legendre(n_t, -1.0, 1.0)
        sg = gauss_legendre(n_s, lo, hi)
        q = QuadSpec((quad_n,) * 4, box)
        res = kernel_bundle([G1, G2], [p], tg, sg, q)
        K1 = KernelMatrix(tg, sg, res[(0, 0)][0], p)
        K2 = KernelMatrix(tg, sg, res[(1, 0)][0], p)
        total += hs_inner(K1, K2)
    return total


# composition of kernels -------------------------------------------------------

def kernel_composition(F1: TestFunction, F2: TestFunction, p: PrincipalSeriesPoint, tgrid: Grid1D,
                       sgrid: Grid1D, n_u: int = 32, quad_n: int = 24) -> np.ndarray:
    """∫ K_{F1}(t, u) K_{F2}(u, s) du on tgrid x sgrid.

    Each row integrates over the exact u-support of K_{F1}(t, .), so the
    kernel's support edges are quadrature endpoints.
    """
    rows = [gauss_legendre(n_u, *s_support(F1.box, t)) for t in tgrid.nodes]
    u = np.concatenate([g.nodes for g in rows])
    order = np.argsort(u, kind="stable")
    weights = np.zeros((len(tgrid), u.size))
    for i, g in enumerate(rows):
        weights[i, i * n_u:(i + 1) * n_u] = g.weights
    ugrid = Grid1D(u[order], np.ones(u.size))
    K1 = kernel_transform(F1, p, tgrid, ugrid, QuadSpec((quad_n,) * 4, F1.box)).values
    K2 = kernel_transform(F2, p, ugrid, sgrid, QuadSpec((quad_n,) * 4, F2.box)).values
    return (K1 * weights[:, order]) @ K2


@dataclass
class HomomorphismReport:
    rel_hs: float
    composed: np.ndarray
    direct: np.ndarray
    weights: np.ndarray
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"rel_hs": self.rel_hs, "direct_hs": _hs_weighted(self.direct, self.weights), **self.meta}


def _hs_weighted(K: np.ndarray, w: np.ndarray) -> float:
    return float(np.sqrt(np.sum(w * np.abs(K) ** 2)))


def homomorphism_check(F1: TestFunction, F2: TestFunction, p: PrincipalSeriesPoint, n_t: int = 4, n_s: int = 4,
                       t_range=(-1.0, 1.0), s_range=(-1.0, 1.0), n_u: int = 32, fiber_n: int = 28,
                       conv_n: int = 8) -> HomomorphismReport:
    """Compare K_{F1} ∘ K_{F2} with K_{F1 * F2} in relative HS norm on a coarse grid."""
    from .gl2 import ConvolutionFunction

    tg = gauss_legendre(n_t, *t_range)
    sg = gauss_legendre(n_s, *s_range)
    composed = kernel_composition(F1, F2, p, tg, sg, n_u=n_u)
    G = ConvolutionFunction(F1, F2, counts=conv_n)
    direct = kernel_bundle([G], [p], tg, sg, QuadSpec((fiber_n,) * 4, G.box))[(0, 0)][0]
    w = tg.weights[:, None] * sg.weights[None, :]
    rel = _hs_weighted(composed - direct, w) / _hs_weighted(direct, w)
    meta = {"point": p.as_list(), "n_t": n_t, "n_s": n_s, "n_u": n_u, "fiber_n": fiber_n, "conv_n": conv_n,
            "functions": [F1.key, F2.key]}
    return HomomorphismReport(float(rel), composed, direct, w, meta)


# 4D oracle ---------------------------------------------------------------------

def direct_operator_apply(F: TestFunction, p: PrincipalSeriesPoint, phi, t, counts: int = 30) -> np.ndarray:
    """∫ F(g) (T(g) φ)(t) dμ(g) by tensor quadrature over F's support box.

    ``phi`` is a callable evaluated at exact moved points (no interpolation).
    """
    rule = box_rule(F.box, counts)
    fv = F.value(rule.a, rule.b, rule.c, rule.d) * rule.weights
    keep = fv != 0
    a, b, c, d, fv = rule.a[keep], rule.b[keep], rule.c[keep], rule.d[keep], fv[keep]
    det = a * d - b * c
    out = []
    for tt in np.atleast_1d(t):
        den = a + tt * c
        val = phi((b + tt * d) / den) * _signed_pow(den, -1 + p.gap, p.eps1 - p.eps2) * _signed_pow(det, 0.5 + p.mu2, p.eps2)
        out.append(np.sum(fv * val))
    return np.array(out)


def kernel_oracle(F, p: PrincipalSeriesPoint, t: float, s: float, n: int = 64) -> complex:
    """K(t, s) integrated over (a, b, c) with d solved from the fiber equation.

    Independent of the fiber rule used by kernel_transform: plain tensor
    Gauss-Legendre in (a, c) over the support box and, for each (a, c), the
    b-interval on which d = (s(a + tc) - b)/t stays inside the box.  Needs
    t != 0 (Jacobian 1/|t|).
    """
    if abs(t) < 1e-3:
        raise ValueError("kernel_oracle parametrizes by b and needs |t| >= 1e-3")
    (a0, a1), (b0, b1), (c0, c1), (d0, d1) = F.box
    ga, gc = gauss_legendre(n, a0, a1), gauss_legendre(n, c0, c1)
    xb, wb = legendre_reference(n)
    a, c = np.meshgrid(ga.nodes, gc.nodes, indexing="ij")
    w_ac = np.outer(ga.weights, gc.weights)
    A = a + t * c
    e1, e2 = s * A - t * d0, s * A - t * d1
    lo = np.maximum(np.minimum(e1, e2), b0)
    hi = np.minimum(np.maximum(e1, e2), b1)
    half = 0.5 * np.maximum(hi - lo, 0.0)
    b = (lo + half)[..., None] + half[..., None] * xb
    w = (w_ac * half)[..., None] * wb / abs(t)
    a3, c3 = np.broadcast_to(a[..., None], b.shape), np.broadcast_to(c[..., None], b.shape)
    A3 = np.broadcast_to(A[..., None], b.shape)
    d = (s * A3 - b) / t
    keep = w > 0
    fv = F.value(a3[keep], b[keep], c3[keep], d[keep]) * w[keep]
    Dm = d[keep] - s * c3[keep]
    val = _signed_pow(A3[keep], p.mu1 - 1.5, p.eps1) * _signed_pow(Dm, p.mu2 - 1.5, p.eps2)
    return complex(np.sum(fv * val))


def holomorphy_residual(F, p: PrincipalSeriesPoint, tgrid: Grid1D, sgrid: Grid1D, h: float = 1e-4,
                        quad: QuadSpec | None = None) -> dict:
    """Cauchy-Riemann defect of the kernel in mu1 and in mu2.

    For each variable, |dK/dx + i dK/dy| / |dK/dx| in HS norm, with central
    differences of step h along the real and imaginary directions.
    The truncation part is about h^2/3 times a log-size factor.
    """
    quad = kernel_quadspec(F) if quad is None else quad
    out = {}
    for name, shift in (("mu1", lambda z: PrincipalSeriesPoint(p.mu1 + z, p.eps1, p.mu2, p.eps2)),
                        ("mu2", lambda z: PrincipalSeriesPoint(p.mu1, p.eps1, p.mu2 + z, p.eps2))):
        pts = [shift(h), shift(-h), shift(1j * h), shift(-1j * h)]
        res = kernel_bundle([F], pts, tgrid, sgrid, quad)
        Kp, Km, Kip, Kim = (res[(0, j)][0] for j in range(4))
        dx = (Kp - Km) / (2 * h)
        dy = (Kip - Kim) / (2 * h)
        W = np.outer(tgrid.weights, sgrid.weights)
        num = math.sqrt(float(np.sum(W * np.abs(dx + 1j * dy) ** 2)))
        den = math.sqrt(float(np.sum(W * np.abs(dx) ** 2)))
        out[name] = num / den
    return out


def kernel_apply_exact(F: TestFunction, p: PrincipalSeriesPoint, phi, t, n_s: int = 48, quad_n: int = 20) -> np.ndarray:
    """∫ K(t, s) φ(s) ds with the s rule on the exact s-support of each row."""
    out = []
    for tt in np.atleast_1d(t):
        lo, hi = s_support(F.box, tt)
        sg = gauss_legendre(n_s, lo, hi)
        tg = Grid1D(np.array([tt, tt + 1.0]), np.ones(2), "gauss-legendre")
        K = kernel_bundle([F], [p], tg, sg, QuadSpec((quad_n,) * 4, F.box))[(0, 0)][0][0]
        out.append(np.sum(K * sg.weights * phi(sg.nodes)))
    return np.array(out)


# spherical sector ------------------------------------------------------------

def is_bi_invariant(F) -> bool:
    return getattr(F, "region", {}).get("kind") == "invariant"


def spherical_transform(F, tau1: np.ndarray, tau2: np.ndarray, rule=None, chunk: int = 200_000) -> np.ndarray:
    """ĥ(τ1, τ2) = ∫ F(g) (a² + b²)^{(-1+ν)/2} det^{1/2+μ2} dμ(g), μ = iτ, ν = μ1 - μ2.

    For bi-rotation-invariant F supported on det > 0, T(F) on the sectors
    ε1 = ε2 is ĥ times the projection onto ψ0(t) = π^{-1/2} (1+t²)^{(-1+ν)/2};
    ĥ is (T(F)ψ0)(0)/ψ0(0).  Evaluated on the τ1 x τ2 tensor grid as a
    matrix product over the group nodes.
    """
    if rule is None:
        from .gl2 import reduced_rule
        rule = reduced_rule(F)
    tau1 = np.asarray(tau1, dtype=float)
    tau2 = np.asarray(tau2, dtype=float)
    out = np.zeros((tau1.size, tau2.size), dtype=complex)
    for ch in rule.chunks(chunk):
        f = F.value(ch.a, ch.b, ch.c, ch.d) * ch.weights
        keep = f != 0
        if not np.any(keep):
            continue
        a, b, c, d, f = ch.a[keep], ch.b[keep], ch.c[keep], ch.d[keep], f[keep]
        det = a * d - b * c
        if np.any(det <= 0):
            raise ValueError("spherical_transform assumes support in det > 0")
        u1 = np.log(a * a + b * b)
        u2 = np.log(det)
        amp = f * np.exp(-0.5 * u1 + 0.5 * u2)
        left = np.exp(0.5j * np.outer(tau1, u1))
        right = np.exp(1j * np.outer(u2 - 0.5 * u1, tau2))
        out += (left * amp[None, :]) @ right
    return out


def _psi(m: int, nu: complex, t: np.ndarray) -> np.ndarray:
    z = 1 + 1j * t
    return np.pi**-0.5 * (1 + t * t) ** ((-1 + nu) / 2) * (z / np.abs(z)) ** m


def ktype_matrix(F, p: PrincipalSeriesPoint, ms, rule=None, n_theta: int = 64, chunk: int = 20_000) -> np.ndarray:
    """Matrix ⟨T(F) ψ_n, ψ_m⟩ in the rotation-type basis ψ_m, m ≡ ε1 - ε2 (mod 2).

    ψ_m(t) = π^{-1/2} (1+t²)^{(-1+ν)/2} ((1+it)/|1+it|)^m is orthonormal on the
    unitary axis.  (T(g)ψ_n)(t) = π^{-1/2} |z|^{-1+ν} (z/|z|)^n det^{1/2+μ2 // ε2}
    with z = (a+tc) + i(b+td); the t-integral uses t = tan(θ/2).
    """
    ms = list(ms)
    if any((m - (p.eps1 - p.eps2)) % 2 for m in ms):
        raise ValueError("rotation types must have the parity of eps1 - eps2")
    rule = default_rule(F) if rule is None else rule
    theta = (np.arange(n_theta) + 0.5) * (2 * np.pi / n_theta) - np.pi
    t = np.tan(theta / 2)
    wt = (2 * np.pi / n_theta) * (1 + t * t) / 2
    nu = p.gap
    psis = np.array([np.conj(_psi(m, nu, t)) * wt for m in ms])  # (M, θ)
    out = np.zeros((len(ms), len(ms)), dtype=complex)
    for ch in rule.chunks(chunk):
        f = F.value(ch.a, ch.b, ch.c, ch.d) * ch.weights
        keep = f != 0
        if not np.any(keep):
            continue
        a, b, c, d, f = ch.a[keep], ch.b[keep], ch.c[keep], ch.d[keep], f[keep]
        det = a * d - b * c
        z = (a[:, None] + t[None, :] * c[:, None]) + 1j * (b[:, None] + t[None, :] * d[:, None])
        r = np.abs(z)
        ph = z / r
        common = np.pi**-0.5 * np.exp((-1 + nu) * np.log(r)) * _signed_pow(det, 0.5 + p.mu2, p.eps2)[:, None]
        for k, n in enumerate(ms):
            col = (common * ph**n) @ psis.T  # (G, M)
            out[:, k] += f @ col
    return out


@dataclass
class ParsevalReport:
    lhs: complex
    sectors: dict
    discrete: dict | None
    ratio: float
    tail: dict
    meta: dict = field(default_factory=dict)

    @property
    def principal_total(self) -> complex:
        return sum(self.sectors.values())

    def as_dict(self) -> dict:
        return {
            "lhs": [self.lhs.real, self.lhs.imag],
            "sectors": {k: [v.real, v.imag] for k, v in self.sectors.items()},
            "principal_total": [self.principal_total.real, self.principal_total.imag],
            "discrete": self.discrete,
            "ratio": self.ratio,
            "tail": self.tail,
            "meta": self.meta,
        }


SECTORS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _tau_integral(vals: np.ndarray, tg: Grid1D, parity: int, shell: float = 0.1):
    from .specfun import plancherel_density

    T1, T2 = np.meshgrid(tg.nodes, tg.nodes, indexing="ij")
    dens = plancherel_density(T1, T2, parity)
    W = np.outer(tg.weights, tg.weights) * dens
    total = complex(np.sum(W * vals))
    tmax = max(abs(tg.nodes[0]), abs(tg.nodes[-1]))
    outer = np.maximum(np.abs(T1), np.abs(T2)) > (1 - shell) * tmax
    return total, complex(np.sum((W * vals)[outer]))


def parseval_principal(F1, F2, tau_max: float = 24.0, n_tau: int = 192, rule=None, quad_n: int = 20,
                       method: str = "auto") -> ParsevalReport:
    """Group-side ⟨F1, F2⟩ against Σ_sectors ∫∫ HS(T(F1), T(F2)) dP(τ1, τ2).

    method "spherical" (bi-invariant inputs) uses the rank-one structure of
    T(F) on the sectors ε1 = ε2 and the vanishing of the other sectors;
    method "kernel" pairs full-line kernels and is priced accordingly.
    """
    if method == "auto":
        method = "spherical" if is_bi_invariant(F1) and is_bi_invariant(F2) else "kernel"
    tg = gauss_legendre(n_tau, -tau_max, tau_max)
    sectors, tails = {}, {}
    if method == "spherical":
        h1 = spherical_transform(F1, tg.nodes, tg.nodes, rule)
        h2 = h1 if F2 is F1 else spherical_transform(F2, tg.nodes, tg.nodes, rule)
        prod = h1 * np.conj(h2)
        for e1, e2 in SECTORS:
            key = f"{e1}{e2}"
            if e1 == e2:
                sectors[key], tails[key] = _tau_integral(prod, tg, 0)
            else:
                sectors[key], tails[key] = 0j, 0j
    elif method == "kernel":
        for e1, e2 in SECTORS:
            vals = np.empty((n_tau, n_tau), dtype=complex)
            for i, t1 in enumerate(tg.nodes):
                for j, t2 in enumerate(tg.nodes):
                    vals[i, j] = full_line_hs(F1, F2, PrincipalSeriesPoint.unitary(t1, e1, t2, e2), quad_n=quad_n)
            key = f"{e1}{e2}"
            sectors[key], tails[key] = _tau_integral(vals, tg, (e1 - e2) % 2)
    else:
        raise ValueError(f"unknown method {method!r}")
    lhs = group_l2_inner(F1, F2, rule)
    total = sum(sectors.values())
    tail_total = sum(tails.values())
    tail = {"shell_fraction": 0.1, "shell_total": abs(tail_total), "relative": abs(tail_total) / max(abs(total), 1e-300),
            "flag": abs(tail_total) > 0.01 * abs(total)}
    ratio = (lhs / total).real if total != 0 else math.nan
    return ParsevalReport(lhs, sectors, None, ratio, tail,
                          {"method": method, "tau_max": tau_max, "n_tau": n_tau})


# discrete series --------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteSeriesPoint:
    n: int
    tau: float
    delta: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("discrete series index n must be >= 1")
        object.__setattr__(self, "delta", int(self.delta) % 2)


@dataclass(frozen=True)
class DiskRule:
    """Polar rule on |w| < 1: GL in r on [0, 1] times a uniform angle grid."""

    n_r: int = 24
    n_angle: int = 64

    def nodes(self):
        rg = gauss_legendre(self.n_r, 0.0, 1.0)
        ang = (np.arange(self.n_angle)) * (2 * np.pi / self.n_angle)
        R, TH = np.meshgrid(rg.nodes, ang, indexing="ij")
        W = np.outer(rg.weights * rg.nodes, np.full(self.n_angle, 2 * np.pi / self.n_angle))
        return (R * np.exp(1j * TH)).ravel(), W.ravel()


def _sheet_z(w, sheet):
    # upper sheet w = (z - i)/(z + i); lower sheet w = (z + i)/(z - i)
    return sheet * 1j * (1 + w) / (1 - w)


def _sheet_w(z, sheet):
    return (z - sheet * 1j) / (z + sheet * 1j)


def _basis_norms(n: int, N: int) -> np.ndarray:
    # ∫_disk |w|^{2k} (1-|w|^2)^{n-1} dA = π B(k+1, n)
    from .specfun import log_gamma

    k = np.arange(N)
    return np.array([math.pi * math.exp((log_gamma(kk + 1) + log_gamma(n) - log_gamma(kk + 1 + n)).real) for kk in k])


def _ds_columns(dp: DiscreteSeriesPoint, ga, gb, gc, gd, N: int, disk: DiskRule):
    """Matrices of D(g) for a batch of group elements, shape (G, 2N, 2N).

    Index order: upper-sheet k = 0..N-1, then lower-sheet k = 0..N-1; the
    basis e_k = (z ± i)^{-1-n} w^k, normalized in the disk weight
    (1 - |w|²)^{n-1}.
    """
    n = dp.n
    w, wq = disk.nodes()
    norms = np.sqrt(_basis_norms(n, N))
    weight = wq * (1 - np.abs(w) ** 2) ** (n - 1)
    ga, gb, gc, gd = (np.asarray(x, dtype=float)[:, None] for x in (ga, gb, gc, gd))
    det = (ga * gd - gb * gc)[:, 0]
    scal = _signed_pow(det, 0.5 + n / 2 + 1j * dp.tau, dp.delta)
    G = det.size
    M = np.zeros((G, 2 * N, 2 * N), dtype=complex)
    wpow = np.array([w**j for j in range(N)])  # (N, Q)
    for si, sheet in enumerate((1, -1)):
        z = _sheet_z(w, sheet)[None, :]
        den = ga + z * gc
        zp = (gb + z * gd) / den
        for so, sheet_out in enumerate((1, -1)):
            # target sheet of the moved point
            mask = (np.sign(zp.imag) == sheet_out)
            if not np.any(mask):
                continue
            wp = _sheet_w(zp, sheet_out)
            # pulled back to disk coordinates of the source sheet
            pull = (zp + sheet_out * 1j) ** (-1 - n) * den ** (-1 - n) * (z + sheet * 1j) ** (1 + n)
            pull = np.where(mask, pull, 0)
            col = pull[:, None, :] * np.where(mask[:, None, :], wp[:, None, :], 0) ** np.arange(N)[None, :, None]
            # project on the source-sheet basis
            proj = np.einsum("gkq,jq->gjk", col * weight[None, None, :], np.conj(wpow))
            proj = proj / (norms[None, :, None] * norms[None, None, :])
            M[:, si * N:(si + 1) * N, so * N:(so + 1) * N] = proj * scal[:, None, None]
    return M


def ds_action(dp: DiscreteSeriesPoint, g: GroupElement, coeffs, N: int, disk: DiskRule | None = None) -> np.ndarray:
    """D(g) on the first N basis vectors of each sheet, applied to ``coeffs`` (length 2N)."""
    if N < 1:
        raise ValueError("truncation N must be >= 1")
    disk = DiskRule() if disk is None else disk
    M = _ds_columns(dp, [g.a], [g.b], [g.c], [g.d], N, disk)[0]
    return M @ np.asarray(coeffs, dtype=complex)


def ds_matrix(dp: DiscreteSeriesPoint, g: GroupElement, N: int, disk: DiskRule | None = None) -> np.ndarray:
    disk = DiskRule() if disk is None else disk
    return _ds_columns(dp, [g.a], [g.b], [g.c], [g.d], N, disk)[0]


def ds_operator(F, dp: DiscreteSeriesPoint, N: int, rule=None, disk: DiskRule | None = None, chunk: int = 256) -> np.ndarray:
    """∫ F(g) D(g) dμ(g) truncated to 2N x 2N."""
    disk = DiskRule() if disk is None else disk
    rule = default_rule(F) if rule is None else rule
    acc = np.zeros((2 * N, 2 * N), dtype=complex)
    for ch in rule.chunks(chunk * 64):
        f = F.value(ch.a, ch.b, ch.c, ch.d) * ch.weights
        keep = np.nonzero(f != 0)[0]
        for i in range(0, keep.size, chunk):
            idx = keep[i:i + chunk]
            M = _ds_columns(dp, ch.a[idx], ch.b[idx], ch.c[idx], ch.d[idx], N, disk)
            acc += np.einsum("g,gjk->jk", f[idx], M)
    return acc


def ds_trace(F, dp: DiscreteSeriesPoint, N: int, rule=None, disk: DiskRule | None = None) -> complex:
    """tr(A* A) for A = ∫ F(g) D(g) dμ(g) truncated to the first N vectors per sheet."""
    A = ds_operator(F, dp, N, rule, disk)
    return complex(np.sum(np.abs(A) ** 2))


def _rotation_phases(dp: DiscreteSeriesPoint, angles: np.ndarray, N: int, disk: DiskRule) -> np.ndarray:
    """Diagonals of D(k_θ) (rotations act diagonally on the basis), shape (len(angles), 2N)."""
    # rotation angles repeat on product grids; evaluate each distinct one once
    key = np.round(np.mod(angles, 2 * np.pi), 12)
    uniq, inv = np.unique(key, return_inverse=True)
    if uniq.size < angles.size:
        return _rotation_phases(dp, uniq, N, disk)[inv]
    c, s = np.cos(angles), np.sin(angles)
    out = np.empty((angles.size, 2 * N), dtype=complex)
    for i in range(0, angles.size, 256):
        sl = slice(i, i + 256)
        M = _ds_columns(DiscreteSeriesPoint(dp.n, 0.0, 0), c[sl], s[sl], -s[sl], c[sl], N, disk)
        out[sl] = np.diagonal(M, axis1=1, axis2=2)
    return out


def ds_operator_birotation(F, dp: DiscreteSeriesPoint, N: int, n_r: int = 48, n_x: int = 48,
                           n_angle: int = 64, disk: DiskRule | None = None, extra=()) -> np.ndarray:
    """∫ F(g) D(g) dμ(g) on the conformal-polar rule, using g = k_α diag(R+S, R-S) k_β.

    With (p + iq, u + iv) = (R e^{iφ}, S e^{iψ}) one has α = -(φ+ψ)/2 and
    β = -(φ-ψ)/2, and D(k_α g0 k_β) = D(k_α) D(g0) D(k_β) with D(k)
    diagonal; only the diagonal elements g0 need disk quadrature.  F must
    be bi-rotation invariant so that F(g) = F(g0).

    ``extra`` lists further (tau, delta) values sharing n; they differ only by
    the scalar det^{i tau // delta}, so the result is then a list of matrices.
    """
    from .gl2 import invariant_radii
    from .numerics import periodic_grid

    if not is_bi_invariant(F):
        raise ValueError("factorized discrete-series operator needs a bi-rotation-invariant function")
    disk = DiskRule() if disk is None else disk
    rg = gauss_legendre(n_r, *invariant_radii(F))
    xg = gauss_legendre(n_x, 0.0, 1.0)
    RR, XX = np.meshgrid(rg.nodes, xg.nodes, indexing="ij")
    S = RR * XX
    det = RR**2 - S**2
    W = (np.outer(rg.weights, xg.weights) * 4.0 * RR * S * RR / det**2).ravel()
    d1, d2 = (RR + S).ravel(), (RR - S).ravel()
    zero = np.zeros_like(d1)
    f = F.value(d1, zero, zero, d2) * W
    ang = periodic_grid(n_angle)
    PH, PS = np.meshgrid(ang.nodes, ang.nodes, indexing="ij")
    alpha, beta = (-(PH + PS) / 2).ravel(), (-(PH - PS) / 2).ravel()
    wang = np.outer(ang.weights, ang.weights).ravel()
    chi_a = _rotation_phases(dp, alpha, N, disk)
    chi_b = _rotation_phases(dp, beta, N, disk)
    Phi = np.einsum("g,gj,gk->jk", wang, chi_a, chi_b)
    keep = np.nonzero(f != 0)[0]
    base = DiscreteSeriesPoint(dp.n, 0.0, 0)
    Ms = np.concatenate([_ds_columns(base, d1[idx], zero[idx], zero[idx], d2[idx], N, disk)
                         for idx in np.array_split(keep, max(1, keep.size // 256))])
    dets = (d1 * d2)[keep]
    outs = []
    for tau, delta in [(dp.tau, dp.delta)] + list(extra):
        coef = f[keep] * _signed_pow(dets, 1j * tau, delta)
        outs.append(np.einsum("g,gjk->jk", coef, Ms) * Phi)
    return outs[0] if not extra else outs


def discrete_contribution(F, ns=(1, 2, 3), N: int = 12, tau_max: float = 8.0, n_tau: int = 16,
                          disk: DiskRule | None = None) -> dict:
    """Σ_n Σ_δ ∫ tr(A*A) n/(8π³) dτ over |τ| <= tau_max for bi-rotation-invariant F."""
    from .specfun import discrete_density

    tg = gauss_legendre(n_tau, -tau_max, tau_max)
    per_n = {}
    max_trace = 0.0
    for n in ns:
        tot = 0.0
        todo = [(tau, delta) for delta in (0, 1) for tau in tg.nodes]
        mats = ds_operator_birotation(F, DiscreteSeriesPoint(n, *todo[0]), N, disk=disk, extra=todo[1:])
        for (tau, delta), w, A in zip(todo, list(tg.weights) * 2, mats):
            tr = float(np.sum(np.abs(A) ** 2))
            max_trace = max(max_trace, tr)
            tot += w * tr * discrete_density(n)
        per_n[str(n)] = tot
    return {"per_n": per_n, "total": sum(per_n.values()), "N": N, "tau_max": tau_max, "n_tau": n_tau,
            "max_trace": max_trace}

"""Separation of series.

Hardy-space block projections for functions of two real variables (the
one-sheet hyperboloid picture), and complementary-series forms, equator
embeddings and the restriction multiplier on the spheres S^1 and S^2 under
SO_0(1, q).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gl2 import GroupElement
from .numerics import Grid1D, SampledFunction, uniform_grid

# --------------------------------------------------------------------------
# Hardy projections on the line

BAND_TOL = 1e-8


class BandLimitError(ValueError):
    """Samples carry spectral energy too close to the Nyquist band."""


class PoleError(ValueError):
    """A grid node sits on the pole of a fractional-linear map."""


@dataclass(frozen=True)
class HardyComponent:
    s1: int
    s2: int

    def __post_init__(self):
        if self.s1 not in (1, -1) or self.s2 not in (1, -1):
            raise ValueError("Hardy signs are +1 or -1")

    @staticmethod
    def all() -> list:
        return [HardyComponent(a, b) for a in (1, -1) for b in (1, -1)]

    @property
    def label(self) -> str:
        return ("+" if self.s1 > 0 else "-") + ("+" if self.s2 > 0 else "-")


def line_grid(n: int = 1024, half_width: float = 40.0, shift: float = 0.0) -> Grid1D:
    """Periodic uniform grid on [-L, L) moved by ``shift`` cells."""
    g = uniform_grid(n, -half_width, half_width, endpoint=False)
    if shift:
        h = 2 * half_width / n
        return Grid1D(g.nodes + shift * h, g.weights, g.kind)
    return g


def _period(grid: Grid1D) -> tuple:
    h = grid.nodes[1] - grid.nodes[0]
    if not np.allclose(np.diff(grid.nodes), h, rtol=1e-12, atol=0):
        raise ValueError("Hardy projection needs a uniform grid")
    return h, h * len(grid)


def raised_cosine_taper(grid: Grid1D, frac: float = 0.05) -> np.ndarray:
    """1 on the inner window, raised cosine to 0 over the outer ``frac`` of each side."""
    h, period = _period(grid)
    mid = grid.nodes[0] + 0.5 * (period - h)
    r = np.abs(grid.nodes - mid) / (0.5 * period)
    edge = 1.0 - frac
    return np.where(r < edge, 1.0, 0.5 * (1 + np.cos(np.pi * np.clip((r - edge) / frac, 0, 1))))


def _frequencies(grid: Grid1D) -> np.ndarray:
    h, _ = _period(grid)
    return 2 * np.pi * np.fft.fftfreq(len(grid), h)


def _mask(grid: Grid1D, sign: int, zero_weight: float) -> np.ndarray:
    k = _frequencies(grid)
    m = (np.sign(k) == sign).astype(float)
    m[k == 0] = zero_weight if sign > 0 else 1.0 - zero_weight
    n = len(grid)
    if n % 2 == 0:
        # the Nyquist bin is its own mirror image
        m[n // 2] = 0.5
    return m


def band_energy_fraction(grid: Grid1D, values: np.ndarray, axis: int = 0) -> float:
    """Share of spectral energy in the upper half of the frequency band."""
    F = np.fft.fft(values, axis=axis)
    k = np.abs(_frequencies(grid))
    outer = k >= 0.5 * k.max()
    shape = [1] * F.ndim
    shape[axis] = -1
    e = np.abs(F) ** 2
    total = e.sum()
    return float((e * outer.reshape(shape)).sum() / total) if total > 0 else 0.0


def _project_axis(grid: Grid1D, values: np.ndarray, sign: int, axis: int, zero_weight: float, check: bool):
    if check:
        frac = band_energy_fraction(grid, values, axis)
        if frac > BAND_TOL:
            raise BandLimitError(f"spectral energy {frac:.2e} in the upper half band exceeds {BAND_TOL:g}")
    shape = [1] * values.ndim
    shape[axis] = -1
    m = _mask(grid, sign, zero_weight).reshape(shape)
    return np.fft.ifft(np.fft.fft(values, axis=axis) * m, axis=axis)


def hardy_project(f: SampledFunction, sign: int, zero_weight: float = 0.5, check: bool = True) -> SampledFunction:
    """Keep the frequencies of e^{itx} with sign(t) = sign.

    The zero frequency gets weight ``zero_weight`` in P+ and the complement
    in P-, so P+ + P- = I exactly.
    """
    if len(f.grids) != 1:
        raise ValueError("hardy_project acts on functions of one variable; use block_project")
    return f.with_values(_project_axis(f.grids[0], f.values, sign, 0, zero_weight, check))


def block_project(f: SampledFunction, comp: HardyComponent, zero_weight: float = 0.5,
                  check: bool = True) -> SampledFunction:
    if len(f.grids) != 2:
        raise ValueError("block_project acts on functions of two variables")
    v = _project_axis(f.grids[0], f.values, comp.s1, 0, zero_weight, check)
    v = _project_axis(f.grids[1], v, comp.s2, 1, zero_weight, check)
    return f.with_values(v)


def trig_interp_matrix(grid: Grid1D, y: np.ndarray) -> np.ndarray:
    """Matrix evaluating the periodic trigonometric interpolant of samples at y."""
    n = len(grid)
    h, period = _period(grid)
    k = np.fft.fftfreq(n, 1.0 / n)
    omega = 2 * np.pi * k / period
    phase = np.exp(1j * np.outer(np.asarray(y) - grid.nodes[0], omega))
    if n % 2 == 0:
        phase[:, n // 2] = np.cos(omega[n // 2] * (np.asarray(y) - grid.nodes[0]))
    dft = np.fft.fft(np.eye(n), axis=0) / n
    return phase @ dft


def mobius_line(g: GroupElement, x) -> tuple:
    """(b + x d)/(a + x c) and the cocycle a + x c."""
    x = np.asarray(x, dtype=float)
    den = g.a + x * g.c
    return (g.b + x * g.d) / np.where(den == 0, np.inf, den), den


def _action_matrix(g: GroupElement, grid: Grid1D, mask_poles: bool, pole_tol: float) -> np.ndarray:
    if abs(g.det - 1.0) > 1e-12:
        raise ValueError("the line action here is for SL(2, R): det must be 1")
    y, den = mobius_line(g, grid.nodes)
    pole = np.abs(den) < pole_tol
    if np.any(pole) and not mask_poles:
        raise PoleError(f"{int(pole.sum())} grid node(s) on the pole a + x c = 0")
    h, period = _period(grid)
    lo, hi = grid.nodes[0], grid.nodes[0] + period
    inside = (y >= lo) & (y < hi) & ~pole
    E = np.zeros((len(grid), len(grid)), dtype=complex)
    if np.any(inside):
        E[inside] = trig_interp_matrix(grid, y[inside]) / den[inside, None]
    return E


def sl2_T_action(g: GroupElement, f: SampledFunction, mask_poles: bool = False, pole_tol: float = 1e-9) -> SampledFunction:
    """T(g) f(x) = f((b + x d)/(a + x c)) (a + x c)^{-1}.

    f is treated as zero outside its periodic window; in-window values come
    from the trigonometric interpolant.
    """
    if len(f.grids) != 1:
        raise ValueError("sl2_T_action acts on functions of one variable")
    E = _action_matrix(g, f.grids[0], mask_poles, pole_tol)
    return f.with_values(E @ f.values)


def Q_action(g: GroupElement, f: SampledFunction, mask_poles: bool = False, pole_tol: float = 1e-9) -> SampledFunction:
    """f(g.x1, g.x2) (a + c x1)^{-1} (a + c x2)^{-1}: T(g) along each axis."""
    if len(f.grids) != 2:
        raise ValueError("Q_action acts on functions of two variables")
    E1 = _action_matrix(g, f.grids[0], mask_poles, pole_tol)
    E2 = _action_matrix(g, f.grids[1], mask_poles, pole_tol)
    return f.with_values(E1 @ f.values @ E2.T)


def hyperboloid_weight(x1, x2):
    """Invariant density |x1 - x2|^{-2}."""
    d = np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)
    if np.any(d == 0):
        raise ValueError("hyperboloid_weight is undefined on the diagonal x1 = x2")
    out = 1.0 / d**2
    return out if np.ndim(out) else float(out)


@dataclass
class HyperboloidFunction:
    samples: SampledFunction

    def __post_init__(self):
        if len(self.samples.grids) != 2:
            raise ValueError("hyperboloid functions live on a 2D grid")
        x1, x2 = self.samples.mesh()
        if np.any(x1 == x2):
            raise ValueError("grid has nodes on the diagonal x1 = x2")

    def weights(self) -> np.ndarray:
        x1, x2 = self.samples.mesh()
        return self.samples.weight_tensor() * hyperboloid_weight(x1, x2)

    def norm(self) -> float:
        return math.sqrt(float(np.sum(self.weights() * np.abs(self.samples.values) ** 2)))


def J_map(f: HyperboloidFunction) -> SampledFunction:
    """f(x1, x2) (x1 - x2)^{-1}."""
    x1, x2 = f.samples.mesh()
    return f.samples.with_values(f.samples.values / (x1 - x2))


def J_inverse(F: SampledFunction) -> HyperboloidFunction:
    x1, x2 = F.mesh()
    if np.any(x1 == x2):
        raise ValueError("J is inverted only off the diagonal")
    return HyperboloidFunction(F.with_values(F.values * (x1 - x2)))


def gabor_packet(x, center: float, width: float, omega: float, phase: float = 0.0) -> np.ndarray:
    """exp(-(x-c)^2 / 2w^2) cos(omega (x - c) + phase): real, spectrum near ±omega."""
    u = np.asarray(x) - center
    return np.exp(-0.5 * (u / width) ** 2) * np.cos(omega * u + phase)


def hardy_test_functions(g1: Grid1D, g2: Grid1D) -> list:
    """Real band-limited functions of (x1, x2) with both-sign spectra in each variable.

    Frequencies times widths are >= 9, so the zero-frequency content is
    below 1e-17 of the norm and the block algebra is checked away from the
    half-weighted modes.
    """
    X1, X2 = np.meshgrid(g1.nodes, g2.nodes, indexing="ij")
    specs = [
        ((0.0, 1.5, 6.0), (0.5, 1.5, 6.5)),
        ((-1.0, 1.6, 7.0), (1.0, 1.4, 7.0)),
        ((1.0, 1.5, 6.5, 0.7), (-0.5, 1.8, 5.5, 0.3)),
    ]
    out = []
    for p1, p2 in specs:
        v = gabor_packet(X1, *p1) * gabor_packet(X2, *p2)
        out.append(SampledFunction([g1, g2], v))
    # a sum of a ++ -type complex packet and a real one
    cplx = (np.exp(-0.5 * (X1 / 1.5) ** 2 + 6.0j * X1) * np.exp(-0.5 * ((X2 - 0.5) / 1.5) ** 2 + 6.0j * X2)
            + gabor_packet(X1, 0.5, 1.5, 7.0) * gabor_packet(X2, -0.5, 1.5, 6.0))
    out.append(SampledFunction([g1, g2], cplx))
    return out


def sl2_near_identity(count: int = 10, scale: float = 0.05, seed: int = 12345) -> list:
    """Deterministic SL(2, R) sample exp(X) with |X| entries <= scale."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        h, e, f = rng.uniform(-scale, scale, 3)
        X = np.array([[h, e], [f, -h]])
        # exact exponential of a traceless 2x2 matrix
        disc = h * h + e * f
        r = math.sqrt(abs(disc))
        if disc > 0:
            c, s = math.cosh(r), math.sinh(r) / r
        elif disc < 0:
            c, s = math.cos(r), math.sin(r) / r
        else:
            c, s = 1.0, 1.0
        out.append(GroupElement.from_matrix(c * np.eye(2) + s * X))
    return out


def commutator_residual(g: GroupElement, f: SampledFunction, comp: HardyComponent) -> float:
    """||Q(g) P f - P Q(g) f|| / ||f||."""
    a = Q_action(g, block_project(f, comp))
    b = block_project(Q_action(g, f), comp, check=False)
    return (a.with_values(a.values - b.values)).norm() / f.norm()


@dataclass
class BlockReport:
    completeness: float
    orthogonality: float
    idempotence: float
    commutator: float
    j_isometry: float
    records: list = field(default_factory=list)

    def passes(self, algebra_tol: float = 1e-10, comm_tol: float = 1e-4) -> bool:
        return (max(self.completeness, self.orthogonality, self.idempotence, self.j_isometry) < algebra_tol
                and self.commutator < comm_tol)

    def as_dict(self) -> dict:
        return {"completeness": self.completeness, "orthogonality": self.orthogonality,
                "idempotence": self.idempotence, "commutator": self.commutator,
                "j_isometry": self.j_isometry, "records": self.records}


def hardy_block_report(n: int = 512, half_width: float = 40.0, elements=None) -> BlockReport:
    """Block algebra, the Q(g) commutators and the J isometry on the default test set."""
    g1 = line_grid(n, half_width)
    g2 = line_grid(n, half_width, shift=0.5)
    fs = hardy_test_functions(g1, g2)
    elements = sl2_near_identity() if elements is None else elements
    comps = HardyComponent.all()
    comp_err = orth_err = idem_err = comm_err = j_err = 0.0
    records = []
    for idx, f in enumerate(fs):
        nf = f.norm()
        parts = {c: block_project(f, c) for c in comps}
        total = sum(p.values for p in parts.values())
        comp_err = max(comp_err, f.with_values(total - f.values).norm() / nf)
        for c in comps:
            twice = block_project(parts[c], c, check=False)
            idem_err = max(idem_err, f.with_values(twice.values - parts[c].values).norm() / nf)
            for c2 in comps:
                if c2 != c:
                    cross = block_project(parts[c], c2, check=False)
                    orth_err = max(orth_err, cross.norm() / nf)
        hf = HyperboloidFunction(f)
        j_err = max(j_err, abs(J_map(hf).norm() - hf.norm()) / hf.norm())
        for gi, g in enumerate(elements):
            for c in comps:
                r = commutator_residual(g, f, c)
                comm_err = max(comm_err, r)
                records.append({"function": idx, "element": gi, "block": c.label, "commutator": r})
    return BlockReport(comp_err, orth_err, idem_err, comm_err, j_err, records)


# --------------------------------------------------------------------------
# O(1, q) on spheres


@dataclass(frozen=True)
class LorentzElement:
    """(1+q) x (1+q) matrix acting on row vectors (x0, x) and preserving -x0 y0 + x.y."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        n = m.shape[0]
        if m.shape != (n, n) or n < 3:
            raise ValueError("need a square matrix of size 1 + q with q >= 2")
        eta = np.diag([-1.0] + [1.0] * (n - 1))
        if np.max(np.abs(m @ eta @ m.T - eta)) > 1e-12 * max(1.0, np.max(np.abs(m)) ** 2):
            raise ValueError("matrix does not preserve the Lorentz form")
        if m[0, 0] <= 0:
            raise ValueError("a must be positive (orthochronous component)")
        if abs(np.linalg.det(m) - 1.0) > 1e-9:
            raise ValueError("det must be +1")
        object.__setattr__(self, "matrix", m)

    @property
    def q(self) -> int:
        return self.matrix.shape[0] - 1

    @property
    def a(self) -> float:
        return float(self.matrix[0, 0])

    @property
    def b(self) -> np.ndarray:
        return self.matrix[0, 1:]

    @property
    def c(self) -> np.ndarray:
        return self.matrix[1:, 0]

    @property
    def d(self) -> np.ndarray:
        return self.matrix[1:, 1:]

    def __matmul__(self, other: "LorentzElement") -> "LorentzElement":
        return LorentzElement(self.matrix @ other.matrix)

    @classmethod
    def identity(cls, q: int) -> "LorentzElement":
        return cls(np.eye(q + 1))

    @classmethod
    def boost(cls, q: int, axis: int, rapidity: float) -> "LorentzElement":
        """Boost mixing x0 with x_axis (axis in 1..q)."""
        m = np.eye(q + 1)
        ch, sh = math.cosh(rapidity), math.sinh(rapidity)
        m[0, 0] = m[axis, axis] = ch
        m[0, axis] = m[axis, 0] = sh
        return cls(m)

    @classmethod
    def rotation(cls, q: int, i: int, j: int, angle: float) -> "LorentzElement":
        """Rotation in the (x_i, x_j) plane, 1 <= i < j <= q."""
        m = np.eye(q + 1)
        cs, sn = math.cos(angle), math.sin(angle)
        m[i, i] = m[j, j] = cs
        m[i, j], m[j, i] = sn, -sn
        return cls(m)


def lorentz_sample(q: int, count: int = 5, rapidity: float = 0.5, seed: int = 7, fix_last: bool = False) -> list:
    """Products rotation . boost . rotation with bounded rapidity.

    With ``fix_last`` the elements lie in the subgroup acting only on
    (x0, x1, ..., x_{q-1}), which fixes the equator x_q = 0.
    """
    rng = np.random.default_rng(seed)
    top = q - 1 if fix_last else q
    out = []
    for _ in range(count):
        g = LorentzElement.identity(q)
        if top >= 2:
            i, j = sorted(rng.choice(np.arange(1, top + 1), 2, replace=False))
            g = g @ LorentzElement.rotation(q, int(i), int(j), rng.uniform(0, 2 * np.pi))
        g = g @ LorentzElement.boost(q, int(rng.integers(1, top + 1)), rng.uniform(-rapidity, rapidity))
        if top >= 2:
            i, j = sorted(rng.choice(np.arange(1, top + 1), 2, replace=False))
            g = g @ LorentzElement.rotation(q, int(i), int(j), rng.uniform(0, 2 * np.pi))
        out.append(g)
    return out


def lorentz_sphere_action(g: LorentzElement, x) -> tuple:
    """x -> (a + x c)^{-1} (b + x d) on S^{q-1}, with the dilatation (a + x c)^{-1}."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    den = g.a + x @ g.c
    if np.any(den <= 0):
        raise ValueError("a + x c must be positive on the sphere")
    y = (g.b[None, :] + x @ g.d) / den[:, None]
    return y, 1.0 / den


@dataclass
class SphereGrid:
    """Nodes and weights on S^{q-1} plus an equator rule on S^{q-2}."""

    q: int
    nodes: np.ndarray
    weights: np.ndarray
    eq_nodes: np.ndarray
    eq_weights: np.ndarray
    offset: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise ValueError("sphere weights must be positive")
        if abs(self.weights.sum() - sphere_area(self.q)) > 1e-10 * sphere_area(self.q):
            raise ValueError("sphere weights do not sum to the area")

    def __len__(self):
        return self.weights.size


def sphere_area(q: int) -> float:
    """Area of S^{q-1}."""
    return 2 * math.pi ** (q / 2) / math.gamma(q / 2)


def sphere_grid(q: int, n: int, offset: float = 0.0) -> SphereGrid:
    """q=2: n equispaced angles; q=3: n Gauss-Legendre nodes in cos(theta) x 2n azimuths.

    ``offset`` shifts the angle grid (in cells), so that a grid and its
    offset copy share no node.
    """
    if q == 2:
        th = 2 * np.pi * (np.arange(n) + offset) / n
        nodes = np.stack([np.cos(th), np.sin(th)], axis=1)
        w = np.full(n, 2 * np.pi / n)
        eq = np.array([[1.0], [-1.0]])
        eqw = np.ones(2)
        meta = {"angles": th}
    elif q == 3:
        z, wz = np.polynomial.legendre.leggauss(n)
        m = 2 * n
        phi = 2 * np.pi * (np.arange(m) + offset) / m
        Z, P = np.meshgrid(z, phi, indexing="ij")
        r = np.sqrt(1 - Z**2)
        nodes = np.stack([r * np.cos(P), r * np.sin(P), Z], axis=-1).reshape(-1, 3)
        w = (wz[:, None] * np.full(m, 2 * np.pi / m)[None, :]).ravel()
        eq = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        eqw = np.full(m, 2 * np.pi / m)
        meta = {"z": z, "phi": phi}
    else:
        raise ValueError("sphere grids are implemented for q in {2, 3}")
    return SphereGrid(q, nodes, w, eq, eqw, offset, meta)


CONVENTIONS = ("squared", "literal", "displayed")


@dataclass(frozen=True)
class ComplementaryParams:
    """Sphere dimension q, with a complementary parameter s or a principal sigma.

    ``convention`` selects how the kernel exponents are read:
      squared:   ambient kernel |x1-x2|^{-(q-1-2s)}, equator kernel the same
      literal:   ambient and equator kernel |x1-x2|^{-((q-1)/2-s)}
      displayed: ambient as literal, equator kernel |y1-y2|^{+((q-1)/2-s)}
    """

    q: int
    s: float | None = None
    sigma: float | None = None
    convention: str = "squared"

    def __post_init__(self):
        if self.q not in (2, 3):
            raise ValueError("q must be 2 or 3")
        if (self.s is None) == (self.sigma is None):
            raise ValueError("give exactly one of s (complementary) or sigma (principal)")
        if self.s is not None and not 0 < self.s < (self.q - 1) / 2:
            raise ValueError(f"complementary parameter must satisfy 0 < s < {(self.q - 1) / 2}")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}")

    @property
    def lam(self) -> complex:
        return complex(self.s) if self.s is not None else 1j * self.sigma

    @property
    def kappa(self) -> float:
        """Exponent of the ambient Gram kernel |x1 - x2|^{-kappa}."""
        self._need_s()
        if self.convention == "squared":
            return self.q - 1 - 2 * self.s
        return (self.q - 1) / 2 - self.s

    @property
    def kappa_equator(self) -> float:
        self._need_s()
        if self.convention == "displayed":
            return -((self.q - 1) / 2 - self.s)
        return self.kappa

    @property
    def invariant_lambda(self) -> float:
        """lambda for which the Gram kernel is T_lambda-invariant: (kappa - (q-1)) / 2."""
        return (self.kappa - (self.q - 1)) / 2

    def _need_s(self):
        if self.s is None:
            raise ValueError("kernel exponents need a complementary parameter s")


def funk_hecke(l: int, kappa: float, q: int) -> float:
    """Eigenvalue of f -> ∫ |x - y|^{-kappa} f(y) dy on degree-l harmonics of S^{q-1}."""
    d = q - 1
    if kappa == 0:
        return sphere_area(q) if l == 0 else 0.0
    if not kappa < d:
        raise ValueError("kernel is not integrable for kappa >= q - 1")
    return (2 ** (d - kappa) * math.pi ** (d / 2) * math.gamma(d / 2 - kappa / 2) * math.gamma(l + kappa / 2)
            / (math.gamma(kappa / 2) * math.gamma(l + d - kappa / 2)))


@dataclass
class SphereSamples:
    grid: SphereGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (len(self.grid),):
            raise ValueError("one value per sphere node")

    def interpolate(self, points: np.ndarray) -> np.ndarray:
        """Band-limited interpolant: trigonometric on S^1, spherical harmonics on S^2."""
        points = np.atleast_2d(points)
        g = self.grid
        if g.q == 2:
            n = len(g)
            th = np.arctan2(points[:, 1], points[:, 0])
            k = np.fft.fftfreq(n, 1.0 / n)
            c = np.fft.fft(self.values) / n
            shift = g.meta["angles"][0]
            E = np.exp(1j * np.outer(th - shift, k))
            if n % 2 == 0:
                E[:, n // 2] = np.cos(k[n // 2] * (th - shift))
            return E @ c
        from scipy.special import sph_harm_y

        z = g.meta["z"]
        lmax = len(z) - 1
        th_n = np.arccos(np.clip(g.nodes[:, 2], -1, 1))
        ph_n = np.arctan2(g.nodes[:, 1], g.nodes[:, 0])
        th_p = np.arccos(np.clip(points[:, 2], -1, 1))
        ph_p = np.arctan2(points[:, 1], points[:, 0])
        out = np.zeros(points.shape[0], dtype=complex)
        for l in range(lmax + 1):
            for m in range(-l, l + 1):
                coef = np.sum(g.weights * self.values * np.conj(sph_harm_y(l, m, th_n, ph_n)))
                out += coef * sph_harm_y(l, m, th_p, ph_p)
        return out


def _evaluate(f, points: np.ndarray) -> np.ndarray:
    if isinstance(f, SphereSamples):
        return f.interpolate(points)
    return np.asarray(f(points), dtype=complex)


def comp_action_values(p: ComplementaryParams, g: LorentzElement, f, points: np.ndarray,
                       lam: complex | None = None) -> np.ndarray:
    """(a + x c)^{-(q-1)/2 + lam} f(x . g) at the given points."""
    if g.q != p.q:
        raise ValueError("group element and sphere dimension differ")
    lam = p.lam if lam is None else lam
    y, dil = lorentz_sphere_action(g, points)
    expo = -(p.q - 1) / 2 + lam
    return (1.0 / dil) ** expo * _evaluate(f, y)


def comp_action(p: ComplementaryParams, g: LorentzElement, f, grid: SphereGrid, lam: complex | None = None) -> SphereSamples:
    """T_lambda(g) f on the grid nodes; f is a callable on points or SphereSamples."""
    return SphereSamples(grid, comp_action_values(p, g, f, grid.nodes, lam))


def _gram_kernel(x: np.ndarray, y: np.ndarray, kappa: float) -> np.ndarray:
    d = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=-1)
    return d ** (-kappa)


def comp_gram_matrix(p: ComplementaryParams, fs: list, n: int, chunk: int = 1024) -> np.ndarray:
    """Gram matrix G_ij = ∫∫ f_i(x1) conj f_j(x2) |x1 - x2|^{-kappa} dx1 dx2.

    Offset product rule (the second copy of the sphere is the grid shifted by
    half a cell, so x1 = x2 never occurs) with the singular part corrected
    row by row: the exact kernel mass ∫ |x - y|^{-kappa} dy minus its
    discrete row sum multiplies f_i conj f_j at the row node.  The
    remaining error is O(h^{3 - kappa}) on S^1.
    """
    kappa = p.kappa
    grid = sphere_grid(p.q, n, 0.0)
    shifted = sphere_grid(p.q, n, 0.5)
    F = np.array([_evaluate(f, grid.nodes) for f in fs])
    Fs = np.array([_evaluate(f, shifted.nodes) for f in fs])
    mass = funk_hecke(0, kappa, p.q)
    G = np.zeros((len(fs), len(fs)), dtype=complex)
    for i0 in range(0, len(grid), chunk):
        sl = slice(i0, i0 + chunk)
        K = _gram_kernel(grid.nodes[sl], shifted.nodes, kappa)
        row = K @ shifted.weights
        wF = F[:, sl] * grid.weights[sl]
        G += wF @ K @ (shifted.weights[:, None] * np.conj(Fs.T))
        G += (wF * (mass - row)) @ np.conj(F[:, sl].T)
    return G


def comp_gram(p: ComplementaryParams, f1, f2, n: int = 128) -> complex:
    """Complementary-series form of f1 and f2 (callables or SphereSamples)."""
    return complex(comp_gram_matrix(p, [f1, f2], n)[0, 1])


def gram_test_functions(q: int) -> list:
    """12 smooth, non-orthogonal harmonic-like functions on S^{q-1}."""
    if q == 2:
        out = [lambda x: np.ones(len(x))]
        for k in range(1, 6):
            out.append(lambda x, k=k: np.real((x[:, 0] + 1j * x[:, 1]) ** k))
            out.append(lambda x, k=k: np.imag((x[:, 0] + 1j * x[:, 1]) ** k))
        # not a finite harmonic sum: keeps the smallest eigenvalue well above quadrature error
        out.append(lambda x: 1.0 / (1.5 - x[:, 0] - 0.3 * x[:, 1]))
        return out
    dirs = _fibonacci_directions(6)
    out = [lambda x: np.ones(len(x)), lambda x: x[:, 0], lambda x: x[:, 1], lambda x: x[:, 2],
           lambda x: x[:, 0] * x[:, 1], lambda x: 3 * x[:, 2] ** 2 - 1]
    for e in dirs:
        out.append(lambda x, e=e: np.exp(1.2 * (x @ e)))
    return out


def _fibonacci_directions(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    phi = np.pi * (1 + 5**0.5) * k
    r = np.sqrt(1 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


@dataclass
class GramReport:
    q: int
    s: float
    convention: str
    kappa: float
    invariant_lambda: float
    min_eigenvalue: float
    hermitian_defect: float
    invariance: float
    displayed_action_defect: float
    refinement_order: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def gram_report(q: int, s: float, convention: str = "squared", n: int | None = None,
                elements=None) -> GramReport:
    """Positivity, invariance under T_{invariant_lambda}, and the defect under T_s itself."""
    n = (256 if q == 2 else 56) if n is None else n
    p = ComplementaryParams(q, s=s, convention=convention)
    fs = gram_test_functions(q)
    G = comp_gram_matrix(p, fs, n)
    H = 0.5 * (G + G.conj().T)
    herm = float(np.max(np.abs(G - G.conj().T)) / np.max(np.abs(G)))
    eig = float(np.min(np.linalg.eigvalsh(H)))
    elements = lorentz_sample(q, 3) if elements is None else elements
    pair = [fs[1], fs[-1]]
    base = comp_gram_matrix(p, pair, n)
    inv = disp = 0.0
    for g in elements:
        for lam, slot in ((p.invariant_lambda, "inv"), (p.s, "disp")):
            moved = [(lambda x, f=f, g=g, lam=lam: comp_action_values(p, g, f, x, lam)) for f in pair]
            Gm = comp_gram_matrix(p, moved, n)
            r = float(np.max(np.abs(Gm - base)) / np.max(np.abs(base)))
            if slot == "inv":
                inv = max(inv, r)
            else:
                disp = max(disp, r)
    # measured order between n, 2n and 4n on the (1, last) entry
    vals = [comp_gram_matrix(p, pair, m)[0, 1] for m in (n // 4, n // 2, n)]
    d1, d2 = abs(vals[1] - vals[0]), abs(vals[2] - vals[1])
    order = float(math.log2(d1 / d2)) if d2 > 0 and d1 > 0 else float("inf")
    return GramReport(q, s, convention, p.kappa, p.invariant_lambda, eig, herm, inv, disp, order)


# --------------------------------------------------------------------------
# equator embeddings


@dataclass
class EquatorReport:
    q: int
    s: float
    convention: str
    deriv_order: int
    kappa: float
    levels: list
    values: list
    order: float
    verdict: str
    value: complex | None
    stated_threshold: float

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["values"] = [complex(v) for v in self.values]
        d["value"] = None if self.value is None else complex(self.value)
        return d


def _equator_points(q: int, n: int, offset: float, height: float = 0.0) -> tuple:
    """Equator rule lifted to latitude ``height`` (radians) along the normal x_q."""
    if q == 2:
        y = np.array([[1.0], [-1.0]])
        w = np.ones(2)
    else:
        phi = 2 * np.pi * (np.arange(n) + offset) / n
        y = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        w = np.full(n, 2 * np.pi / n)
    x = np.concatenate([math.cos(height) * y, np.full((len(y), 1), math.sin(height))], axis=1)
    return x, y, w


def _equator_sum(q: int, kappa: float, phi1, phi2, n: int, deriv_order: int) -> complex:
    if q == 2:
        # S^0: two points with counting measure, so coincident pairs are part of the sum
        x, y, w = _equator_points(2, 0, 0.0)
        d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
        with np.errstate(divide="ignore"):
            K = np.where(d > 0, d ** (-kappa), 0.0 if kappa < 0 else (1.0 if kappa == 0 else np.inf))
        if deriv_order:
            raise ValueError("normal-derivative pairing on S^0 is not a finite sum; use q = 3")
        return complex(np.asarray(phi1(y)) @ K @ np.conj(np.asarray(phi2(y))))
    if deriv_order == 0:
        x1, y1, w1 = _equator_points(q, n, 0.0)
        x2, y2, w2 = _equator_points(q, n, 0.5)
        K = _gram_kernel(x1, x2, kappa)
        return complex((w1 * phi1(y1)) @ K @ (w2 * np.conj(phi2(y2))))
    # mixed normal derivative by second-order central differences at latitude ±eps, eps ~ cell size
    eps = math.pi / n
    total = 0.0 + 0.0j
    for h1, s1 in ((eps, 1), (-eps, -1)):
        for h2, s2 in ((eps, 1), (-eps, -1)):
            x1, y1, w1 = _equator_points(q, n, 0.0, h1)
            x2, y2, w2 = _equator_points(q, n, 0.5, h2)
            K = _gram_kernel(x1, x2, kappa)
            total += s1 * s2 * ((w1 * phi1(y1)) @ K @ (w2 * np.conj(phi2(y2))))
    return complex(total / (4 * eps * eps))


STATED_EQUATOR_THRESHOLD = {0: 0.5, 1: 1.5}


def equator_delta_gram(p: ComplementaryParams, phi1=None, phi2=None, deriv_order: int = 0,
                       levels=(64, 128, 256, 512, 1024)) -> EquatorReport:
    """Pairing of phi delta_Eq (or its normal derivative) with itself under the Gram kernel.

    The equator double integral is taken with offset rules at increasing
    resolution; the value is accepted only if the increments shrink
    geometrically (measured order > 0), otherwise a divergence report is
    returned with value None.
    """
    if deriv_order not in (0, 1):
        raise ValueError("deriv_order is 0 or 1")
    one = lambda y: np.ones(len(y))  # noqa: E731
    phi1 = one if phi1 is None else phi1
    phi2 = phi1 if phi2 is None else phi2
    kappa = p.kappa_equator
    stated = STATED_EQUATOR_THRESHOLD[deriv_order]
    if p.q == 2:
        v = _equator_sum(2, kappa, phi1, phi2, 0, deriv_order)
        finite = np.isfinite(v.real) and np.isfinite(v.imag)
        return EquatorReport(2, p.s, p.convention, deriv_order, kappa, [2], [v], float("inf") if finite else -float("inf"),
                             "exact" if finite else "diverged", v if finite else None, stated)
    vals = [_equator_sum(p.q, kappa, phi1, phi2, n, deriv_order) for n in levels]
    inc = np.abs(np.diff(vals))
    ratios = inc[:-1] / np.where(inc[1:] > 0, inc[1:], np.finfo(float).tiny)
    order = float(np.log2(ratios[-1])) if len(ratios) else 0.0
    converged = bool(np.all(ratios > 1.0)) and order > 0
    value = None
    if converged:
        # Richardson step with the measured order
        r = 2.0**order
        value = vals[-1] + (vals[-1] - vals[-2]) / (r - 1)
    return EquatorReport(p.q, p.s, p.convention, deriv_order, kappa, list(levels), vals, order,
                         "converged" if converged else "diverged", value, stated)


@dataclass
class ThresholdReport:
    q: int
    convention: str
    deriv_order: int
    s_values: list
    orders: list
    verdicts: list
    measured_threshold: float | None
    stated_threshold: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def equator_threshold(q: int = 3, convention: str = "squared", deriv_order: int = 0, s_values=None,
                      levels=(64, 128, 256, 512, 1024)) -> ThresholdReport:
    """Scan s and locate where the equator pairing stops stabilizing.

    The threshold is the zero of the measured refinement order, linearly
    interpolated between the last diverging and the first converging s;
    None when the scan shows no transition.
    """
    top = (q - 1) / 2
    s_values = list(np.linspace(0.05 * top, 0.95 * top, 19)) if s_values is None else list(s_values)
    orders, verdicts = [], []
    for s in s_values:
        r = equator_delta_gram(ComplementaryParams(q, s=float(s), convention=convention), deriv_order=deriv_order, levels=levels)
        orders.append(r.order)
        verdicts.append(r.verdict)
    thr = None
    for i in range(1, len(s_values)):
        if verdicts[i - 1] == "diverged" and verdicts[i] == "converged":
            o0, o1 = orders[i - 1], orders[i]
            t = 0.0 if o1 == o0 else float(np.clip(-o0 / (o1 - o0), 0, 1))
            thr = float(s_values[i - 1] + t * (s_values[i] - s_values[i - 1]))
            break
    return ThresholdReport(q, convention, deriv_order, [float(s) for s in s_values], orders, verdicts,
                           thr, STATED_EQUATOR_THRESHOLD[deriv_order])


# --------------------------------------------------------------------------
# restriction multiplier


def restriction_J(p: ComplementaryParams, f: SphereSamples) -> SphereSamples:
    """|x_q|^{(q-1)/2 - s} f(x)."""
    xq = f.grid.nodes[:, -1]
    if np.any(np.abs(xq) < 1e-12):
        raise ValueError("grid has nodes on the equator x_q = 0")
    return SphereSamples(f.grid, np.abs(xq) ** ((p.q - 1) / 2 - p.s) * f.values)


def substitution_action(g: LorentzElement, f, points: np.ndarray) -> np.ndarray:
    """f(x . g) with no multiplier: T_lambda at lambda = (q-1)/2."""
    y, _ = lorentz_sphere_action(g, points)
    return _evaluate(f, y)


@dataclass
class IntertwiningReport:
    q: int
    s: float
    residual: float
    residual_vs_lambda0: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def intertwining_report(q: int, s: float, f=None, n: int | None = None, elements=None) -> IntertwiningReport:
    """J T_s(h) f against (substitution action)(h) J f on the equator-fixing subgroup.

    Also records the residual against the multiplier (a + x c)^{-(q-1)/2}
    (lambda = 0 in the action formula), which does not intertwine.
    """
    n = (64 if q == 2 else 24) if n is None else n
    p = ComplementaryParams(q, s=s)
    grid = sphere_grid(q, n, 0.5 if q == 2 else 0.0)
    f = (lambda x: np.exp(0.7 * x[:, 0] - 0.4 * x[:, -1])) if f is None else f
    elements = lorentz_sample(q, 4, fix_last=True) if elements is None else elements
    beta = (q - 1) / 2 - s
    xq = np.abs(grid.nodes[:, -1])
    res = res0 = 0.0
    for h in elements:
        left = xq**beta * comp_action_values(p, h, f, grid.nodes)
        Jf = lambda x: np.abs(x[:, -1]) ** beta * _evaluate(f, x)  # noqa: E731
        right = substitution_action(h, Jf, grid.nodes)
        right0 = comp_action_values(p, h, Jf, grid.nodes, lam=0.0)
        nrm = math.sqrt(float(np.sum(grid.weights * np.abs(left) ** 2)))
        res = max(res, math.sqrt(float(np.sum(grid.weights * np.abs(left - right) ** 2))) / nrm)
        res0 = max(res0, math.sqrt(float(np.sum(grid.weights * np.abs(left - right0) ** 2))) / nrm)
    return IntertwiningReport(q, s, res, res0)

"""Kontorovich-Lebedev transform on L^2(R+, dx/x), the operators
D = (x d/dx)^2 - x^2 and M f(s) = (f(s + i) - f(s - i)) / (i s), and the
bispectral check that K_{is}(x) diagonalizes both.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .numerics import Grid1D, SampledFunction, fd_derivative, gauss_legendre
from .specfun import AccuracyWarning, kl_weight, macdonald_bessel

X_BOX = (1e-3, 40.0)
S_BOX = (1e-3, 25.0)
TAIL_WARN = 0.01

# classical value of the round-trip constant for the weight |Gamma(is)|^-2;
# used only as a reference in reports, never as the calibration itself
CLASSICAL_CALIBRATION = 2.0 / math.pi


def half_line_grid(n: int = 320, box=X_BOX) -> Grid1D:
    """Gauss-Legendre in y = log x: nodes are x values, weights carry dx/x."""
    g = gauss_legendre(n, math.log(box[0]), math.log(box[1]))
    return Grid1D(np.exp(g.nodes), g.weights)


def s_grid(n: int = 160, box=S_BOX) -> Grid1D:
    return gauss_legendre(n, *box)


@dataclass
class HalfLineFunction:
    """A function of x > 0, vectorized, with its truncation box."""

    fn: object
    name: str
    x_box: tuple = X_BOX
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n2 = self.l2_norm_sq()
        if not math.isfinite(n2):
            raise ValueError(f"{self.name}: ∫|f|^2 dx/x is not finite on {self.x_box}")

    def __call__(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)))

    def l2_norm_sq(self, n: int = 400) -> float:
        g = half_line_grid(n, self.x_box)
        return float(np.sum(g.weights * np.abs(self(g.nodes)) ** 2))


def power_exp(a: float, b: float, c: float) -> HalfLineFunction:
    """x^a exp(-b x - c / x)."""
    return HalfLineFunction(lambda x: x**a * np.exp(-b * x - c / x), f"x^{a} exp(-{b}x-{c}/x)",
                            meta={"family": "power_exp", "a": a, "b": b, "c": c})


def log_gaussian(m: float, w: float) -> HalfLineFunction:
    """exp(-(log x - m)^2 / w)."""
    return HalfLineFunction(lambda x: np.exp(-((np.log(x) - m) ** 2) / w), f"loggauss({m},{w})",
                            meta={"family": "log_gaussian", "m": m, "w": w})


def half_line_family() -> list:
    return [power_exp(0, 1, 1), power_exp(1, 1, 1), power_exp(2, 2, 0.5),
            power_exp(0.5, 1.5, 2), log_gaussian(0.5, 0.5), log_gaussian(0.0, 1.0)]


_TABLES: dict = {}


def bessel_table(s: np.ndarray, x: np.ndarray) -> np.ndarray:
    """K_{i s_j}(x_k) as an (s, x) array, memoized on the node bytes."""
    s = np.ascontiguousarray(s, dtype=float)
    x = np.ascontiguousarray(x, dtype=float)
    key = (s.tobytes(), x.tobytes())
    if key not in _TABLES:
        if len(_TABLES) > 16:
            _TABLES.clear()
        _TABLES[key] = macdonald_bessel(s[:, None], x[None, :])
    return _TABLES[key]


@dataclass
class KLSamples(SampledFunction):
    tails: dict = field(default_factory=dict)


def _kernel_tails(f: HalfLineFunction, box, n: int = 200) -> dict:
    # |K_{is}(x)| <= K_0(x) for real s bounds the truncated pieces
    def piece(lo, hi):
        g = gauss_legendre(n, lo, hi)
        x = np.exp(g.nodes)
        return float(np.sum(g.weights * np.abs(f(x)) * macdonald_bessel(0.0, x, check=False)))

    ylo, yhi = math.log(box[0]), math.log(box[1])
    inside = piece(ylo, yhi)
    low = piece(ylo - 15.0, ylo)
    high = piece(yhi, yhi + 3.0)
    scale = inside if inside > 0 else 1.0
    return {"low": low / scale, "high": high / scale, "bound_inside": inside}


def kl_direct(f: HalfLineFunction, sgrid: Grid1D, quad: int | Grid1D = 320) -> KLSamples:
    """Samples of Kf(s) = ∫ K_{is}(x) f(x) dx/x on the truncation box of f."""
    xg = quad if isinstance(quad, Grid1D) else half_line_grid(int(quad), f.x_box)
    K = bessel_table(sgrid.nodes, xg.nodes)
    vals = K @ (xg.weights * f(xg.nodes))
    tails = _kernel_tails(f, f.x_box)
    worst = max(tails["low"], tails["high"])
    if worst > TAIL_WARN:
        warnings.warn(f"{f.name}: truncation tail estimate {worst:.2e} exceeds {TAIL_WARN:.0%}",
                      AccuracyWarning, stacklevel=2)
    return KLSamples([sgrid], vals, tails)


def kl_inverse(g: SampledFunction, xgrid: Grid1D, calibration: float) -> SampledFunction:
    """calibration * ∫ |Gamma(is)|^-2 K_{is}(x) g(s) ds on xgrid nodes."""
    sg = g.grids[0]
    if np.any(sg.nodes <= 0):
        raise ValueError("kl_inverse needs samples on s > 0")
    K = bessel_table(sg.nodes, xgrid.nodes)
    vals = calibration * ((sg.weights * kl_weight(sg.nodes) * g.values) @ K)
    return SampledFunction([xgrid], vals)


@dataclass
class CalibrationReport:
    constant: float
    per_function: dict
    spread: float
    round_trip: dict
    parseval: dict
    parseval_consistency: float
    tails: dict

    def as_dict(self) -> dict:
        return {"constant": self.constant, "classical": CLASSICAL_CALIBRATION, "per_function": self.per_function,
                "spread": self.spread, "round_trip": self.round_trip, "parseval": self.parseval,
                "parseval_consistency": self.parseval_consistency, "tails": self.tails}


def calibrate(functions=None, sgrid: Grid1D | None = None, xgrid: Grid1D | None = None) -> CalibrationReport:
    """Measure the round-trip constant per function, its spread, and the KL Parseval constant.

    For each f the constant is the least-squares c minimizing ||f - c R f||
    in L^2(dx/x) with R the uncalibrated inverse of the direct transform.
    """
    functions = half_line_family() if functions is None else functions
    sgrid = s_grid() if sgrid is None else sgrid
    xgrid = half_line_grid() if xgrid is None else xgrid
    per, pars, tails, cached = {}, {}, {}, {}
    for f in functions:
        kf = kl_direct(f, sgrid, xgrid)
        rf = kl_inverse(kf, xgrid, 1.0).values
        fx = f(xgrid.nodes)
        w = xgrid.weights
        per[f.name] = float(np.real(np.sum(w * np.conj(rf) * fx)) / np.sum(w * np.abs(rf) ** 2))
        norm2 = float(np.sum(w * np.abs(fx) ** 2))
        dens = sgrid.weights * kl_weight(sgrid.nodes) * np.abs(kf.values) ** 2
        spec2 = float(np.sum(dens))
        pars[f.name] = norm2 / spec2
        # spectral mass in the outer 10% of the s box flags s-truncation
        lo, hi = sgrid.nodes[0], sgrid.nodes[-1]
        outer = sgrid.nodes > hi - 0.1 * (hi - lo)
        tails[f.name] = {**kf.tails, "s_high": float(np.sum(dens[outer]) / spec2)}
        cached[f.name] = (rf, fx, w)
    consts = np.array(list(per.values()))
    c = float(np.mean(consts))
    spread = float(np.max(np.abs(consts / c - 1)))
    rt = {}
    for name, (rf, fx, w) in cached.items():
        rt[name] = float(np.sqrt(np.sum(w * np.abs(c * rf - fx) ** 2) / np.sum(w * np.abs(fx) ** 2)))
    pc = float(np.max(np.abs(np.array(list(pars.values())) / c - 1)))
    return CalibrationReport(c, per, spread, rt, pars, pc, tails)


# strip functions ------------------------------------------------------------

@dataclass
class StripFunction:
    """Closed-form function of complex s on |Im s| <= 1 + delta.

    The decay certificate asserts |F(s)| <= C exp(-rate |Re s|) |Re s|^(-3/2 - eps)
    and is checked on 50 points of horizontal rays at construction.
    """

    fn: object
    name: str
    delta: float
    C: float
    eps: float = 0.5
    rate: float = math.pi
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        worst = self.certificate_margin()
        if worst > 1.0:
            raise ValueError(f"{self.name}: decay certificate violated by factor {worst:.3g}")

    def __call__(self, s):
        return self.fn(np.asarray(s, dtype=complex))

    def sample_points(self) -> np.ndarray:
        re = np.linspace(1.0, 12.0, 10)
        im = np.linspace(-1.0, 1.0, 5)
        return (re[:, None] + 1j * im[None, :]).ravel()

    def bound(self, s) -> np.ndarray:
        r = np.abs(np.real(s))
        return self.C * np.exp(-self.rate * r) * r ** (-1.5 - self.eps)

    def certificate_margin(self) -> float:
        """max |F| / bound over the sample points (<= 1 means the bound holds)."""
        s = self.sample_points()
        return float(np.max(np.abs(self(s)) / self.bound(s)))


def _certify(fn, rate: float, eps: float, im_max: float, re_max: float = 40.0, n: int = 800, levels: int = 9) -> float:
    # C as the sup of |F| / envelope on a dense set of horizontal lines in the strip
    re = np.linspace(0.5, re_max, n)
    worst = 0.0
    for y in np.linspace(-im_max, im_max, levels):
        s = re + 1j * y
        env = np.exp(-rate * re) * re ** (-1.5 - eps)
        worst = max(worst, float(np.max(np.abs(fn(s)) / env)))
    return worst


def gaussian_cos(alpha: float, beta: float, delta: float = 0.5) -> StripFunction:
    """exp(-alpha s^2) cos(beta s), alpha > 0."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")

    def fn(s):
        return np.exp(-alpha * s * s) * np.cos(beta * s)

    C = _certify(fn, math.pi, 0.5, 1.0 + delta)
    return StripFunction(fn, f"exp(-{alpha}s^2)cos({beta}s)", delta, C,
                         meta={"family": "gaussian_cos", "alpha": alpha, "beta": beta})


def bessel_in_order(x0: float, delta: float = 0.5) -> StripFunction:
    """s -> K_{is}(x0) through the complex-order Macdonald integral.

    Decays like exp(-pi |s| / 2), so its certificate uses rate pi/2.
    """

    def fn(s):
        return macdonald_bessel(s, x0)

    rate = math.pi / 2
    C = _certify(fn, rate, 0.5, 1.0, re_max=S_BOX[1], n=120, levels=5)
    return StripFunction(fn, f"K_is({x0})", delta, C, rate=rate, meta={"family": "bessel_in_order", "x0": x0})


def strip_family() -> list:
    return [gaussian_cos(1.0, 0.0), gaussian_cos(0.5, 1.0), gaussian_cos(2.0, 3.0), gaussian_cos(0.8, 2.0)]


def apply_M(F, s) -> np.ndarray:
    """(F(s + i) - F(s - i)) / (i s) for real s != 0; F is a StripFunction or any callable."""
    s = np.asarray(s, dtype=float)
    if np.any(s == 0):
        raise ValueError("apply_M is not defined at s = 0")
    out = (F(s + 1j) - F(s - 1j)) / (1j * s)
    return out if np.ndim(out) else complex(out)


def M_image(F: StripFunction, delta: float | None = None) -> StripFunction:
    """M F as a strip function on a narrower strip; certified like any other."""

    def fn(s):
        return (F(s + 1j) - F(s - 1j)) / (1j * s)

    d = F.delta if delta is None else delta
    C = _certify(fn, F.rate, F.eps, 1.0)
    return StripFunction(fn, f"M[{F.name}]", d, C, F.eps, F.rate, {"family": "M_image", "parent": F.meta})


# differential operator ----------------------------------------------------

def apply_D(f, x, df=None, d2f=None, h: float = 1e-3):
    """x^2 f'' + x f' - x^2 f at x > 0.

    Uses the supplied derivatives when given, otherwise five-point
    differences with a step relative to x.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("apply_D needs x > 0")
    if df is None or d2f is None:
        step = h * x
        d1 = fd_derivative(f, x, step, 1) if df is None else df(x)
        d2 = fd_derivative(f, x, step, 2) if d2f is None else d2f(x)
    else:
        d1, d2 = df(x), d2f(x)
    return x * x * d2 + x * d1 - x * x * f(x)


# bispectral report --------------------------------------------------------

# signs of the identities in their nominal statement:
# D -> multiplication by s^2, M -> multiplication by 2/x
NOMINAL_SIGNS = {"D": 1, "M": 1}


@dataclass
class BispectralReport:
    rows: list
    d_sign: int
    m_sign: int
    d_consistent: bool
    m_consistent: bool
    d_max: float
    m_max: float

    @property
    def signs_vs_nominal(self) -> dict:
        return {"D": {"measured": self.d_sign, "nominal": NOMINAL_SIGNS["D"], "agrees": self.d_sign == NOMINAL_SIGNS["D"]},
                "M": {"measured": self.m_sign, "nominal": NOMINAL_SIGNS["M"], "agrees": self.m_sign == NOMINAL_SIGNS["M"]}}

    def passes(self, tol: float = 1e-8) -> bool:
        return self.d_consistent and self.m_consistent and self.d_max < tol and self.m_max < tol

    def as_dict(self) -> dict:
        return {"d_sign": self.d_sign, "m_sign": self.m_sign, "d_consistent": self.d_consistent,
                "m_consistent": self.m_consistent, "d_max": self.d_max, "m_max": self.m_max,
                "signs_vs_nominal": self.signs_vs_nominal, "rows": self.rows}

    COLUMNS = ("x", "tau", "K", "d_residual", "m_residual", "d_sign", "m_sign")

    def to_text(self) -> str:
        lines = ["  ".join(f"{c:>12}" for c in self.COLUMNS)]
        for r in self.rows:
            lines.append("  ".join(f"{r[c]:>12.5g}" if isinstance(r[c], float) else f"{r[c]:>12}" for c in self.COLUMNS))
        lines.append(f"D eigenvalue sign {self.d_sign:+d} (consistent: {self.d_consistent}), max residual {self.d_max:.3e}")
        lines.append(f"M multiplier sign {self.m_sign:+d} (consistent: {self.m_consistent}), max residual {self.m_max:.3e}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([f"{r[c]:.17g}" if isinstance(r[c], float) else r[c] for c in self.COLUMNS])
        return buf.getvalue()


def _sign_of(ratio: np.ndarray) -> np.ndarray:
    return np.where(np.real(ratio) >= 0, 1, -1)


def bispectral_report(taus=(0.5, 1.0, 2.0), xs=None) -> BispectralReport:
    """Residuals of D K_{iτ} = σ_D τ² K_{iτ} and M K_{i·}(x) = σ_M (2/x) K_{i·}(x).

    σ_D and σ_M are measured pointwise from the ratios, then a single global
    sign is fixed by majority and residuals are taken against it, relative to
    max |K| over the grid.
    """
    xs = np.linspace(0.2, 5.0, 25) if xs is None else np.asarray(xs, dtype=float)
    taus = np.asarray(taus, dtype=float)
    T, X = np.meshgrid(taus, xs, indexing="ij")
    K = macdonald_bessel(T, X)
    dK = apply_D(lambda x: macdonald_bessel(T, x), X,
                 df=lambda x: macdonald_bessel(T, x, deriv=1), d2f=lambda x: macdonald_bessel(T, x, deriv=2))
    mK = apply_M(lambda s: macdonald_bessel(s, X), T)
    scale = float(np.max(np.abs(K)))
    ok = np.abs(K) > 1e-3 * scale
    d_pt = _sign_of(dK / (T * T * np.where(ok, K, 1.0)))
    m_pt = _sign_of(mK / ((2 / X) * np.where(ok, K, 1.0)))
    d_sign = 1 if np.sum(d_pt[ok]) >= 0 else -1
    m_sign = 1 if np.sum(m_pt[ok]) >= 0 else -1
    d_res = np.abs(dK - d_sign * T * T * K) / scale
    m_res = np.abs(mK - m_sign * (2 / X) * K) / scale
    rows = []
    for i, tau in enumerate(taus):
        for j, x in enumerate(xs):
            rows.append({"x": float(x), "tau": float(tau), "K": float(K[i, j]), "d_residual": float(d_res[i, j]),
                         "m_residual": float(m_res[i, j]), "d_sign": int(d_pt[i, j]) if ok[i, j] else 0,
                         "m_sign": int(m_pt[i, j]) if ok[i, j] else 0})
    return BispectralReport(rows, d_sign, m_sign, bool(np.all(d_pt[ok] == d_sign)), bool(np.all(m_pt[ok] == m_sign)),
                            float(d_res.max()), float(m_res.max()))

"""Special functions: signed powers, log-Gamma, Macdonald functions of imaginary
order and the Plancherel densities of GL(2, R).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .numerics import legendre_reference


class AccuracyWarning(UserWarning):
    """Evaluation requested outside the validated accuracy box."""


@dataclass(frozen=True)
class SignedExponent:
    mu: complex
    eps: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mu", complex(self.mu))
        object.__setattr__(self, "eps", int(self.eps) % 2)

    def __mul__(self, other):
        return SignedExponent(self.mu + other.mu, self.eps + other.eps)


def signed_power(x, e: SignedExponent | tuple):
    """``|x|**mu * sgn(x)**eps`` for real nonzero ``x`` (vectorized)."""
    if not isinstance(e, SignedExponent):
        e = SignedExponent(*e)
    x = np.asarray(x, dtype=float)
    if np.any(x == 0):
        raise ValueError("signed power is undefined at x = 0")
    out = np.exp(e.mu * np.log(np.abs(x)))
    if e.eps:
        out = out * np.sign(x)
    return out if out.ndim else complex(out)


# Lanczos approximation, g = 7, n = 9
_LANCZOS_G = 7.0
_LANCZOS_COEF = np.array(
    [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ]
)
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def _log_gamma_right(z: np.ndarray) -> np.ndarray:
    zm = z - 1.0
    series = np.full_like(zm, _LANCZOS_COEF[0])
    for k in range(1, _LANCZOS_COEF.size):
        series = series + _LANCZOS_COEF[k] / (zm + k)
    t = zm + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (zm + 0.5) * np.log(t) - t + np.log(series)


def _log_sin_pi(z: np.ndarray) -> np.ndarray:
    # log(sin(pi z)) without overflow for large |Im z|
    y = z.imag
    big = np.abs(y) > 20
    out = np.empty_like(z)
    zs = z[~big]
    out[~big] = np.log(np.sin(np.pi * zs))
    zb = z[big]
    up = zb.imag > 0
    # sin(pi z) = (i/2) e^{-i pi z} (1 - e^{2 i pi z}) for Im z > 0, mirrored below
    hi = -math.log(2) + 0.5j * np.pi - 1j * np.pi * zb + np.log1p(-np.exp(2j * np.pi * zb))
    lo = -math.log(2) - 0.5j * np.pi + 1j * np.pi * zb + np.log1p(-np.exp(-2j * np.pi * zb))
    out[big] = np.where(up, hi, lo)
    return out


def log_gamma(z):
    """Log-Gamma for complex ``z`` away from the poles.

    Lanczos approximation for Re z >= 1/2 and the reflection formula below.
    The imaginary part is the continuous branch for Re z >= 1/2 and is only
    meaningful mod 2*pi elsewhere.
    """
    z = np.asarray(z, dtype=complex)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    re = z.real
    pole = (z.imag == 0) & (re <= 0) & (re == np.round(re))
    if np.any(pole):
        raise ValueError("log_gamma has poles at non-positive integers")
    out = np.empty_like(z)
    right = re >= 0.5
    out[right] = _log_gamma_right(z[right])
    left = ~right
    if np.any(left):
        zl = z[left]
        out[left] = math.log(math.pi) - _log_sin_pi(zl) - _log_gamma_right(1.0 - zl)
    return complex(out[0]) if scalar else out


def gamma(z):
    return np.exp(log_gamma(z))


def kl_weight(s):
    """``1 / |Gamma(i s)|**2`` for s > 0."""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ValueError("kl_weight needs s > 0")
    out = np.exp(-2.0 * np.real(log_gamma(1j * s)))
    return out if out.ndim else float(out)


def kl_weight_closed(s):
    """``s sinh(pi s) / pi``: the reflection-formula closed form."""
    s = np.asarray(s, dtype=float)
    return s * np.sinh(np.pi * s) / np.pi


# validated box for macdonald_bessel
BESSEL_X_BOX = (1e-3, 40.0)
BESSEL_TAU_BOX = (0.0, 25.0)

_PANEL = 16
PANEL_PHASE = 8.0  # radians of oscillation per 16-node panel


def _contour_height(tau_re: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Height of the horizontal integration line Im u = theta.

    Passes through the saddle of -x cosh u + i tau u when it lies on the
    imaginary axis (tau < x); otherwise stays 1/tau below i pi/2 so the
    integrand still decays.
    """
    ratio = np.clip(np.abs(tau_re) / x, 0.0, 1.0)
    theta = np.arcsin(ratio)
    cap = np.pi / 2 - np.minimum(np.pi / 2, 1.0 / np.maximum(np.abs(tau_re), 1e-300))
    return np.minimum(theta, np.maximum(cap, 0.0))


def _bessel_line(tau, x, deriv: int, full_line: bool):
    """Integrate (1/2) * int e^{-x cosh u} (-cosh u)^deriv e^{i tau u} du on Im u = theta."""
    tau = np.asarray(tau, dtype=complex)
    x = np.asarray(x, dtype=float)
    tau, x = np.broadcast_arrays(tau, x)
    shape = tau.shape
    tau = tau.ravel()
    x = x.ravel()
    theta = _contour_height(tau.real, x) * np.sign(tau.real + (tau.real == 0))
    # exponent at the line's symmetric point sets the magnitude scale
    ref = -x * np.cos(theta) - np.abs(tau.real * theta)
    # truncation: x cos(theta) cosh(v) >= 40 + |ref| + shift from Im tau
    decay = np.maximum(x * np.cos(theta), 1e-300)
    need = (45.0 + np.abs(tau.imag) * 10 + np.maximum(0, -ref - x * np.cos(theta))) / decay
    vmax = np.arccosh(1.0 + need) + 0.5
    vmax = np.minimum(np.maximum(vmax, 2.0), 60.0)
    phase = np.abs(tau.real) * vmax + x * np.sinh(vmax) * np.abs(np.sin(theta))
    panels = np.ceil(phase / PANEL_PHASE + 2 * vmax + 4).astype(int)
    xg, wg = legendre_reference(_PANEL)
    out = np.empty(tau.size, dtype=complex)
    # group by panel count so each group is a dense array computation
    for p_count in np.unique(panels):
        idx = np.nonzero(panels == p_count)[0]
        k = np.arange(p_count)
        lo = -vmax[idx] if full_line else np.zeros(idx.size)
        width = (vmax[idx] - lo) / p_count
        v = lo[:, None, None] + width[:, None, None] * (k[None, :, None] + 0.5 * (xg[None, None, :] + 1.0))
        w = 0.5 * width[:, None, None] * wg[None, None, :]
        u = v + 1j * theta[idx, None, None]
        ch = np.cosh(u)
        f = np.exp(-x[idx, None, None] * ch + 1j * tau[idx, None, None] * u)
        if deriv:
            f = f * (-ch) ** deriv
        val = np.sum((f * w).reshape(idx.size, -1), axis=1)
        out[idx] = 0.5 * val if full_line else val
    return out.reshape(shape)


def macdonald_bessel(tau, x, deriv: int = 0, check: bool = True):
    """Macdonald function ``K_{i tau}(x)`` (or its x-derivatives) for x > 0.

    Computed from ``int_0^inf e^{-x cosh u} cos(tau u) du`` after moving the
    contour to a horizontal line through (or just below) the saddle point,
    which removes the cancellation that costs ~exp(pi tau / 2) accuracy on
    the real axis.  ``tau`` may be complex (order ``i tau``), which covers the
    shifted orders ``i s -+ 1`` used by difference operators.
    """
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0):
        raise ValueError("macdonald_bessel needs x > 0")
    tau_arr = np.asarray(tau)
    if check:
        t_abs = np.abs(np.real(tau_arr))
        if (
            np.any(x_arr < BESSEL_X_BOX[0])
            or np.any(x_arr > BESSEL_X_BOX[1])
            or np.any(t_abs > BESSEL_TAU_BOX[1])
        ):
            warnings.warn(
                "macdonald_bessel evaluated outside the validated box "
                f"x in {BESSEL_X_BOX}, |tau| <= {BESSEL_TAU_BOX[1]}",
                AccuracyWarning,
                stacklevel=2,
            )
    if np.iscomplexobj(tau_arr) and np.any(np.imag(tau_arr) != 0):
        out = _bessel_line(tau_arr, x_arr, deriv, full_line=True)
        return out if out.ndim else complex(out)
    out = np.real(_bessel_line(np.real(tau_arr).astype(float), x_arr, deriv, full_line=False))
    return out if out.ndim else float(out)


def plancherel_density(tau1, tau2, parity: int):
    """Principal-series Plancherel density of GL(2, R) at (tau1, tau2).

    parity 0: (tau/16 pi^3) tanh(pi tau / 2); parity 1: (tau/16 pi^3) coth(pi tau / 2),
    tau = tau1 - tau2, the removable singularity of coth filled with 2/pi.
    """
    tau = np.asarray(tau1, dtype=float) - np.asarray(tau2, dtype=float)
    c = 1.0 / (16 * np.pi**3)
    h = 0.5 * np.pi * tau
    if int(parity) % 2 == 0:
        out = c * tau * np.tanh(h)
    else:
        small = np.abs(h) < 1e-4
        hs = np.where(small, 1.0, h)
        regular = tau * np.cosh(hs) / np.sinh(hs)
        # tau coth(pi tau/2) = (2/pi) (1 + h^2/3 - h^4/45 + ...)
        series = (2 / np.pi) * (1 + h * h / 3 - h**4 / 45)
        out = c * np.where(small, series, regular)
    return out if np.ndim(out) else float(out)


def discrete_density(n: int) -> float:
    """Plancherel weight n / (8 pi^3) of the n-th discrete series."""
    if int(n) != n or n < 1:
        raise ValueError("discrete series index must be >= 1")
    return n / (8 * math.pi**3)


# self-test ------------------------------------------------------------------

def k0_series(x: float, terms: int = 60) -> float:
    """K_0(x) = -(log(x/2) + gamma_E) I_0(x) + sum_k (x^2/4)^k / (k!)^2 H_k."""
    q = x * x / 4
    term, i0, tail, harmonic = 1.0, 1.0, 0.0, 0.0
    for k in range(1, terms):
        term *= q / (k * k)
        harmonic += 1.0 / k
        i0 += term
        tail += term * harmonic
    return -(math.log(x / 2) + 0.5772156649015329) * i0 + tail


def _coth_density_taylor(tau: float) -> float:
    # (tau/16 pi^3) coth(pi tau/2), expanded in h = pi tau / 2 through h^8
    h = 0.5 * math.pi * tau
    series = 1 + h**2 / 3 - h**4 / 45 + 2 * h**6 / 945 - h**8 / 4725
    return (2 / math.pi) * series / (16 * math.pi**3)


@dataclass
class SelfTestRecord:
    name: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.residual < self.tolerance)

    def as_dict(self) -> dict:
        return {"name": self.name, "residual": self.residual, "tolerance": self.tolerance, "passed": self.passed}


def self_test() -> list:
    """Identity and oracle checks of the special functions, one record per family."""
    recs = []
    z = np.array([0.3 + 0.7j, 1.5 - 2.0j, 2.25 + 0.1j, -0.4 + 1.3j, 0.8 + 6.0j, 3.7 - 0.9j, -1.6 + 0.45j])
    g, g1 = gamma(z), gamma(z + 1)
    recs.append(SelfTestRecord("gamma_functional", float(np.max(np.abs(g1 - z * g) / np.abs(g1))), 1e-11))
    refl = gamma(z) * gamma(1 - z) * np.sin(np.pi * z) / np.pi
    recs.append(SelfTestRecord("gamma_reflection", float(np.max(np.abs(refl - 1))), 1e-11))
    halves = abs(gamma(0.5).real - math.sqrt(math.pi)) / math.sqrt(math.pi)
    recs.append(SelfTestRecord("gamma_half", float(halves), 1e-11))

    worst = 0.0
    for tau in (0.0, 0.5, 2.0, 7.5):
        x = np.linspace(0.2, 12.0, 40)
        k0, k1, k2 = (macdonald_bessel(tau, x, deriv=j) for j in range(3))
        res = x * x * k2 + x * k1 - (x * x - tau * tau) * k0
        scale = x * x * np.abs(k2) + x * np.abs(k1) + (x * x + tau * tau) * np.abs(k0)
        worst = max(worst, float(np.max(np.abs(res) / scale)))
    recs.append(SelfTestRecord("bessel_ode", worst, 1e-8))

    k0 = macdonald_bessel(0.0, 1.0)
    recs.append(SelfTestRecord("k0_at_1_series", abs(k0 - k0_series(1.0)) / k0_series(1.0), 1e-10))

    worst = 0.0
    for tau in (0.0, 1e-7, 1e-5, 3e-5, 1e-4, 5e-4, 2e-3):
        ref = _coth_density_taylor(tau)
        worst = max(worst, abs(plancherel_density(tau, 0.0, 1) - ref) / ref)
    recs.append(SelfTestRecord("plancherel_removable", worst, 1e-10))
    return recs

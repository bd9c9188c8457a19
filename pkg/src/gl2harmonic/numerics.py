"""Grids, quadrature rules, finite differences and tensor integration.

Everything downstream integrates against :class:`Grid1D` rules.  Gauss-Legendre
nodes are produced here by Newton iteration on the three-term recurrence, so
the package does not depend on a particular numpy version for them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

GAUSS = "gauss-legendre"
UNIFORM = "uniform"
WEIGHTED = "weighted-gauss"


@dataclass(frozen=True)
class Grid1D:
    """Ordered abscissae with positive quadrature weights."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str = GAUSS

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 1 or nodes.shape != weights.shape or nodes.size < 2:
            raise ValueError("grid needs matching 1D node/weight arrays of length >= 2")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if np.any(weights <= 0):
            raise ValueError("quadrature weights must be positive")
        if self.kind not in (GAUSS, UNIFORM, WEIGHTED):
            raise ValueError(f"unknown grid kind {self.kind!r}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.nodes.size

    @property
    def step(self) -> float:
        if self.kind != UNIFORM:
            raise ValueError("step is only defined on uniform grids")
        return float(self.nodes[1] - self.nodes[0])

    def __eq__(self, other):
        if not isinstance(other, Grid1D):
            return NotImplemented
        return (
            self.kind == other.kind
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.weights, other.weights)
        )

    def __hash__(self):
        return hash((self.kind, self.nodes.tobytes(), self.weights.tobytes()))


@dataclass
class SampledFunction:
    """Complex samples on the tensor product of one or two grids."""

    grids: list
    values: np.ndarray

    def __post_init__(self):
        self.grids = list(self.grids)
        if not 1 <= len(self.grids) <= 2:
            raise ValueError("SampledFunction supports 1 or 2 grids")
        self.values = np.asarray(self.values, dtype=complex)
        shape = tuple(len(g) for g in self.grids)
        if self.values.shape != shape:
            raise ValueError(f"value shape {self.values.shape} does not match grids {shape}")

    def with_values(self, values) -> "SampledFunction":
        return SampledFunction(self.grids, values)

    def mesh(self):
        return np.meshgrid(*[g.nodes for g in self.grids], indexing="ij")

    def weight_tensor(self) -> np.ndarray:
        w = self.grids[0].weights
        for g in self.grids[1:]:
            w = np.multiply.outer(w, g.weights)
        return w

    def norm(self) -> float:
        return math.sqrt(float(np.sum(self.weight_tensor() * np.abs(self.values) ** 2)))


@dataclass(frozen=True)
class QuadSpec:
    """Node counts and integration box for a tensor Gauss-Legendre rule.

    ``refine`` is the node multiplier used by convergence studies; ``tail``
    is the relative box enlargement used for truncation estimates.
    """

    counts: tuple
    box: tuple
    refine: float = 1.5
    tail: float = 0.25

    def __post_init__(self):
        counts = tuple(int(n) for n in self.counts)
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        if len(counts) != len(box):
            raise ValueError("one node count per box dimension")
        if any(n < 4 for n in counts):
            raise ValueError("node counts must be >= 4")
        for lo, hi in box:
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ValueError(f"bad box interval [{lo}, {hi}]")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "box", box)

    def refined(self, factor: float | None = None) -> "QuadSpec":
        f = self.refine if factor is None else factor
        return QuadSpec(tuple(int(math.ceil(n * f)) for n in self.counts), self.box, self.refine, self.tail)

    def enlarged(self, frac: float | None = None) -> "QuadSpec":
        f = self.tail if frac is None else frac
        box = []
        for lo, hi in self.box:
            half = 0.5 * (hi - lo) * f
            box.append((lo - half, hi + half))
        return QuadSpec(self.counts, tuple(box), self.refine, self.tail)

    def grids(self) -> list:
        return [gauss_legendre(n, lo, hi) for n, (lo, hi) in zip(self.counts, self.box)]


_GL_CACHE: dict = {}


def _legendre_nodes(n: int) -> tuple:
    """Nodes and weights of the n-point rule on [-1, 1] (Newton on P_n)."""
    if n in _GL_CACHE:
        return _GL_CACHE[n]
    k = np.arange(1, n + 1)
    # Tricomi initial guess, descending order
    x = np.cos(np.pi * (4 * k - 1) / (4 * n + 2)) * (1 - (n - 1) / (8.0 * n**3))
    for _ in range(100):
        p0 = np.ones_like(x)
        p1 = x.copy()
        for j in range(2, n + 1):
            p0, p1 = p1, ((2 * j - 1) * x * p1 - (j - 1) * p0) / j
        dp = n * (x * p1 - p0) / (x * x - 1)
        dx = p1 / dp
        x -= dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    p0 = np.ones_like(x)
    p1 = x.copy()
    for j in range(2, n + 1):
        p0, p1 = p1, ((2 * j - 1) * x * p1 - (j - 1) * p0) / j
    dp = n * (x * p1 - p0) / (x * x - 1)
    w = 2.0 / ((1 - x * x) * dp * dp)
    x, w = x[::-1].copy(), w[::-1].copy()
    # symmetrize away residual roundoff
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    _GL_CACHE[n] = (x, w)
    return x, w


def gauss_legendre(n: int, a: float, b: float) -> Grid1D:
    """n-point Gauss-Legendre rule mapped to [a, b]."""
    if int(n) != n or n < 2:
        raise ValueError(f"need n >= 2 nodes, got {n}")
    if not a < b:
        raise ValueError(f"need a < b, got [{a}, {b}]")
    x, w = _legendre_nodes(int(n))
    half = 0.5 * (b - a)
    return Grid1D(0.5 * (a + b) + half * x, half * w, GAUSS)


def weighted_gauss(weight, a: float, b: float, n: int, fine: int = 800) -> Grid1D:
    """n-point Gauss rule for ``∫_a^b weight(x) f(x) dx``; the returned weights include ``weight``.

    The weight is discretized on a fine Gauss-Legendre rule and the Jacobi
    matrix is built by Lanczos with full reorthogonalization.
    """
    if int(n) != n or n < 2 or n >= fine:
        raise ValueError("need 2 <= n < fine")
    x, w = _legendre_nodes(int(fine))
    half = 0.5 * (b - a)
    x = 0.5 * (a + b) + half * x
    w = half * w * np.asarray(weight(x), dtype=float)
    if np.any(w < 0):
        raise ValueError("weight must be nonnegative")
    mass = w.sum()
    q = np.sqrt(w / mass)
    basis = np.zeros((int(n), x.size))
    alpha = np.zeros(int(n))
    beta = np.zeros(int(n) - 1)
    basis[0] = q
    for k in range(int(n)):
        v = x * basis[k]
        alpha[k] = basis[k] @ v
        if k + 1 == n:
            break
        v = v - basis[: k + 1].T @ (basis[: k + 1] @ v)
        v = v - basis[: k + 1].T @ (basis[: k + 1] @ v)
        beta[k] = np.linalg.norm(v)
        basis[k + 1] = v / beta[k]
    nodes, vecs = np.linalg.eigh(np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1))
    return Grid1D(nodes, mass * vecs[0] ** 2, WEIGHTED)


def legendre_reference(n: int) -> tuple:
    """Reference nodes and weights on [-1, 1] as plain arrays."""
    x, w = _legendre_nodes(int(n))
    return x.copy(), w.copy()


def uniform_grid(n: int, a: float, b: float, endpoint: bool = True) -> Grid1D:
    """Uniform nodes with trapezoid weights (or periodic weights if ``endpoint`` is False)."""
    if n < 2 or not a < b:
        raise ValueError("need n >= 2 and a < b")
    if endpoint:
        x = np.linspace(a, b, n)
        h = x[1] - x[0]
        w = np.full(n, h)
        w[0] = w[-1] = 0.5 * h
    else:
        h = (b - a) / n
        x = a + h * np.arange(n)
        w = np.full(n, h)
    return Grid1D(x, w, UNIFORM)


def periodic_grid(n: int, period: float = 2 * math.pi, offset: float = 0.0) -> Grid1D:
    """Equispaced periodic rule on [offset, offset + period)."""
    h = period / n
    return Grid1D(offset + h * np.arange(n), np.full(n, h), UNIFORM)


def integrate(f: SampledFunction) -> complex:
    """Weighted sum of the samples over the tensor rule."""
    vals = f.values
    for axis, g in reversed(list(enumerate(f.grids))):
        vals = np.tensordot(vals, g.weights, axes=([axis], [0]))
    return complex(vals)


def tensor_rule(grids: Sequence[Grid1D]) -> tuple:
    """Flattened nodes (one array per dimension) and weights of a tensor rule."""
    mesh = np.meshgrid(*[g.nodes for g in grids], indexing="ij")
    w = grids[0].weights
    for g in grids[1:]:
        w = np.multiply.outer(w, g.weights)
    return [m.ravel() for m in mesh], w.ravel()


# 4th-order stencils for the first derivative
_CENTRAL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_FORWARD = np.array(
    [
        [-25.0, 48.0, -36.0, 16.0, -3.0],
        [-3.0, -10.0, 18.0, -6.0, 1.0],
    ]
) / 12.0


def _diff_uniform(v: np.ndarray, h: float) -> np.ndarray:
    n = v.shape[0]
    if n < 5:
        raise ValueError("4th-order differences need at least 5 nodes")
    out = np.empty_like(v)
    out[2:-2] = sum(c * v[k : n - 4 + k] for k, c in enumerate(_CENTRAL))
    for i, row in enumerate(_FORWARD):
        out[i] = sum(c * v[k] for k, c in enumerate(row))
        out[n - 1 - i] = -sum(c * v[n - 1 - k] for k, c in enumerate(row))
    return out / h


@dataclass
class DiffResult:
    derivative: SampledFunction
    error_estimate: float
    ratios: list = field(default_factory=list)


def central_diff(samples: SampledFunction, axis: int = 0, step_refinements: int = 1) -> DiffResult:
    """4th-order finite-difference derivative along ``axis``.

    The truncation error is estimated by Richardson comparison against the
    same stencil on every ``2**k``-th node, ``k = 1..step_refinements``; the
    successive error ratios (about 16 for smooth data) are returned too.
    """
    grid = samples.grids[axis]
    if grid.kind != UNIFORM:
        raise ValueError("central_diff needs a uniform grid along the chosen axis")
    h = grid.step
    vals = np.moveaxis(samples.values, axis, 0)
    d = _diff_uniform(vals, h)
    errors = []
    fine = d
    for k in range(1, step_refinements + 1):
        stride = 2**k
        if vals[::stride].shape[0] < 5:
            break
        coarse = _diff_uniform(vals[::stride], h * stride)
        errors.append(float(np.max(np.abs(coarse - fine[::2])) / 15.0))
        fine = coarse
    ratios = [errors[i + 1] / errors[i] for i in range(len(errors) - 1) if errors[i] > 0]
    out = SampledFunction(samples.grids, np.moveaxis(d, 0, axis))
    return DiffResult(out, errors[0] if errors else float("nan"), ratios)


def fd_derivative(f, x, h: float = 1e-3, order: int = 1):
    """Five-point central difference of a vectorized callable."""
    x = np.asarray(x)
    if order == 1:
        return (f(x - 2 * h) - 8 * f(x - h) + 8 * f(x + h) - f(x + 2 * h)) / (12 * h)
    if order == 2:
        return (-f(x - 2 * h) + 16 * f(x - h) - 30 * f(x) + 16 * f(x + h) - f(x + 2 * h)) / (12 * h * h)
    raise ValueError("order must be 1 or 2")


def barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    x = np.asarray(nodes, dtype=float)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    # scale to keep the product finite for larger node counts
    diff = diff * (4.0 / (x.max() - x.min()))
    return 1.0 / np.prod(diff, axis=1)


def barycentric_interp(nodes: np.ndarray, values: np.ndarray, x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Barycentric Lagrange interpolation along ``axis``; zero outside [nodes[0], nodes[-1]]."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.asarray(x, dtype=float)
    w = barycentric_weights(nodes)
    vals = np.moveaxis(np.asarray(values), axis, 0)
    diff = x[..., None] - nodes
    exact = diff == 0
    diff[exact] = 1.0
    c = w / diff
    c[exact.any(axis=-1)] = 0.0
    rows, cols = np.nonzero(exact.reshape(-1, nodes.size))
    cflat = c.reshape(-1, nodes.size)
    cflat[rows, cols] = 1.0
    c = cflat.reshape(c.shape)
    c = c / c.sum(axis=-1, keepdims=True)
    inside = (x >= nodes[0]) & (x <= nodes[-1])
    c = c * inside[..., None]
    out = np.tensordot(c, vals, axes=([-1], [0]))
    return out


def fixed_order_sum(values: np.ndarray) -> complex:
    """Deterministic left-to-right sum (independent of any chunking done upstream)."""
    return complex(math.fsum(np.real(values).ravel())) + 1j * math.fsum(np.imag(values).ravel())

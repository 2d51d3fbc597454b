"""Shifted Legendre polynomials on [0, 1], Gauss rules and coefficient index maps.

All series in the package use ``L_i(2x - 1)`` so that ``L_i(0) = (-1)^i``,
``L_i(1) = 1`` and ``<L_i, L_j> = delta_ij / (2i + 1)`` on the unit interval.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial import legendre as npleg


def shifted_legendre(n_max: int, x) -> np.ndarray:
    """Values of ``L_0 .. L_n_max`` at ``x``; shape ``(n_max + 1, *x.shape)``."""
    x = np.asarray(x, dtype=float)
    t = 2.0 * x - 1.0
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = t
    for n in range(1, n_max):
        out[n + 1] = ((2 * n + 1) * t * out[n] - n * out[n - 1]) / (n + 1)
    return out


def shifted_legendre_deriv(n_max: int, x) -> np.ndarray:
    """d/dx of ``L_i(2x - 1)`` for i = 0..n_max, same layout as :func:`shifted_legendre`."""
    x = np.asarray(x, dtype=float)
    vals = shifted_legendre(n_max, x)
    out = np.zeros_like(vals)
    # P'_{n+1} = P'_{n-1} + (2n + 1) P_n, times 2 for the shift
    for n in range(1, n_max + 1):
        out[n] = (out[n - 2] if n >= 2 else 0.0) + 2.0 * (2 * n - 1) * vals[n - 1]
    return out


def _check_unit(points, name="points"):
    p = np.asarray(points, dtype=float)
    if np.any(p < -1e-14) or np.any(p > 1 + 1e-14) or np.any(~np.isfinite(p)):
        raise ValueError(f"{name} must lie in [0, 1]")
    return p


@dataclass(frozen=True)
class LegendreSeries1D:
    """``sum_i c_i L_i`` on ``domain`` (mapped affinely onto [0, 1])."""

    coeffs: np.ndarray
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coeffs must be a non-empty vector")
        object.__setattr__(self, "coeffs", c)
        a, b = self.domain
        if not b > a:
            raise ValueError("empty domain")
        object.__setattr__(self, "domain", (float(a), float(b)))

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def _local(self, y):
        a, b = self.domain
        y = np.asarray(y, dtype=float)
        if np.any(y < a - 1e-14) or np.any(y > b + 1e-14) or np.any(~np.isfinite(y)):
            raise ValueError(f"points must lie in [{a}, {b}]")
        return (y - a) / (b - a)

    def __call__(self, y):
        s = self._local(y)
        return np.tensordot(self.coeffs, shifted_legendre(self.degree, s), axes=1)

    def derivative(self) -> "LegendreSeries1D":
        a, b = self.domain
        if self.degree == 0:
            return LegendreSeries1D(np.zeros(1), self.domain)
        d = npleg.legder(self.coeffs) * 2.0 / (b - a)
        return LegendreSeries1D(d, self.domain)

    def to_power(self) -> np.ndarray:
        """Monomial coefficients in y (lowest first)."""
        p = npleg.Legendre(self.coeffs, domain=list(self.domain))
        return p.convert(kind=np.polynomial.Polynomial).coef


def tri_size(M: int, M_y: int) -> int:
    return M * (M_y + 1) - M_y * (M_y - 1) // 2 + 1


def tri_index(i: int, j: int, M: int) -> int:
    """1-based position of ``L_i(x) L_j(y)`` in a triangular (total order M) vector."""
    if j < 0 or i < 0 or i > M - j:
        raise ValueError(f"(i, j) = ({i}, {j}) outside the triangular set for M = {M}")
    return i + M * j - (j - 1) * (j - 2) // 2 + 2


def tri_unindex(k: int, M: int, M_y: int | None = None) -> tuple[int, int]:
    """Inverse of :func:`tri_index`."""
    M_y = M if M_y is None else M_y
    if not 1 <= k <= tri_size(M, M_y):
        raise ValueError(f"k = {k} out of range")
    for j in range(M_y + 1):
        start = tri_index(0, j, M)
        if k < start + (M - j + 1):
            return k - start, j
    raise ValueError(f"k = {k} out of range")  # pragma: no cover


def rect_index(k: int, N_x: int, N_y: int | None = None) -> tuple[int, int]:
    """Tensor-basis position ``k`` (1-based) -> ``(i, j)``; x index runs fastest."""
    if k < 1 or (N_y is not None and k > (N_x + 1) * (N_y + 1)):
        raise ValueError(f"k = {k} out of range")
    return (k - 1) % (N_x + 1), (k - 1) // (N_x + 1)


@lru_cache(maxsize=None)
def _tri_pairs(M: int, M_y: int) -> tuple[tuple[int, int], ...]:
    return tuple((i, j) for j in range(M_y + 1) for i in range(M - j + 1))


@dataclass(frozen=True)
class LegendreSeries2D:
    """``sum c_(i,j) L_i(x) L_j(y)`` over ``j <= M_y``, ``i <= M - j``."""

    total_order: int
    y_order: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not 0 <= self.y_order <= self.total_order:
            raise ValueError("need 0 <= M_y <= M")
        c = np.asarray(self.coeffs, dtype=float).ravel()
        if c.size != tri_size(self.total_order, self.y_order):
            raise ValueError(
                f"expected {tri_size(self.total_order, self.y_order)} coefficients, got {c.size}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, M: int, M_y: int) -> "LegendreSeries2D":
        return cls(M, M_y, np.zeros(tri_size(M, M_y)))

    @classmethod
    def from_matrix(cls, C, M: int, M_y: int) -> "LegendreSeries2D":
        """Build from a dense ``C[i, j]`` array; entries outside the triangle must vanish."""
        C = np.asarray(C, dtype=float)
        out = np.zeros(tri_size(M, M_y))
        full = np.zeros((M + 1, M_y + 1))
        full[: min(C.shape[0], M + 1), : min(C.shape[1], M_y + 1)] = C[: M + 1, : M_y + 1]
        for k, (i, j) in enumerate(_tri_pairs(M, M_y)):
            out[k] = full[i, j]
        return cls(M, M_y, out)

    @classmethod
    def constant(cls, value: float, M: int = 0, M_y: int = 0) -> "LegendreSeries2D":
        s = cls.zeros(M, M_y)
        s.coeffs[0] = value
        return s

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return _tri_pairs(self.total_order, self.y_order)

    def matrix(self) -> np.ndarray:
        """Dense ``(M + 1, M_y + 1)`` coefficient array."""
        C = np.zeros((self.total_order + 1, self.y_order + 1))
        for c, (i, j) in zip(self.coeffs, self.pairs):
            C[i, j] = c
        return C

    def x_coeffs(self, y) -> np.ndarray:
        """Legendre-in-x coefficients at fixed y; shape ``(M + 1, *y.shape)``."""
        y = _check_unit(y, "y")
        return np.tensordot(self.matrix(), shifted_legendre(self.y_order, y), axes=1)

    def __call__(self, x, y):
        x = _check_unit(x, "x")
        y = _check_unit(y, "y")
        x, y = np.broadcast_arrays(x, y)
        Lx = shifted_legendre(self.total_order, x)
        Ly = shifted_legendre(self.y_order, y)
        return np.einsum("ij,i...,j...->...", self.matrix(), Lx, Ly)

    def diff_x(self) -> "LegendreSeries2D":
        return legendre_diff_x(self)

    def grid(self, x, y) -> np.ndarray:
        """Values on the tensor grid ``x[:, None] x y[None, :]``."""
        x = _check_unit(x, "x")
        y = _check_unit(y, "y")
        return shifted_legendre(self.total_order, x).T @ self.matrix() @ shifted_legendre(self.y_order, y)


def legendre_eval(series, *points):
    """Evaluate a 1-D or 2-D series; points outside the domain are rejected."""
    return series(*points)


def legendre_diff_x(series: LegendreSeries2D) -> LegendreSeries2D:
    """Exact x-derivative; the result has total order ``M - 1``."""
    M, M_y = series.total_order, series.y_order
    if M == 0:
        return LegendreSeries2D.zeros(0, 0)
    C = series.matrix()
    D = np.zeros((M, M_y + 1))
    for j in range(M_y + 1):
        col = C[: M - j + 1, j]
        if col.size > 1:
            d = npleg.legder(col) * 2.0
            D[: d.size, j] = d
    return LegendreSeries2D.from_matrix(D, M - 1, min(M_y, M - 1))


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, values) -> float:
        return np.tensordot(self.weights, np.asarray(values), axes=(0, 0))


def gauss_nodes(n: int, a: float = 0.0, b: float = 1.0) -> QuadratureRule:
    """Gauss-Legendre rule with ``n`` nodes on ``[a, b]`` (exact to degree 2n - 1)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    t, w = npleg.leggauss(n)
    half = 0.5 * (b - a)
    return QuadratureRule(a + half * (t + 1.0), half * w)


def default_rule_size(max_degree: int) -> int:
    return 2 * max_degree + 8


def inner_product(f: Callable, g: Callable, rule: QuadratureRule,
                  rule_y: QuadratureRule | None = None) -> float:
    """Quadrature value of ``int f g`` on [0, 1], or on [0, 1]^2 when ``rule_y`` is given."""
    if rule_y is None:
        return float(rule.integrate(f(rule.nodes) * g(rule.nodes)))
    X, Y = np.meshgrid(rule.nodes, rule_y.nodes, indexing="ij")
    W = np.outer(rule.weights, rule_y.weights)
    return float(np.sum(W * f(X, Y) * g(X, Y)))

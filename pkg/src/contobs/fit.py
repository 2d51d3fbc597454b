"""Least-squares continuum approximation of large-scale channel parameters.

Channel data ``b_1..b_m`` are read as step functions in the ensemble variable
y (channel i lives on ``((i-1)/m, i/m]``) and projected onto shifted Legendre
polynomials: triangular total order ``M`` / y-order ``M_y`` for the
x-dependent parameters, order ``M_y`` in y for the boundary scalars.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .basis import (LegendreSeries1D, LegendreSeries2D, gauss_nodes, shifted_legendre,
                    shifted_legendre_deriv, tri_size)

log = logging.getLogger(__name__)

PARAM_NAMES_2D = ("lam", "mu", "W", "theta")
PARAM_NAMES_1D = ("Q", "R", "F", "g")
DEFAULT_EPS = 0.05
SUP_GRID = 201
N_X_QUAD = 48


class FitError(ValueError):
    pass


class FitWarning(UserWarning):
    pass


@dataclass(frozen=True)
class StepFunction:
    """Piecewise-constant function on ``domain`` split into ``len(values)`` equal cells."""

    values: np.ndarray
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        if v.ndim != 1 or v.size == 0:
            raise FitError("step data must be a non-empty vector")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "domain", (float(self.domain[0]), float(self.domain[1])))

    @property
    def m(self) -> int:
        return self.values.size

    def edges(self) -> np.ndarray:
        a, b = self.domain
        return a + (b - a) * np.arange(self.m + 1) / self.m

    def cell(self, y) -> np.ndarray:
        a, b = self.domain
        s = (np.asarray(y, dtype=float) - a) / (b - a) * self.m
        # half-open cells ((i-1)/m, i/m]; the left end belongs to the first cell
        return np.clip(np.ceil(s - 1e-12).astype(int) - 1, 0, self.m - 1)

    def __call__(self, y):
        return self.values[self.cell(y)]

    def cell_means(self, h: Callable, n: int = 16) -> np.ndarray:
        """Adjoint map: mean of ``h`` over each cell."""
        e = self.edges()
        out = np.empty(self.m)
        for i in range(self.m):
            r = gauss_nodes(n, e[i], e[i + 1])
            out[i] = r.integrate(h(r.nodes)) / (e[i + 1] - e[i])
        return out


def step_embed(values, domain=(0.0, 1.0)) -> StepFunction:
    return StepFunction(values, domain)


def _cell_rules(step: StepFunction, n: int):
    e = step.edges()
    rules = [gauss_nodes(n, e[i], e[i + 1]) for i in range(step.m)]
    y = np.concatenate([r.nodes for r in rules])
    w = np.concatenate([r.weights for r in rules])
    cell = np.repeat(np.arange(step.m), n)
    return y, w, cell


@dataclass
class FitResult1D:
    series: LegendreSeries1D
    l2_error: float
    residual: float  # squared misfit on the reference interval [-1, 1]


def fit_1d(step: StepFunction, M_y: int) -> FitResult1D:
    """Projection ``c = E^-1 V`` of a step function onto ``L_0..L_M_y`` on its domain."""
    if M_y < 0:
        raise FitError("M_y must be >= 0")
    a, b = step.domain
    y, w, cell = _cell_rules(step, M_y + 2)
    s = (y - a) / (b - a)
    P = shifted_legendre(M_y, s)
    E = np.diag((b - a) / (2 * np.arange(M_y + 1) + 1.0))
    V = P @ (w * step.values[cell])
    c = np.linalg.solve(E, V)
    err2 = float(np.sum(w * (step.values[cell] - c @ P) ** 2))
    return FitResult1D(LegendreSeries1D(c, step.domain), np.sqrt(err2), 2.0 / (b - a) * err2)


@dataclass
class ChannelData:
    """Per-channel functions of x for one parameter, optionally with x-derivatives."""

    funcs: Sequence[Callable]
    derivs: Sequence[Callable] | None = None

    @property
    def m(self) -> int:
        return len(self.funcs)

    def values(self, x) -> np.ndarray:
        return np.array([np.broadcast_to(f(x), np.shape(x)) for f in self.funcs], dtype=float)

    def derivative_values(self, x) -> np.ndarray:
        if self.derivs is not None:
            return np.array([np.broadcast_to(f(x), np.shape(x)) for f in self.derivs], dtype=float)
        h = 1e-4
        x = np.asarray(x, dtype=float)
        out = []
        for f in self.funcs:
            xc = np.clip(x, 2 * h, 1 - 2 * h)
            d = (-f(xc + 2 * h) + 8 * f(xc + h) - 8 * f(xc - h) + f(xc - 2 * h)) / (12 * h)
            out.append(np.broadcast_to(d, x.shape))
        return np.array(out, dtype=float)


@dataclass
class Fit2DProblem:
    """Normal equations ``(E + G) c = V + D`` for one 2-D parameter."""

    M: int
    M_y: int
    E: np.ndarray
    G: np.ndarray
    V: np.ndarray
    D: np.ndarray
    penalty: bool
    data: ChannelData
    data_sq: float  # ||step||^2 (+ ||step_x||^2 with penalty)

    @property
    def H(self) -> np.ndarray:
        return self.E + (self.G if self.penalty else 0.0)

    @property
    def rhs(self) -> np.ndarray:
        return self.V + (self.D if self.penalty else 0.0)

    def solve(self) -> np.ndarray:
        H = self.H
        if np.linalg.cond(H) > 1e12:
            raise FitError("normal matrix is numerically singular")
        return np.linalg.solve(H, self.rhs)

    def objective(self, c) -> float:
        """Least-squares functional (value misfit plus derivative misfit if penalised)."""
        c = np.asarray(c)
        return float(self.data_sq - 2 * c @ self.rhs + c @ self.H @ c)

    def normal_residual(self, c) -> float:
        r = self.H @ np.asarray(c) - self.rhs
        return float(r @ r)


@dataclass
class FitResult2D:
    series: LegendreSeries2D
    l2_error: float
    residual: float  # squared misfit on the reference square [-1, 1]^2
    deriv_l2_error: float
    deriv_residual: float
    problem: Fit2DProblem = field(repr=False)


def _basis_tables(M: int, M_y: int, x, y_cells_nodes, domain_y=(0.0, 1.0)):
    pairs = [(i, j) for j in range(M_y + 1) for i in range(M - j + 1)]
    Lx = shifted_legendre(M, x)
    dLx = shifted_legendre_deriv(M, x)
    Ly = shifted_legendre(M_y, y_cells_nodes)
    return pairs, Lx, dLx, Ly


def build_fit_2d(data: ChannelData, M: int, M_y: int, penalty: bool,
                 n_x: int = N_X_QUAD) -> Fit2DProblem:
    if not 0 <= M_y <= M:
        raise FitError("need 0 <= M_y <= M")
    m = data.m
    rx = gauss_nodes(max(n_x, M + 2))
    step = StepFunction(np.zeros(m))
    y, wy, cell = _cell_rules(step, M_y + 2)
    pairs, Lx, dLx, Ly = _basis_tables(M, M_y, rx.nodes, y)
    vals = data.values(rx.nodes)                        # (m, nx)
    dvals = data.derivative_values(rx.nodes) if penalty else np.zeros_like(vals)
    # int over each cell of L_j(y)
    Ly_cell = np.zeros((M_y + 1, m))
    np.add.at(Ly_cell.T, cell, (Ly * wy).T)
    Vx = (Lx * rx.weights) @ vals.T                     # (M+1, m)
    Dx = (dLx * rx.weights) @ dvals.T
    Gx = (dLx * rx.weights) @ dLx.T
    n = tri_size(M, M_y)
    E = np.zeros((n, n))
    G = np.zeros((n, n))
    V = np.zeros(n)
    D = np.zeros(n)
    for k, (i, j) in enumerate(pairs):
        E[k, k] = 1.0 / ((2 * i + 1) * (2 * j + 1))
        V[k] = Vx[i] @ Ly_cell[j]
        D[k] = Dx[i] @ Ly_cell[j]
        for l, (i2, j2) in enumerate(pairs):
            if j2 == j:
                G[k, l] = Gx[i, i2] / (2 * j + 1)
    data_sq = float(np.sum(rx.weights * vals ** 2) / m)
    if penalty:
        data_sq += float(np.sum(rx.weights * dvals ** 2) / m)
    return Fit2DProblem(M, M_y, E, G, V, D, penalty, data, data_sq)


def _misfit_2d(series: LegendreSeries2D, data: ChannelData, n_x: int = N_X_QUAD,
               deriv: bool = False):
    m = data.m
    rx = gauss_nodes(n_x)
    step = StepFunction(np.zeros(m))
    y, wy, cell = _cell_rules(step, series.y_order + 2)
    if deriv:
        model = series.diff_x().grid(rx.nodes, y)
        vals = data.derivative_values(rx.nodes)
    else:
        model = series.grid(rx.nodes, y)
        vals = data.values(rx.nodes)
    diff = vals[cell].T - model                         # (nx, ny)
    return float(rx.weights @ (diff ** 2) @ wy)


def fit_2d(data: ChannelData, M: int, M_y: int, with_derivative_penalty: bool = False,
           n_x: int = N_X_QUAD) -> FitResult2D:
    """Least-squares fit of x-dependent channel data; ``(E+G)^-1 (V+D)`` with penalty."""
    prob = build_fit_2d(data, M, M_y, with_derivative_penalty, n_x)
    series = LegendreSeries2D(M, M_y, prob.solve())
    return _result_2d(series, prob, n_x)


def _result_2d(series, prob, n_x=N_X_QUAD) -> FitResult2D:
    e2 = _misfit_2d(series, prob.data, n_x)
    d2 = _misfit_2d(series, prob.data, n_x, deriv=True) if prob.penalty else 0.0
    return FitResult2D(series, np.sqrt(e2), 4.0 * e2, np.sqrt(d2), 4.0 * d2, prob)


def positivity_refit(series: LegendreSeries2D, problem: Fit2DProblem, margin: float | None = None,
                     n_grid: int = 41, max_outer: int = 30) -> LegendreSeries2D:
    """Minimise ``||(E+G)c - (V+D)||^2`` subject to positivity on a sampled grid.

    Log-barrier continuation started from a shifted copy of the unconstrained
    coefficients. A fit that is already positive is returned unchanged.
    """
    xs = np.linspace(0.0, 1.0, n_grid)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    P = np.stack([shifted_legendre(problem.M, X.ravel())[i] * shifted_legendre(problem.M_y, Y.ravel())[j]
                  for i, j in series.pairs], axis=1)
    c = series.coeffs.copy()
    if margin is None:
        margin = 1e-3 * max(float(np.max(np.abs(P @ c))), 1e-12)
    if np.min(P @ c) > margin:
        return series
    H, b = problem.H, problem.rhs
    scale = max(float(b @ b), 1e-300)
    c[0] += margin - np.min(P @ c) + max(margin, 0.05 * np.ptp(P @ c))
    t = 1.0
    for _ in range(max_outer):
        for _ in range(50):
            s = P @ c - margin
            g = 2 * H.T @ (H @ c - b) / scale - t * P.T @ (1.0 / s)
            Hs = 2 * H.T @ H / scale + t * (P.T * (1.0 / s ** 2)) @ P
            step = np.linalg.solve(Hs, -g)
            a = 1.0
            f0 = np.sum((H @ c - b) ** 2) / scale - t * np.sum(np.log(s))
            while a > 1e-12:
                cn = c + a * step
                sn = P @ cn - margin
                if np.all(sn > 0):
                    fn = np.sum((H @ cn - b) ** 2) / scale - t * np.sum(np.log(sn))
                    if fn <= f0 + 1e-4 * a * (g @ step):
                        break
                a *= 0.5
            else:
                break
            c = cn
            if abs(g @ step) < 1e-14:
                break
        t *= 0.2
        if t < 1e-12:
            break
    if not np.min(P @ c) > margin:
        raise FitError("positivity-constrained refit found no feasible coefficients")
    return LegendreSeries2D(series.total_order, series.y_order, c)


@dataclass
class StepEnsemble:
    """Large-scale channel parameters, to be embedded as step functions in y."""

    lam: ChannelData
    mu: ChannelData
    w: ChannelData
    theta: ChannelData
    q: np.ndarray
    r: np.ndarray
    f: np.ndarray
    g: np.ndarray  # weights for channels m1..m2 (length m2 - m1 + 1)
    m1: int
    m2: int

    def __post_init__(self):
        self.q, self.r, self.f = (np.asarray(v, dtype=float) for v in (self.q, self.r, self.f))
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        m = self.m
        for name in ("lam", "mu", "w", "theta"):
            if getattr(self, name).m != m:
                raise FitError(f"{name}: expected {m} channels")
        for name in ("q", "r", "f"):
            if getattr(self, name).shape != (m,):
                raise FitError(f"{name}: expected {m} values")
        if not 1 <= self.m1 <= self.m2 <= m:
            raise FitError("need 1 <= m1 <= m2 <= m")
        if self.g.size == m and self.m2 - self.m1 + 1 != m:
            self.g = self.g[self.m1 - 1:self.m2]
        if self.g.size != self.m2 - self.m1 + 1:
            raise FitError("g must have one weight per measured channel")
        xs = np.linspace(0, 1, 101)
        if np.any(self.lam.values(xs) <= 0) or np.any(self.mu.values(xs) <= 0):
            raise FitError("channel transport speeds must be positive")

    @property
    def m(self) -> int:
        return self.q.size

    @property
    def y1(self) -> float:
        return (self.m1 - 1) / self.m

    @property
    def y2(self) -> float:
        return self.m2 / self.m

    def g_step(self) -> StepFunction:
        return StepFunction(self.g, (self.y1, self.y2))


@dataclass
class ContinuumParams:
    lam: LegendreSeries2D
    mu: LegendreSeries2D
    W: LegendreSeries2D
    theta: LegendreSeries2D
    Q: LegendreSeries1D
    R: LegendreSeries1D
    F: LegendreSeries1D
    g: LegendreSeries1D
    y1: float = 0.0
    y2: float = 1.0

    @classmethod
    def build(cls, lam=1.0, mu=1.0, W=0.0, theta=0.0, Q=0.0, R=0.0, F=1.0, g=1.0,
              y1=0.0, y2=1.0) -> "ContinuumParams":
        """Convenience constructor; scalars become constant series."""
        def s2(v):
            return v if isinstance(v, LegendreSeries2D) else LegendreSeries2D.constant(float(v))

        def s1(v, dom=(0.0, 1.0)):
            return v if isinstance(v, LegendreSeries1D) else LegendreSeries1D([float(v)], dom)
        return cls(s2(lam), s2(mu), s2(W), s2(theta), s1(Q), s1(R), s1(F), s1(g, (y1, y2)), y1, y2)

    def check(self, n: int = 101) -> None:
        xs = np.linspace(0, 1, n)
        if np.min(self.lam.grid(xs, xs)) <= 0 or np.min(self.mu.grid(xs, xs)) <= 0:
            raise FitError("continuum transport speeds must be positive")
        if np.max(np.abs(self.Q(xs) * self.R(xs))) >= 1:
            warnings.warn("|Q R| >= 1 somewhere on [0, 1]", FitWarning, stacklevel=2)

    def to_dict(self) -> dict:
        out = {}
        for name in PARAM_NAMES_2D:
            s = getattr(self, name)
            out[name] = {"M": s.total_order, "M_y": s.y_order, "coeffs": s.coeffs.tolist()}
        for name in PARAM_NAMES_1D:
            s = getattr(self, name)
            out[name] = {"domain": list(s.domain), "coeffs": s.coeffs.tolist()}
        out["y1"], out["y2"] = self.y1, self.y2
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "ContinuumParams":
        kw = {}
        for name in PARAM_NAMES_2D:
            e = d[name]
            kw[name] = LegendreSeries2D(int(e["M"]), int(e["M_y"]), e["coeffs"])
        for name in PARAM_NAMES_1D:
            e = d[name]
            kw[name] = LegendreSeries1D(e["coeffs"], tuple(e.get("domain", (0.0, 1.0))))
        return cls(y1=float(d["y1"]), y2=float(d["y2"]), **kw)


@dataclass
class FitReport:
    M: int
    M_y: int
    residuals: dict            # name -> table-convention residual
    deriv_residuals: dict      # lam/mu -> residual of x-derivative
    l2_errors: dict            # name -> plain L2 misfit
    gaps: dict                 # name -> sup-norm accuracy of the continuum approximation
    thresholds: dict
    satisfied: bool
    history: list = field(default_factory=list)
    refitted: list = field(default_factory=list)
    warning: str | None = None
    sup_grid: int = SUP_GRID

    def to_dict(self) -> dict:
        return {
            "M": self.M, "M_y": self.M_y, "residuals": self.residuals,
            "deriv_residuals": self.deriv_residuals, "l2_errors": self.l2_errors,
            "gaps": self.gaps, "thresholds": self.thresholds, "satisfied": self.satisfied,
            "history": self.history, "positivity_refit": self.refitted, "warning": self.warning,
            "sup_grid": self.sup_grid,
        }


def sup_gap_2d(series: LegendreSeries2D, data: ChannelData, with_derivative: bool,
               n_x: int = SUP_GRID) -> float:
    """``sup_x ||step(x, .) - fit(x, .)||_L2`` (+ the same for x-derivatives)."""
    xs = np.linspace(0.0, 1.0, n_x)
    y, wy, cell = _cell_rules(StepFunction(np.zeros(data.m)), series.y_order + 2)
    gap = np.sqrt(np.max(((data.values(xs)[cell].T - series.grid(xs, y)) ** 2) @ wy))
    if with_derivative:
        d = data.derivative_values(xs)[cell].T - series.diff_x().grid(xs, y)
        gap += np.sqrt(np.max((d ** 2) @ wy))
    return float(gap)


def _thresholds(thresholds) -> dict:
    names = PARAM_NAMES_2D + PARAM_NAMES_1D
    if thresholds is None:
        return {n: DEFAULT_EPS for n in names}
    if np.isscalar(thresholds):
        return {n: float(thresholds) for n in names}
    out = {n: DEFAULT_EPS for n in names}
    out.update({k: float(v) for k, v in thresholds.items()})
    return out


def _fit_all(ens: StepEnsemble, M: int, M_y: int):
    fits2 = {
        "lam": fit_2d(ens.lam, M, M_y, True),
        "mu": fit_2d(ens.mu, M, M_y, True),
        "W": fit_2d(ens.w, M, M_y, False),
        "theta": fit_2d(ens.theta, M, M_y, False),
    }
    fits1 = {
        "Q": fit_1d(StepFunction(ens.q), M_y),
        "R": fit_1d(StepFunction(ens.r), M_y),
        "F": fit_1d(StepFunction(ens.f), M_y),
        "g": fit_1d(ens.g_step(), M_y),
    }
    return fits2, fits1


def run_algorithm1(ens: StepEnsemble, M: int = 3, M_y: int = 1, thresholds=None,
                   adaptive: bool = True, max_My: int | None = None):
    """Fit all continuum parameters; raise ``M_y`` until every gap is below its threshold.

    Returns ``(ContinuumParams, FitReport)``. When the cap is reached without
    meeting the thresholds the best (highest-order) fit is returned with
    ``report.warning`` set.
    """
    thr = _thresholds(thresholds)
    cap = M if max_My is None else min(max_My, M)
    if M_y > M:
        raise FitError("M_y must not exceed M")
    history = []
    My = M_y
    while True:
        fits2, fits1 = _fit_all(ens, M, My)
        gaps = {
            "lam": sup_gap_2d(fits2["lam"].series, ens.lam, True),
            "mu": sup_gap_2d(fits2["mu"].series, ens.mu, True),
            "W": sup_gap_2d(fits2["W"].series, ens.w, False),
            "theta": sup_gap_2d(fits2["theta"].series, ens.theta, False),
        }
        gaps.update({k: v.l2_error for k, v in fits1.items()})
        ok = all(gaps[k] < thr[k] for k in gaps)
        history.append({"M_y": My, "gaps": gaps, "satisfied": ok})
        log.info("M_y=%d gaps=%s", My, gaps)
        if ok or not adaptive or My >= cap:
            break
        My += 1

    refitted = []
    for name, data in (("lam", ens.lam), ("mu", ens.mu)):
        fr = fits2[name]
        xs = np.linspace(0, 1, SUP_GRID)
        if np.min(fr.series.grid(xs, xs)) <= 0:
            new = positivity_refit(fr.series, fr.problem)
            fits2[name] = _result_2d(new, fr.problem)
            refitted.append(name)

    params = ContinuumParams(
        fits2["lam"].series, fits2["mu"].series, fits2["W"].series, fits2["theta"].series,
        fits1["Q"].series, fits1["R"].series, fits1["F"].series, fits1["g"].series,
        ens.y1, ens.y2)
    warning = None
    if not ok and adaptive:
        warning = f"accuracy thresholds not met at M_y = {My} (cap {cap})"
        warnings.warn(warning, FitWarning, stacklevel=2)
    report = FitReport(
        M=M, M_y=My,
        residuals={**{k: v.residual for k, v in fits2.items()}, **{k: v.residual for k, v in fits1.items()}},
        deriv_residuals={k: fits2[k].deriv_residual for k in ("lam", "mu")},
        l2_errors={**{k: v.l2_error for k, v in fits2.items()}, **{k: v.l2_error for k, v in fits1.items()}},
        gaps=gaps, thresholds=thr, satisfied=ok, history=history, refitted=refitted,
        warning=warning)
    return params, report

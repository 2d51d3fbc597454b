"""Goursat kernels on the triangle, G1/G2, the Lyapunov stability condition and detectability.

The four PDE-PDE kernels are solved pointwise in y. Multiplying each kernel by
the transport speed at ``xi`` turns the system into pure transport along the
characteristics with coupling sources:

* ``lam(xi) N11`` and ``mu(xi) N22`` travel forward to the edge x = 1, where
  ``N21 = R N11`` and ``N22 = R N12``;
* ``mu(xi) N12`` and ``lam(xi) N21`` travel backward to the diagonal, where
  ``N12 = -W/(lam + mu)`` and ``N21 = theta/(lam + mu)``.

Sampling the characteristic integrals with the trapezoid rule and linear
interpolation on the triangular grid gives an affine map ``N -> B N + c``,
iterated to a fixed point.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .basis import gauss_nodes
from .errors import AssumptionViolation, NumericalFailure
from .fit import ContinuumParams
from .gains import DENOM_TOL, eigensystem, solve_modes

log = logging.getLogger(__name__)

DEFAULT_GRID = 40
DEFAULT_TOL = 1e-11
MAX_ITER = 300
R_MIN = 1e-12
N_CHEB = 33
N_DELTA = 40


def y_samples(n: int = N_CHEB) -> np.ndarray:
    """Chebyshev points of [0, 1] plus both endpoints, ascending."""
    k = np.arange(n)
    cheb = 0.5 * (1 - np.cos(np.pi * (k + 0.5) / n))
    return np.concatenate([[0.0], cheb, [1.0]])


# ---------------------------------------------------------------- triangle

class TriangleGrid:
    """Nodes ``(x_i, xi_j) = (i h, j h)`` with ``0 <= j <= i <= n``."""

    def __init__(self, n: int):
        if n < 2:
            raise ValueError("grid needs at least 2 intervals")
        self.n = n
        self.h = 1.0 / n
        i, j = np.tril_indices(n + 1)
        self.i, self.j = i, j
        self.x, self.xi = i * self.h, j * self.h
        self.size = i.size

    def index(self, i, j):
        return i * (i + 1) // 2 + j

    def interp_weights(self, X, XI):
        """Linear interpolation stencil: ``(nodes, weights)`` each of shape ``X.shape + (4,)``."""
        n, h = self.n, self.h
        X = np.clip(X, 0.0, 1.0)
        XI = np.clip(np.minimum(XI, X), 0.0, 1.0)
        a = np.minimum(np.floor(X / h).astype(int), n - 1)
        b = np.minimum(np.floor(XI / h).astype(int), n - 1)
        b = np.minimum(b, a)
        p = X / h - a
        q = np.clip(XI / h - b, 0.0, 1.0)
        diag = b == a
        q = np.where(diag, np.minimum(q, p), q)
        nodes = np.stack([self.index(a, b), self.index(a + 1, b),
                          self.index(a + 1, np.minimum(b + 1, a + 1)),
                          self.index(a, np.minimum(b + 1, a))], axis=-1)
        w_sq = np.stack([(1 - p) * (1 - q), p * (1 - q), p * q, (1 - p) * q], axis=-1)
        # lower-right triangle of a diagonal cell: (a, a), (a+1, a), (a+1, a+1)
        w_tr = np.stack([1 - p, p - q, q, np.zeros_like(p)], axis=-1)
        weights = np.where(diag[..., None], w_tr, w_sq)
        return nodes, weights


class _Travel:
    """Travel time ``tau(x) = int_0^x ds / c(s)`` and its inverse for one speed profile."""

    def __init__(self, speed, n_fine: int = 4001):
        xf = np.linspace(0.0, 1.0, n_fine)
        inv = 1.0 / speed(xf)
        tau = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * np.diff(xf))])
        self.xf, self.tf = xf, tau
        self.speed = speed

    def tau(self, x):
        return np.interp(x, self.xf, self.tf)

    def inv(self, t):
        return np.interp(t, self.tf, self.xf)


# ------------------------------------------------------------------ kernels

@dataclass
class KernelGrid:
    y: float
    grid: TriangleGrid = field(repr=False)
    N11: np.ndarray = field(repr=False)
    N12: np.ndarray = field(repr=False)
    N21: np.ndarray = field(repr=False)
    N22: np.ndarray = field(repr=False)
    iterations: int = 0
    change: float = 0.0
    method: str = "fixed-point"

    def node_values(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def at_xi0(self, name: str) -> np.ndarray:
        """Values at ``xi = 0`` ordered by x."""
        g = self.grid
        return getattr(self, name)[g.index(np.arange(g.n + 1), 0)]

    def diagonal(self, name: str) -> np.ndarray:
        g = self.grid
        k = np.arange(g.n + 1)
        return getattr(self, name)[g.index(k, k)]

    def edge(self, name: str) -> np.ndarray:
        """Values on ``x = 1`` ordered by xi."""
        g = self.grid
        return getattr(self, name)[g.index(g.n, np.arange(g.n + 1))]


def _trap(S):
    w = np.ones(S)
    w[0] = w[-1] = 0.5
    return w / (S - 1)


def _build_operator(params: ContinuumParams, y: float, grid: TriangleGrid):
    """Affine map ``N -> B N + c`` on the stacked vector ``[N11, N12, N21, N22]``."""
    yv = np.array([y])

    def lam(x):
        return params.lam(x, np.full_like(x, y))

    def mu(x):
        return params.mu(x, np.full_like(x, y))

    def W(x):
        return params.W(x, np.full_like(x, y))

    def th(x):
        return params.theta(x, np.full_like(x, y))

    R = float(params.R(yv)[0])
    if abs(R) < R_MIN:
        raise AssumptionViolation(f"R(y) = 0 at y = {y:.6g}: kernel equations ill-posed")
    Tl, Tm = _Travel(lam), _Travel(mu)
    n_nodes = grid.size
    S = grid.n + 1
    t = np.linspace(0.0, 1.0, S)
    wt = _trap(S)
    x, xi = grid.x, grid.xi
    rows, cols, vals = [], [], []
    c = np.zeros(4 * n_nodes)
    blk = {"N11": 0, "N12": 1, "N21": 2, "N22": 3}

    def add(target, source, X, XI, coef):
        nodes, w = grid.interp_weights(X, XI)
        r = np.broadcast_to(np.arange(n_nodes)[:, None, None], nodes.shape) + blk[target] * n_nodes
        rows.append(r.ravel())
        cols.append((nodes + blk[source] * n_nodes).ravel())
        vals.append((w * coef[..., None]).ravel())

    # N11 and N22: forward along tau(X) - tau(XI) = const up to X = 1
    for target, source, T, speed, src_coef, sign, edge_factor in (
            ("N11", "N21", Tl, lam, W, -1.0, 1.0 / R),
            ("N22", "N12", Tm, mu, th, 1.0, R)):
        X = x[:, None] + (1.0 - x)[:, None] * t[None, :]
        const = T.tau(x) - T.tau(xi)
        XI = T.inv(T.tau(X) - const[:, None])
        XI = np.minimum(XI, X)
        dX = (1.0 - x)[:, None] * wt[None, :]
        sx = speed(xi)
        coef = sign * speed(XI) * src_coef(X) / speed(X) * dX / sx[:, None]
        add(target, source, X, XI, coef)
        xe = XI[:, -1]
        coef_e = edge_factor * speed(xe) / sx
        add(target, source, np.ones_like(xe)[:, None], xe[:, None], coef_e[:, None])

    # N12 and N21: backward to the diagonal
    for target, source, Tx, Txi, sx_fn, diag_fn, src_coef, sign in (
            ("N12", "N22", Tl, Tm, mu, lambda z: -W(z) / (lam(z) + mu(z)), W, 1.0),
            ("N21", "N11", Tm, Tl, lam, lambda z: th(z) / (lam(z) + mu(z)), th, -1.0)):
        tx, txi = Tx.tau(x), Txi.tau(xi)
        lo, hi = np.zeros_like(x), np.maximum(tx, 1e-300)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            gap = Tx.inv(tx - mid) - Txi.inv(np.minimum(txi + mid, Txi.tf[-1]))
            lo = np.where(gap > 0, mid, lo)
            hi = np.where(gap > 0, hi, mid)
        sig = 0.5 * (lo + hi)
        sig = np.where(x - xi <= 0, 0.0, sig)
        sg = sig[:, None] * t[None, :]
        X = Tx.inv(tx[:, None] - sg)
        XI = np.minimum(Txi.inv(np.minimum(txi[:, None] + sg, Txi.tf[-1])), X)
        z = Tx.inv(tx - sig)
        sxi_speed = sx_fn(xi)
        # source weight uses the speed at XI of the transported variable
        coef = sign * sx_fn(XI) * src_coef(X) * (sig[:, None] * wt[None, :]) / sxi_speed[:, None]
        add(target, source, X, XI, coef)
        c[blk[target] * n_nodes:(blk[target] + 1) * n_nodes] = sx_fn(z) * diag_fn(z) / sxi_speed

    B = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(4 * n_nodes, 4 * n_nodes))
    B.sum_duplicates()
    return B, c


def solve_N_kernels(params: ContinuumParams, y: float, n: int = DEFAULT_GRID,
                    tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER,
                    allow_direct: bool = True) -> KernelGrid:
    """Kernels at one y by fixed-point iteration of the characteristic integral equations.

    If the iteration stalls (typically when ``|R(y)|`` is small and the edge
    coupling ``1/R`` is large) and ``allow_direct`` is set, the same affine
    system is solved by sparse LU and the method is recorded.
    """
    grid = TriangleGrid(n)
    B, c = _build_operator(params, float(y), grid)
    N = np.zeros_like(c)
    change, it, method = np.inf, 0, "fixed-point"
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, max_iter + 1):
            N_new = B @ N + c
            change = float(np.max(np.abs(N_new - N)))
            N = N_new
            scale = max(1.0, float(np.max(np.abs(N))))
            if not np.isfinite(change) or change <= tol * scale:
                break
    if not (np.isfinite(change) and change <= tol * max(1.0, float(np.max(np.abs(N))))):
        if not allow_direct:
            raise NumericalFailure(
                f"kernel iteration did not converge at y = {y:.6g} (last change {change:.3g})")
        A = sparse.identity(B.shape[0], format="csc") - B.tocsc()
        N = spsolve(A, c)
        change = float(np.max(np.abs(A @ N - c)))
        method = "direct"
        if not np.isfinite(change) or change > 1e-8 * max(1.0, float(np.max(np.abs(N)))):
            raise NumericalFailure(f"kernel system singular at y = {y:.6g}")
        log.info("kernel fixed point stalled at y=%.4g; used direct solve", y)
    k = grid.size
    return KernelGrid(float(y), grid, N[:k], N[k:2 * k], N[2 * k:3 * k], N[3 * k:],
                      iterations=it, change=change, method=method)


def compute_G12(kernels: KernelGrid, params: ContinuumParams):
    """``G1(x) = N11(x, 0) lam(0) Q - N12(x, 0) mu(0)`` and ``G2`` likewise with N21, N22."""
    y = np.array([kernels.y])
    lam0 = float(params.lam(np.zeros(1), y)[0])
    mu0 = float(params.mu(np.zeros(1), y)[0])
    Q = float(params.Q(y)[0])
    G1 = kernels.at_xi0("N11") * lam0 * Q - kernels.at_xi0("N12") * mu0
    G2 = kernels.at_xi0("N21") * lam0 * Q - kernels.at_xi0("N22") * mu0
    return G1, G2


# ---------------------------------------------------------------- stability

@dataclass
class StabilityConstants:
    M_RQ: float
    M_R: float
    m_lam: float
    m_mu: float
    inv_speed_sum: np.ndarray      # 1/lam(1, y) + 1/mu(1, y) at the y samples


def stability_constants(params: ContinuumParams, y, n_dense: int = 201) -> StabilityConstants:
    yd = np.linspace(0, 1, 2001)
    QR = params.Q(yd) * params.R(yd)
    xs = np.linspace(0, 1, n_dense)
    y = np.asarray(y, dtype=float)
    one = np.ones_like(y)
    return StabilityConstants(
        M_RQ=float(np.max(np.abs(QR))), M_R=float(np.max(np.abs(params.R(yd)))),
        m_lam=float(np.min(params.lam.grid(xs, xs))), m_mu=float(np.min(params.mu.grid(xs, xs))),
        inv_speed_sum=1.0 / params.lam(one, y) + 1.0 / params.mu(one, y))


def stability_rhs(delta, M_RQ, M_R, m_lam, m_mu, inv_speed_sum):
    """Right-hand side of the M_G condition minimised over the y samples."""
    delta = np.atleast_1d(np.asarray(delta, dtype=float))[:, None]
    e = np.exp(delta * np.atleast_1d(inv_speed_sum)[None, :])
    num = 1.0 - M_RQ ** 2 * e
    den = np.exp(delta / m_mu) / (delta * m_mu) + M_R ** 2 / (delta * m_lam) * e
    return np.min(0.5 * num / den, axis=1)


def delta_sup(M_RQ: float, inv_speed_sum, m_lam: float, m_mu: float) -> float:
    """Supremum of ``delta`` with ``M_RQ^2 max_y exp(delta (1/lam + 1/mu)(1, y)) < 1``."""
    if M_RQ >= 1:
        return 0.0
    if M_RQ == 0:
        return 20.0 * max(m_lam, m_mu)
    return float(-2.0 * np.log(M_RQ) / np.max(inv_speed_sum))


@dataclass
class StabilityReport:
    y: np.ndarray
    G1: np.ndarray                 # (ny, nx)
    G2: np.ndarray
    M_G1: float
    M_G2: float
    M_RQ: float
    M_R: float
    m_lam: float
    m_mu: float
    delta: float | None
    rhs: float
    condition_met: bool
    margin: float
    reason: str = ""
    kernel_diagnostics: list = field(default_factory=list)

    @property
    def M_G(self) -> float:
        return max(self.M_G1, self.M_G2)

    def to_dict(self) -> dict:
        return {
            "condition_met": self.condition_met, "margin": self.margin, "delta": self.delta,
            "rhs": self.rhs, "M_G": self.M_G, "M_G1": self.M_G1, "M_G2": self.M_G2,
            "M_RQ": self.M_RQ, "M_R": self.M_R, "m_lam": self.m_lam, "m_mu": self.m_mu,
            "reason": self.reason, "y_samples": self.y.tolist(),
            "kernels": self.kernel_diagnostics,
        }


def check_stability(params: ContinuumParams, G1, G2, y, n_delta: int = N_DELTA) -> StabilityReport:
    """Evaluate the M_G condition, searching delta on a log grid below its admissible bound."""
    G1, G2 = np.atleast_2d(G1), np.atleast_2d(G2)
    y = np.asarray(y, dtype=float)
    k = stability_constants(params, y)
    MG1, MG2 = float(np.max(np.abs(G1))), float(np.max(np.abs(G2)))
    MG = max(MG1, MG2)
    common = dict(y=y, G1=G1, G2=G2, M_G1=MG1, M_G2=MG2, M_RQ=k.M_RQ, M_R=k.M_R,
                  m_lam=k.m_lam, m_mu=k.m_mu)
    if k.m_lam <= 0 or k.m_mu <= 0:
        return StabilityReport(delta=None, rhs=-np.inf, condition_met=False, margin=-np.inf,
                               reason="transport speeds not positive", **common)
    if k.M_RQ >= 1:
        return StabilityReport(delta=None, rhs=-np.inf, condition_met=False, margin=-np.inf,
                               reason="M_RQ >= 1: delta condition unsatisfiable", **common)
    d_hi = delta_sup(k.M_RQ, k.inv_speed_sum, k.m_lam, k.m_mu) * (1 - 1e-6)
    d_lo = min(1e-4, 1e-4 * d_hi)
    deltas = np.geomspace(d_lo, d_hi, n_delta)
    rhs = stability_rhs(deltas, k.M_RQ, k.M_R, k.m_lam, k.m_mu, k.inv_speed_sum)
    best = int(np.argmax(rhs))
    margin = float(rhs[best] - MG)
    return StabilityReport(delta=float(deltas[best]), rhs=float(rhs[best]),
                           condition_met=bool(margin >= 0), margin=margin,
                           reason="" if margin >= 0 else "M_G exceeds the admissible bound",
                           **common)


def certify(params: ContinuumParams, y=None, n: int = DEFAULT_GRID,
            tol: float = DEFAULT_TOL) -> tuple[StabilityReport, list[KernelGrid]]:
    """Solve kernels at every y sample, form G1/G2 and evaluate the stability condition."""
    y = y_samples() if y is None else np.asarray(y, dtype=float)
    grids, G1, G2, diag = [], [], [], []
    for yj in y:
        kg = solve_N_kernels(params, yj, n, tol)
        g1, g2 = compute_G12(kg, params)
        grids.append(kg)
        G1.append(g1)
        G2.append(g2)
        diag.append({"y": float(yj), "iterations": kg.iterations, "method": kg.method,
                     "change": kg.change})
    rep = check_stability(params, np.array(G1), np.array(G2), y)
    rep.kernel_diagnostics = diag
    return rep, grids


# ----------------------------------------------------------- detectability

@dataclass
class DetectabilityReport:
    s: np.ndarray
    min_denominator: np.ndarray     # per eigenvalue, over the y samples
    output_gain: np.ndarray         # |int g v^k(0, y) dy|
    flagged: list

    @property
    def ok(self) -> bool:
        return not self.flagged

    def to_dict(self) -> dict:
        return {"eigenvalues": [[float(z.real), float(z.imag)] for z in self.s],
                "min_denominator": self.min_denominator.tolist(),
                "output_gain": self.output_gain.tolist(), "flagged": self.flagged}


def detectability_probe(params: ContinuumParams, A, C, n_y: int = 24,
                        threshold: float = DENOM_TOL) -> DetectabilityReport:
    """Transfer denominators and output gains ``|G(s_k) C v_k|`` for every eigenvalue."""
    eig = eigensystem(A)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Cv = (C @ eig.V)[0]
    ys = y_samples()
    den = np.abs(solve_modes(params, eig.s, np.ones_like(Cv), ys, strict=False).denominator)
    if params.y2 > params.y1:
        rule = gauss_nodes(n_y, params.y1, params.y2)
        sol = solve_modes(params, eig.s, Cv, rule.nodes, strict=False)
        out = np.abs(sol.v0 @ (rule.weights * params.g(rule.nodes)))
    else:
        out = np.zeros(eig.s.size)
    flagged = []
    for k, sk in enumerate(eig.s):
        md = float(np.min(den[k]))
        if md < threshold:
            flagged.append({"s": [float(sk.real), float(sk.imag)], "issue": "denominator",
                            "value": md})
        if not out[k] >= threshold:
            flagged.append({"s": [float(sk.real), float(sk.imag)], "issue": "output gain",
                            "value": float(out[k])})
    return DetectabilityReport(eig.s, np.min(den, axis=1), out, flagged)

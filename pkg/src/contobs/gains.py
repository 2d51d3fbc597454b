"""Observer gain synthesis.

The ODE-coupling kernels solve, pointwise in y,

    lam g1_x + g1 A - W g2 = 0,     mu g2_x - g2 A + theta g1 = 0,
    g1(0) = Q g2(0),                g2(1) = R g1(1) + F C.

They are built two ways: mode by mode on the eigenvectors of ``A`` with
piecewise power series in x, and directly from the transition matrix of the
2n x 2n row system. ``L`` comes from the dual Riccati equation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import legendre as npleg
from scipy.integrate import solve_ivp
from scipy.linalg import expm, schur, solve_continuous_lyapunov

from .basis import LegendreSeries1D, LegendreSeries2D, gauss_nodes, shifted_legendre
from .errors import AssumptionViolation, NumericalFailure
from .fit import ContinuumParams

SERIES_ORDER = 40
SERIES_TOL = 1e-12
DENOM_TOL = 1e-10
IMAG_TOL = 1e-8
MAX_SEGMENTS = 512


class GainSynthesisError(NumericalFailure):
    pass


# ---------------------------------------------------------------- eigensystem

@dataclass(frozen=True)
class Eigensystem:
    s: np.ndarray         # (n,) eigenvalues
    V: np.ndarray         # (n, n) right eigenvectors as columns
    Vstar: np.ndarray     # (n, n) left duals as rows, Vstar @ V = I

    def reconstruct(self) -> np.ndarray:
        return (self.V * self.s) @ self.Vstar


def eigensystem(A, sep_tol: float = 1e-8) -> Eigensystem:
    """Right eigenvectors and biorthogonal left duals of a matrix with simple spectrum."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    s, V = np.linalg.eig(A)
    n = s.size
    scale = max(1.0, np.max(np.abs(s)))
    for i in range(n):
        for j in range(i + 1, n):
            if abs(s[i] - s[j]) < sep_tol * scale:
                raise AssumptionViolation(
                    f"repeated eigenvalue {s[i]:.6g}: only geometric multiplicity one is supported")
    V = V.astype(complex)
    Vstar = np.linalg.inv(V)
    return Eigensystem(s.astype(complex), V, Vstar)


# ------------------------------------------------------------- series tools

@lru_cache(maxsize=None)
def _leg_to_mono_cached(M: int, xa: float) -> np.ndarray:
    T = np.zeros((M + 1, M + 1))
    shift = Polynomial([xa, 1.0])
    for i in range(M + 1):
        p = npleg.Legendre.basis(i, domain=[0.0, 1.0]).convert(kind=Polynomial)
        c = p(shift).coef
        T[: c.size, i] = c
    return T


def legendre_to_monomial(M: int, xa: float) -> np.ndarray:
    """Matrix taking shifted-Legendre coefficients in x to monomials in ``x - xa``."""
    return _leg_to_mono_cached(int(M), float(xa))


def _x_monomials(series: LegendreSeries2D, xa: float, y) -> np.ndarray:
    """Monomial coefficients about ``xa`` at each y; shape ``(M + 1, ny)``."""
    return legendre_to_monomial(series.total_order, xa) @ series.x_coeffs(y)


@dataclass
class ModeSolution:
    """Piecewise power series of ``(u^k, v^k)`` in x for every eigenvalue and y sample."""

    s: np.ndarray                 # (K,)
    y: np.ndarray                 # (ny,)
    edges: np.ndarray             # (nseg + 1,)
    U: np.ndarray                 # (nseg, order + 1, K, ny) complex
    V: np.ndarray
    v0: np.ndarray                # (K, ny)
    denominator: np.ndarray       # (K, ny)
    order: int = SERIES_ORDER

    def _locate(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x < -1e-14) or np.any(x > 1 + 1e-14):
            raise ValueError("x must lie in [0, 1]")
        seg = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.edges.size - 2)
        return x, seg, x - self.edges[seg]

    def __call__(self, x, derivative: bool = False):
        """``(u, v)`` at x; arrays of shape ``(nx, K, ny)``."""
        x, seg, t = self._locate(x)
        out = []
        for C in (self.U, self.V):
            c = C[seg]                                     # (nx, order+1, K, ny)
            if derivative:
                k = np.arange(1, c.shape[1])[None, :, None, None]
                c = c[:, 1:] * k
            acc = np.zeros((x.size,) + c.shape[2:], dtype=complex)
            for j in range(c.shape[1] - 1, -1, -1):
                acc = acc * t[:, None, None] + c[:, j]
            out.append(acc)
        return out[0], out[1]


def _segment_series(u0, v0, s, lam_c, mu_c, W_c, th_c, order):
    """Taylor coefficients of one segment; inputs broadcast to ``(K, ny)``."""
    shape = np.broadcast(u0, v0).shape
    u = np.zeros((order + 1,) + shape, dtype=complex)
    v = np.zeros_like(u)
    u[0], v[0] = u0, v0
    s = s[:, None]
    dl, dm, dw, dt = (c.shape[0] - 1 for c in (lam_c, mu_c, W_c, th_c))
    for k in range(order):
        ru = -s * u[k]
        rv = s * v[k]
        for j in range(min(k, dw) + 1):
            ru = ru + W_c[j] * v[k - j]
        for j in range(min(k, dt) + 1):
            rv = rv - th_c[j] * u[k - j]
        for j in range(1, min(k, dl) + 1):
            ru = ru - lam_c[j] * (k - j + 1) * u[k - j + 1]
        for j in range(1, min(k, dm) + 1):
            rv = rv - mu_c[j] * (k - j + 1) * v[k - j + 1]
        u[k + 1] = ru / (lam_c[0] * (k + 1))
        v[k + 1] = rv / (mu_c[0] * (k + 1))
    return u, v


def _series_converged(C, h, order, tol):
    powers = h ** np.arange(order + 1)
    scaled = np.abs(C) * powers[:, None, None]
    tail = np.max(scaled[-2:], axis=0)
    return bool(np.all(tail <= tol * np.maximum(np.max(scaled, axis=0), 1e-300)))


def _initial_segments(params: ContinuumParams, s, y) -> int:
    xs = np.linspace(0, 1, 21)
    lam_min = np.min(params.lam.grid(xs, y))
    mu_min = np.min(params.mu.grid(xs, y))
    w_max = np.max(np.abs(params.W.grid(xs, y)))
    t_max = np.max(np.abs(params.theta.grid(xs, y)))
    rate = np.max(np.abs(s)) * (1 / lam_min + 1 / mu_min) / 2 + w_max / lam_min + t_max / mu_min
    return int(max(1, np.ceil(rate / 2.0)))


def solve_modes(params: ContinuumParams, s, Cv, y, order: int = SERIES_ORDER,
                tol: float = SERIES_TOL, strict: bool = True) -> ModeSolution:
    """Solve the mode boundary-value problems for all ``s_k`` at all ``y``.

    ``u' = (-s u + W v)/lam``, ``v' = (s v - theta u)/mu``,
    ``u(0) = Q v(0)``, ``v(1) = R u(1) + F C v_k``.
    """
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    Cv = np.atleast_1d(np.asarray(Cv, dtype=complex))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    Q, R, F = params.Q(y), params.R(y), params.F(y)
    nseg = _initial_segments(params, s, y)
    while True:
        edges = np.linspace(0.0, 1.0, nseg + 1)
        h = edges[1] - edges[0]
        u_a = np.broadcast_to(Q.astype(complex), (s.size, y.size)).copy()
        v_a = np.ones((s.size, y.size), dtype=complex)
        Us, Vs, ok = [], [], True
        for xa in edges[:-1]:
            coeffs = [_x_monomials(p, xa, y) for p in (params.lam, params.mu, params.W, params.theta)]
            u, v = _segment_series(u_a, v_a, s, *coeffs, order)
            ok = ok and _series_converged(u, h, order, tol) and _series_converged(v, h, order, tol)
            powers = h ** np.arange(order + 1)
            u_a = np.tensordot(powers, u, axes=1)
            v_a = np.tensordot(powers, v, axes=1)
            Us.append(u)
            Vs.append(v)
        if ok:
            break
        if nseg >= MAX_SEGMENTS:
            raise NumericalFailure(f"mode power series did not converge with {nseg} segments")
        nseg *= 2
    den = v_a - R[None, :] * u_a
    bad = np.abs(den) < DENOM_TOL
    if np.any(bad) and strict:
        k, j = np.argwhere(bad)[0]
        raise AssumptionViolation(
            f"transfer denominator vanishes at s = {s[k]:.6g}, y = {y[j]:.6g}")
    v0 = F[None, :] * Cv[:, None] / np.where(bad, np.inf, den)
    U = np.stack(Us) * v0
    V = np.stack(Vs) * v0
    return ModeSolution(s, y, edges, U, V, v0, den, order)


def solve_mode(params: ContinuumParams, s_k: complex, Cv_k: complex, y, order: int = SERIES_ORDER):
    """Single-eigenvalue convenience wrapper; returns the :class:`ModeSolution`."""
    return solve_modes(params, [s_k], [Cv_k], y, order)


# ------------------------------------------------------------------ kernels

@dataclass
class GammaKernels:
    eig: Eigensystem
    modes: ModeSolution
    C: np.ndarray

    @property
    def y(self) -> np.ndarray:
        return self.modes.y

    @property
    def n(self) -> int:
        return self.eig.s.size

    def _assemble(self, u, v):
        g1 = np.einsum("xky,kn->xyn", u, self.eig.Vstar)
        g2 = np.einsum("xky,kn->xyn", v, self.eig.Vstar)
        imag = max(np.max(np.abs(g1.imag), initial=0), np.max(np.abs(g2.imag), initial=0))
        scale = max(1.0, np.max(np.abs(g1)), np.max(np.abs(g2)))
        if imag > IMAG_TOL * scale:
            raise NumericalFailure(f"assembled kernels not real (imag residue {imag:.3g})")
        return g1.real, g2.real

    def gamma(self, x):
        """``(gamma1, gamma2)`` with shape ``(nx, ny, n)``."""
        return self._assemble(*self.modes(x))

    def gamma_dx(self, x):
        return self._assemble(*self.modes(x, derivative=True))

    def gamma2_at_zero(self) -> np.ndarray:
        return self.gamma([0.0])[1][0]

    def compress_y(self, order: int, x=(0.0,)):
        """Legendre-in-y fit of the sampled kernels; returns ``(coeffs, max_error)``."""
        y = self.y
        g1, g2 = self.gamma(x)
        Ly = shifted_legendre(order, y).T                       # (ny, order+1)
        out, err = [], 0.0
        for g in (g1, g2):
            flat = g.transpose(1, 0, 2).reshape(y.size, -1)
            c, *_ = np.linalg.lstsq(Ly, flat, rcond=None)
            err = max(err, float(np.max(np.abs(Ly @ c - flat))))
            out.append(c.reshape((order + 1,) + g.shape[:1] + g.shape[2:]))
        return out, err


def assemble_gamma(modes: ModeSolution, eig: Eigensystem, C) -> GammaKernels:
    return GammaKernels(eig, modes, np.atleast_2d(np.asarray(C, dtype=float)))


def compute_gamma(params: ContinuumParams, A, C, y, order: int = SERIES_ORDER) -> GammaKernels:
    """Eigen-decompose ``A``, solve every mode at ``y`` and assemble the kernels."""
    eig = eigensystem(A)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Cv = (C @ eig.V)[0]
    return assemble_gamma(solve_modes(params, eig.s, Cv, y, order), eig, C)


def _row_system(params: ContinuumParams, A, y):
    n = A.shape[0]
    I = np.eye(n)
    xs = np.linspace(0, 1, 7)
    const = all(np.ptp(getattr(params, p).grid(xs, [y])) < 1e-15
                for p in ("lam", "mu", "W", "theta"))

    def M(x):
        lam, mu = params.lam(x, y), params.mu(x, y)
        W, th = params.W(x, y), params.theta(x, y)
        return np.block([[-A / lam, -th / mu * I], [W / lam * I, A / mu]])
    return M, const


def transition_matrix(params: ContinuumParams, A, y: float, x_eval,
                      rtol: float = 1e-12, atol: float = 1e-13) -> np.ndarray:
    """``Psi(x)`` with ``Psi' = Psi M(x)``, ``Psi(0) = I``; shape ``(nx, 2n, 2n)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    x_eval = np.atleast_1d(np.asarray(x_eval, dtype=float))
    M, const = _row_system(params, A, y)
    N = 2 * A.shape[0]
    if const:
        M0 = M(0.0)
        return np.stack([expm(x * M0) for x in x_eval])

    def rhs(x, z):
        return (z.reshape(N, N) @ M(x)).ravel()
    sol = solve_ivp(rhs, (0.0, 1.0), np.eye(N).ravel(), method="DOP853", t_eval=np.unique(
        np.concatenate([x_eval, [1.0]])), rtol=rtol, atol=atol)
    if not sol.success:
        raise NumericalFailure(f"transition-matrix integration failed: {sol.message}")
    lookup = {float(t): i for i, t in enumerate(sol.t)}
    return np.stack([sol.y[:, lookup[float(x)]].reshape(N, N) for x in x_eval])


def gamma_direct(params: ContinuumParams, A, C, y, x_eval):
    """Kernels from ``gamma0 = F C ([Q I, I] Psi(1) [-R I; I])^-1`` and ``gamma(x) = [Q gamma0, gamma0] Psi(x)``.

    Returns ``(gamma1, gamma2)`` with shape ``(nx, ny, n)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    I = np.eye(n)
    x_eval = np.atleast_1d(np.asarray(x_eval, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    g1 = np.empty((x_eval.size, y.size, n))
    g2 = np.empty_like(g1)
    for j, yj in enumerate(y):
        Q, R, F = float(params.Q(yj)), float(params.R(yj)), float(params.F(yj))
        Psi = transition_matrix(params, A, yj, np.concatenate([x_eval, [1.0]]))
        S = np.hstack([Q * I, I]) @ Psi[-1] @ np.vstack([-R * I, I])
        if np.linalg.cond(S) > 1e12:
            raise AssumptionViolation(f"singular boundary matrix at y = {yj:.6g}")
        gam0 = np.linalg.solve(S.T, (F * C).T).T
        rows = np.hstack([Q * gam0, gam0]) @ Psi[:-1]            # (nx, 1, 2n)
        g1[:, j] = rows[:, 0, :n]
        g2[:, j] = rows[:, 0, n:]
    return g1, g2


# ------------------------------------------------------------ output pairing

def pair_output(gamma2_at_zero, g: LegendreSeries1D, y1: float, y2: float,
                n_nodes: int = 24) -> np.ndarray:
    """Gauss value of ``int_{y1}^{y2} g(y) gamma2(0, y) dy``.

    ``gamma2_at_zero`` maps a y array to rows of shape ``(ny, n)``.
    """
    if y2 <= y1:
        probe = np.atleast_2d(gamma2_at_zero(np.array([y1])))
        return np.zeros(probe.shape[1])
    rule = gauss_nodes(n_nodes, y1, y2)
    rows = np.atleast_2d(gamma2_at_zero(rule.nodes))
    return (rule.weights * g(rule.nodes)) @ rows


def pairing_row(params: ContinuumParams, A, C, n_nodes: int = 24, order: int = SERIES_ORDER):
    """Pairing row computed from mode solves at Gauss nodes of ``[y1, y2]``."""
    def g20(y):
        return compute_gamma(params, A, C, y, order).gamma2_at_zero()
    return pair_output(g20, params.g, params.y1, params.y2, n_nodes)


# ------------------------------------------------------------------- Riccati

def solve_dual_riccati(A, c, state_weight: float, input_weight: float, newton_steps: int = 6):
    """Stabilising ``P`` of ``A P + P A^T - P c^T c P / r + q I = 0``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    n = A.shape[0]
    if state_weight <= 0 or input_weight <= 0:
        raise GainSynthesisError("Riccati weights must be positive")
    At = A.T
    S = c.T @ c / input_weight
    Qw = state_weight * np.eye(n)
    H = np.block([[At, -S], [-Qw, -A]])
    tol = 1e-9 * max(1.0, np.linalg.norm(H, 1))
    T, Z, sdim = schur(H, output="real", sort=lambda re, im: re < -tol)
    if sdim != n:
        raise GainSynthesisError(
            f"Hamiltonian has {sdim} stable eigenvalues, expected {n}: pair not detectable")
    U1, U2 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(U1) > 1e14:
        raise GainSynthesisError("ill-conditioned stable subspace")
    P = np.linalg.solve(U1.T, U2.T).T
    P = 0.5 * (P + P.T)
    for _ in range(newton_steps):
        K = c @ P / input_weight                              # (1, n)
        Acl = At - c.T @ K
        P_new = solve_continuous_lyapunov(Acl.T, -(Qw + input_weight * K.T @ K))
        P_new = 0.5 * (P_new + P_new.T)
        done = np.max(np.abs(P_new - P)) <= 1e-15 * max(1.0, np.max(np.abs(P)))
        P = P_new
        if done:
            break
    res = A @ P + P @ A.T - P @ S @ P + Qw
    if np.max(np.abs(res)) > 1e-6 * max(1.0, np.max(np.abs(P)) ** 2 * np.max(np.abs(S)), state_weight):
        raise GainSynthesisError(f"Riccati residual {np.max(np.abs(res)):.3g} too large")
    return P


@dataclass
class ObserverGain:
    A: np.ndarray
    pairing: np.ndarray
    L: np.ndarray
    P: np.ndarray
    weights: tuple

    @property
    def closed_loop(self) -> np.ndarray:
        return self.A + np.outer(self.L, self.pairing)

    @property
    def spectral_abscissa(self) -> float:
        return float(np.max(np.linalg.eigvals(self.closed_loop).real))

    def to_dict(self) -> dict:
        return {"L": self.L.tolist(), "pairing": self.pairing.tolist(),
                "weights": list(self.weights), "spectral_abscissa": self.spectral_abscissa}


def synthesize_L(A, pairing, state_weight: float = 1e4, input_weight: float = 1.0) -> ObserverGain:
    """``L = -P pairing^T / r`` from the dual Riccati equation, certified Hurwitz."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    c = np.atleast_1d(np.asarray(pairing, dtype=float))
    P = solve_dual_riccati(A, c[None, :], state_weight, input_weight)
    L = -(P @ c) / input_weight
    gain = ObserverGain(A, c, L, P, (float(state_weight), float(input_weight)))
    if not gain.spectral_abscissa < 0:
        raise GainSynthesisError(
            f"closed loop not Hurwitz (abscissa {gain.spectral_abscissa:.3g})")
    return gain


# --------------------------------------------------------------- projection

@dataclass
class InjectionGains:
    """Injection gains ``P1 = gamma1 L`` and ``P2 = gamma2 L`` on the tensor Legendre basis.

    ``inner*`` hold ``<P, phi_k>`` in the x-fastest ordering; ``coeffs*`` the
    expansion coefficients.
    """

    N_x: int
    N_y: int
    inner1: np.ndarray
    inner2: np.ndarray
    projection_error: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def mass(self) -> np.ndarray:
        i = np.arange(self.N_x + 1)
        j = np.arange(self.N_y + 1)
        return (1.0 / np.outer(2 * j + 1, 2 * i + 1)).ravel()

    @property
    def coeffs1(self) -> np.ndarray:
        return self.inner1 / self.mass

    @property
    def coeffs2(self) -> np.ndarray:
        return self.inner2 / self.mass

    def evaluate(self, x, y):
        """Projected ``(P1, P2)`` on the tensor grid ``x`` by ``y``."""
        Lx = shifted_legendre(self.N_x, np.asarray(x, dtype=float))
        Ly = shifted_legendre(self.N_y, np.asarray(y, dtype=float))
        out = []
        for c in (self.coeffs1, self.coeffs2):
            Cm = c.reshape(self.N_y + 1, self.N_x + 1).T
            out.append(Lx.T @ Cm @ Ly)
        return out[0], out[1]

    def to_dict(self) -> dict:
        return {"N_x": self.N_x, "N_y": self.N_y, "P1": self.coeffs1.tolist(),
                "P2": self.coeffs2.tolist(), "projection_error": self.projection_error}


def project_P12(gamma_fn, L, N_x: int, N_y: int, n_x: int | None = None,
                n_y: int | None = None) -> InjectionGains:
    """Project ``gamma L`` onto ``L_i(x) L_j(y)``, ``i <= N_x``, ``j <= N_y``.

    ``gamma_fn(x, y)`` returns ``(gamma1, gamma2)`` of shape ``(nx, ny, n)``
    on the tensor grid.
    """
    L = np.asarray(L, dtype=float)
    n_x = n_x or max(2 * N_x + 16, 40)
    n_y = n_y or max(2 * N_y + 12, 16)
    rx, ry = gauss_nodes(n_x), gauss_nodes(n_y)
    g1, g2 = gamma_fn(rx.nodes, ry.nodes)
    P1, P2 = g1 @ L, g2 @ L                                   # (nx, ny)
    Lx = shifted_legendre(N_x, rx.nodes) * rx.weights          # (N_x+1, nx)
    Ly = shifted_legendre(N_y, ry.nodes) * ry.weights
    inner = [(Lx @ P @ Ly.T).T.ravel() for P in (P1, P2)]      # j-major, x fastest
    gains = InjectionGains(N_x, N_y, inner[0], inner[1])
    E1, E2 = gains.evaluate(rx.nodes, ry.nodes)
    scale = max(1.0, np.max(np.abs(P1)), np.max(np.abs(P2)))
    gains.projection_error = float(max(np.max(np.abs(E1 - P1)), np.max(np.abs(E2 - P2))) / scale)
    return gains


def kernel_gamma_fn(params: ContinuumParams, A, C, order: int = SERIES_ORDER):
    """Tensor-grid evaluator ``(x, y) -> (gamma1, gamma2)`` backed by mode solves."""
    def fn(x, y):
        return compute_gamma(params, A, C, y, order).gamma(x)
    return fn

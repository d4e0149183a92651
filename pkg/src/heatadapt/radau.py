"""Two-stage Radau IIA time stepping with residual estimator and adaptive loop.

The stepper is the hybrid Euler/Crank-Nicolson scheme: the continuous
piecewise quadratic ``u`` has a residual ``F - M u' - K u`` with zero mean on
every element and zero value at every right endpoint.

On an element ``[a, b]`` with ``h = b - a`` and local coordinate
``x = (t - a) / h`` the solution is

    u(x) = u_a + h * (k1 * x + (k2 - k1) * (3 x**2 - 2 x) / 4),

so ``u'`` is linear with ``u'(a + h/3) = k1`` and ``u'(b) = k2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from ._validation import check_int, check_theta, check_vector
from .errors import InvalidArgumentError, NumericalFailureError
from .time_mesh import TimeMesh, doerfler_mark, refine, uniform_mesh

__all__ = [
    "BUTCHER_A",
    "BUTCHER_B",
    "BUTCHER_C",
    "stability_function",
    "RhsFunction",
    "PiecewiseQuadraticRhs",
    "SplineSolution",
    "ModalSolution",
    "EstimateResult",
    "AdaptiveIterate",
    "radau_step",
    "solve_time",
    "crank_nicolson_solve",
    "eval_spline",
    "residual_moments",
    "estimate",
    "adaptive_loop",
    "xnorm_error",
    "nodal_error",
]

BUTCHER_A = np.array([[5.0 / 12.0, -1.0 / 12.0], [3.0 / 4.0, 1.0 / 4.0]])
BUTCHER_B = np.array([3.0 / 4.0, 1.0 / 4.0])
BUTCHER_C = np.array([1.0 / 3.0, 1.0])

# A = V diag(mu, conj(mu)) V^{-1}; one complex pencil solve yields both stages
_MU, _V = np.linalg.eig(BUTCHER_A)
_ORDER = np.argsort(-_MU.imag)
_MU, _V = _MU[_ORDER], _V[:, _ORDER]
_V[:, 1] = np.conj(_V[:, 0])
_VINV = np.linalg.inv(_V)

# quadratic on [0, 1] from values at x = 0, 1/3, 1: coefficients of 1, x, x^2
_NODES = np.array([0.0, 1.0 / 3.0, 1.0])
_TO_MONO = np.linalg.inv(np.vander(_NODES, 3, increasing=True))

_GL2_X, _GL2_W = leggauss(2)
_GL3_X, _GL3_W = leggauss(3)
_GL10_X, _GL10_W = leggauss(10)


def stability_function(z):
    """``R(z) = (1 + z/3) / (1 - 2z/3 + z**2/6)`` of the two-stage Radau IIA method."""
    z = np.asarray(z)
    return (1 + z / 3) / (1 - 2 * z / 3 + z**2 / 6)


# --------------------------------------------------------------------------
# right-hand sides


class RhsFunction:
    """Load vector ``F(t)`` (functional vector entries ``<f(t), phi_i>``).

    The stepper only sees the elementwise quadratic interpolant of ``F`` at
    ``{a, a + h/3, b}``. ``quadratic=True`` records that this is exact.
    """

    def __init__(self, fun, dim, quadratic=False):
        self._fun = fun
        self.dim = int(dim)
        self.quadratic = bool(quadratic)

    def __call__(self, t):
        return np.asarray(self._fun(float(t)), dtype=float).reshape(self.dim)

    def nodal(self, a, b):
        """Values of the interpolating quadratic at ``a, a + h/3, b`` (shape ``(3, dim)``)."""
        h = b - a
        return np.stack([self(a), self(a + h / 3.0), self(b)])

    @classmethod
    def zero(cls, dim):
        return _ZeroRhs(dim)

    @classmethod
    def constant(cls, vec):
        vec = np.array(vec, dtype=float)
        return cls(lambda t: vec, vec.size, quadratic=True)


class _ZeroRhs(RhsFunction):
    def __init__(self, dim):
        super().__init__(None, dim, quadratic=True)

    def __call__(self, t):
        return np.zeros(self.dim)

    def nodal(self, a, b):
        return np.zeros((3, self.dim))


class PiecewiseQuadraticRhs(RhsFunction):
    """Elementwise quadratic load, possibly discontinuous across breakpoints.

    Parameters
    ----------
    breakpoints : array_like, shape (n+1,)
        Partition on which the data is quadratic.
    values : array_like, shape (n, 3, dim)
        Values at ``a, a + h/3, b`` for each element ``[a, b]``.
    """

    def __init__(self, breakpoints, values):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim != 3 or values.shape[:2] != (self.breakpoints.size - 1, 3):
            raise InvalidArgumentError("values must have shape (n_elements, 3, dim)")
        self._mono = np.einsum("ij,ejd->eid", _TO_MONO, values)
        super().__init__(None, values.shape[2], quadratic=True)

    def _eval(self, e, t):
        a, b = self.breakpoints[e], self.breakpoints[e + 1]
        x = (t - a) / (b - a)
        c = self._mono[e]
        return c[0] + x * (c[1] + x * c[2])

    def _element(self, a, b):
        e = int(np.searchsorted(self.breakpoints, 0.5 * (a + b), side="right")) - 1
        if not (self.breakpoints[e] <= a + 1e-14 and b <= self.breakpoints[e + 1] + 1e-14):
            raise InvalidArgumentError(f"[{a}, {b}] is not inside one data element")
        return e

    def __call__(self, t):
        e = int(np.clip(np.searchsorted(self.breakpoints, t, side="left") - 1, 0, self.breakpoints.size - 2))
        return self._eval(e, t)

    def nodal(self, a, b):
        e = self._element(a, b)
        h = b - a
        return np.stack([self._eval(e, a), self._eval(e, a + h / 3.0), self._eval(e, b)])


def _as_rhs(F, dim):
    if F is None:
        return RhsFunction.zero(dim)
    if not isinstance(F, RhsFunction):
        raise InvalidArgumentError("F must be a RhsFunction or None")
    if F.dim != dim:
        raise InvalidArgumentError(f"load dimension {F.dim} does not match system dimension {dim}")
    return F


def _as_breakpoints(mesh):
    if isinstance(mesh, TimeMesh):
        return np.asarray(mesh.breakpoints)
    pts = np.asarray(mesh, dtype=float)
    if pts.ndim != 1 or pts.size < 2 or np.any(np.diff(pts) <= 0) or pts[0] != 0:
        raise InvalidArgumentError("breakpoints must increase strictly from 0")
    return pts


# --------------------------------------------------------------------------
# solutions


@dataclass(frozen=True)
class SplineSolution:
    """Continuous piecewise quadratic trajectory stored by nodal values and stage slopes.

    Attributes
    ----------
    breakpoints : ndarray, shape (n+1,)
    values : ndarray, shape (n+1, dim)
        ``u`` at every breakpoint; ``values[0]`` is the initial vector.
    k1, k2 : ndarray, shape (n, dim)
        ``u'`` at ``a + h/3`` and at ``b`` on each element.
    mesh : TimeMesh or None
    scheme : str
        ``"hybrid"`` or ``"cn"`` (piecewise linear, ``k1 == k2``).
    """

    breakpoints: np.ndarray
    values: np.ndarray
    k1: np.ndarray
    k2: np.ndarray
    mesh: TimeMesh | None = None
    scheme: str = "hybrid"

    @property
    def u0(self):
        return self.values[0]

    @property
    def n_elements(self):
        return self.k1.shape[0]

    @property
    def t_end(self):
        return float(self.breakpoints[-1])

    def locate(self, t):
        """Element index per time; interior breakpoints belong to the left element."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.t_end * (1 + 1e-14)):
            raise InvalidArgumentError("t outside [0, t_end]")
        idx = np.searchsorted(self.breakpoints, t, side="left") - 1
        return np.clip(idx, 0, self.n_elements - 1)

    def evaluate(self, t, elems=None):
        """Return ``(u, du)`` with shape ``(len(t), dim)`` (or ``(dim,)`` for scalar t)."""
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        e = self.locate(t) if elems is None else np.asarray(elems)
        a = self.breakpoints[e]
        h = self.breakpoints[e + 1] - a
        x = ((t - a) / h)[:, None]
        k1, k2 = self.k1[e], self.k2[e]
        dk = k2 - k1
        u = self.values[e] + h[:, None] * (k1 * x + dk * (3 * x * x - 2 * x) / 4)
        du = k1 + dk * (3 * x - 1) / 2
        return (u[0], du[0]) if scalar else (u, du)

    def second_derivative(self):
        """Elementwise constant ``u''`` (shape ``(n, dim)``)."""
        h = np.diff(self.breakpoints)[:, None]
        return 1.5 * (self.k2 - self.k1) / h

    def map_space(self, W):
        """Apply a linear map to every coefficient vector, ``x -> W @ x``."""
        return SplineSolution(
            self.breakpoints, self.values @ W.T, self.k1 @ W.T, self.k2 @ W.T, self.mesh, self.scheme
        )


class ModalSolution:
    """Exact solution of ``M u' + K u = 0``, ``u(0) = u0``, through the eigenbasis."""

    def __init__(self, system, u0):
        eig = system.spectral()
        self.system = system
        self.eigenvalues = eig.eigenvalues
        self.vectors = eig.vectors
        self.coefficients = system.modal(check_vector(u0, system.dim, name="u0"))

    def modal_values(self, t):
        """Eigen-coordinates of ``(u(t), u'(t))``, each of shape ``(len(t), dim)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        decay = np.exp(-np.outer(t, self.eigenvalues)) * self.coefficients
        return decay, -decay * self.eigenvalues

    def evaluate(self, t):
        scalar = np.ndim(t) == 0
        u, du = self.modal_values(t)
        u, du = u @ self.vectors.T, du @ self.vectors.T
        return (u[0], du[0]) if scalar else (u, du)


@dataclass(frozen=True)
class EstimateResult:
    """Per-element squared indicators ``eta_sq`` and their sum."""

    eta_sq: np.ndarray

    @property
    def total_sq(self):
        return float(np.sum(self.eta_sq))

    @property
    def total(self):
        return math.sqrt(self.total_sq)


# --------------------------------------------------------------------------
# time stepping


def radau_step(system, u_prev, F, a, b):
    """One Radau IIA step on ``[a, b]``; returns ``(k1, k2, u_next)``.

    Stage equations ``M k_i + h sum_j a_ij K k_j = F(a + c_i h) - K u_prev``.
    """
    h = b - a
    if not h > 0:
        raise InvalidArgumentError("element must have positive length")
    nod = F.nodal(a, b)
    Ku = system.K @ u_prev
    r = nod[1:] - Ku
    rhs = _VINV[0, 0] * r[0] + _VINV[0, 1] * r[1]
    w = system.solve_pencil(1.0, h * _MU[0], rhs, kind="stage_pencil_solves")
    k = 2.0 * np.real(np.outer(_V[:, 0], w))
    system.counters["stage_solves"] += 2
    if not np.all(np.isfinite(k)):
        raise NumericalFailureError("stage solve produced non-finite values")
    u_next = u_prev + h * (BUTCHER_B[0] * k[0] + BUTCHER_B[1] * k[1])
    return k[0], k[1], u_next


def solve_time(system, mesh, F, u0):
    """Hybrid scheme on every element of ``mesh``; returns a :class:`SplineSolution`."""
    pts = _as_breakpoints(mesh)
    u0 = check_vector(u0, system.dim, name="u0")
    F = _as_rhs(F, system.dim)
    n = pts.size - 1
    U = np.empty((n + 1, system.dim))
    K1 = np.empty((n, system.dim))
    K2 = np.empty((n, system.dim))
    U[0] = u0
    for i in range(n):
        K1[i], K2[i], U[i + 1] = radau_step(system, U[i], F, pts[i], pts[i + 1])
    return SplineSolution(pts, U, K1, K2, mesh if isinstance(mesh, TimeMesh) else None, "hybrid")


def crank_nicolson_solve(system, mesh, F, u0):
    """Trapezoidal rule ``(M + hK/2) u+ = (M - hK/2) u + int_T F`` as a piecewise linear spline."""
    pts = _as_breakpoints(mesh)
    u0 = check_vector(u0, system.dim, name="u0")
    F = _as_rhs(F, system.dim)
    n = pts.size - 1
    U = np.empty((n + 1, system.dim))
    S = np.empty((n, system.dim))
    U[0] = u0
    for i in range(n):
        a, b = pts[i], pts[i + 1]
        h = b - a
        nod = F.nodal(a, b)
        # exact mean of the interpolating quadratic: weights (0, 3/4, 1/4)
        load = h * (0.75 * nod[1] + 0.25 * nod[2])
        rhs = system.M @ U[i] - 0.5 * h * (system.K @ U[i]) + load
        U[i + 1] = system.solve_pencil(1.0, 0.5 * h, rhs, kind="stage_pencil_solves")
        system.counters["stage_solves"] += 1
        S[i] = (U[i + 1] - U[i]) / h
    return SplineSolution(pts, U, S, S.copy(), mesh if isinstance(mesh, TimeMesh) else None, "cn")


def eval_spline(sol, t):
    """``(u(t), u'(t))``; at interior breakpoints the left element is used."""
    if np.ndim(t) != 0:
        raise InvalidArgumentError("t must be a scalar")
    return sol.evaluate(float(t))


def residual_moments(system, sol, F, elem, projected=True):
    """``(int_T r dt, r(t_{T+1}))`` for ``r = F - M u' - K u`` on element ``elem``.

    With ``projected=True`` the load is replaced by its elementwise quadratic
    interpolant, which is what the scheme sees.
    """
    F = _as_rhs(F, system.dim)
    a, b = sol.breakpoints[elem], sol.breakpoints[elem + 1]
    h = b - a
    xg = 0.5 * (_GL3_X + 1.0)
    tg = a + h * xg
    u, du = sol.evaluate(tg, np.full(tg.size, elem))
    if projected:
        mono = _TO_MONO @ F.nodal(a, b)
        Fg = np.stack([mono[0] + x * (mono[1] + x * mono[2]) for x in xg])
        F_end = mono.sum(axis=0)
    else:
        Fg = np.stack([F(t) for t in tg])
        F_end = F(b)
    r = Fg - (system.M @ du.T).T - (system.K @ u.T).T
    mean = 0.5 * h * (_GL3_W @ r)
    end = F_end - system.M @ sol.k2[elem] - system.K @ sol.values[elem + 1]
    return mean, end


def estimate(system, sol, F=None, chunk=256):
    """Residual indicators ``eta(T)^2 = |T|^2 || F' - M u'' - K u' ||^2_{L2(T; V*)}``."""
    F = _as_rhs(F, system.dim)
    pts = sol.breakpoints
    h = np.diff(pts)
    n = h.size
    xg = 0.5 * (_GL2_X + 1.0)
    ddu = sol.second_derivative()
    eta_sq = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        cols = []
        for e in range(lo, hi):
            mono = _TO_MONO @ F.nodal(pts[e], pts[e + 1])
            for x in xg:
                dF = (mono[1] + 2 * x * mono[2]) / h[e]
                du = sol.k1[e] + (sol.k2[e] - sol.k1[e]) * (3 * x - 1) / 2
                cols.append(dF - system.M @ ddu[e] - system.K @ du)
        G = np.array(cols).T
        Y = system.solve_K(G)
        q = np.sum(G * Y, axis=0).reshape(hi - lo, 2)
        # |T|^2 * int_T g^T K^{-1} g dt with 2-point Gauss (weights 1/2 on [0, 1])
        eta_sq[lo:hi] = h[lo:hi] ** 3 * (q @ (0.5 * _GL2_W))
    return EstimateResult(np.maximum(eta_sq, 0.0))


# --------------------------------------------------------------------------
# adaptive loop


@dataclass(frozen=True)
class AdaptiveIterate:
    mesh: TimeMesh
    solution: SplineSolution
    estimate: EstimateResult
    marked: tuple = field(default=())

    @property
    def n_elements(self):
        return self.mesh.n_elements

    @property
    def eta(self):
        return self.estimate.total


def adaptive_loop(system, F, u0, theta=0.5, G=4, tol=0.0, max_iter=30, mesh=None,
                  scheme="hybrid", t_end=1.0, n_initial=1, callback=None):
    """Solve, estimate, mark and refine until ``eta <= tol`` or ``max_iter`` iterations.

    Returns the list of :class:`AdaptiveIterate` records, one per solve.
    """
    theta = check_theta(theta)
    G = check_int(G, name="G", minimum=1)
    max_iter = check_int(max_iter, name="max_iter", minimum=1)
    if scheme not in ("hybrid", "cn"):
        raise InvalidArgumentError(f"unknown scheme {scheme!r}")
    if mesh is None:
        mesh = uniform_mesh(t_end, n_initial)
    if set(mesh.levels) != {0}:
        raise InvalidArgumentError("the initial mesh must be uniform")
    solver = solve_time if scheme == "hybrid" else crank_nicolson_solve
    history = []
    for it in range(max_iter):
        sol = solver(system, mesh, F, u0)
        est = estimate(system, sol, F)
        done = est.total <= tol or it == max_iter - 1
        marks = () if done else doerfler_mark(est.eta_sq, theta).indices
        rec = AdaptiveIterate(mesh, sol, est, marks)
        history.append(rec)
        if callback is not None:
            callback(rec)
        if done or not marks:
            break
        mesh = refine(mesh, marks, G)
    return history


# --------------------------------------------------------------------------
# errors


def _gauss_points(pts, sub_fn=None):
    """10-point Gauss nodes/weights per interval, optionally sub-divided."""
    nodes, weights, owner = [], [], []
    xg = 0.5 * (_GL10_X + 1.0)
    wg = 0.5 * _GL10_W
    for e in range(pts.size - 1):
        a, b = pts[e], pts[e + 1]
        cuts = sub_fn(a, b) if sub_fn is not None else np.array([a, b])
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            nodes.append(lo + (hi - lo) * xg)
            weights.append((hi - lo) * wg)
            owner.append(np.full(xg.size, e))
    return np.concatenate(nodes), np.concatenate(weights), np.concatenate(owner)


def _graded_cuts(lam_max):
    """Cut ``[a, b]`` geometrically from ``a`` so that ``exp(-lam (t - a))`` is resolved."""

    def cuts(a, b):
        h = b - a
        lam = lam_max if a == 0 else min(lam_max, 40.0 / a)
        if lam * h <= 1.0:
            return np.array([a, b])
        steps = [a]
        s = 1.0 / lam
        while a + s < b:
            steps.append(a + s)
            s *= 2.0
        steps.append(b)
        return np.array(steps)

    return cuts


def xnorm_error(system, sol, reference, chunk=4096):
    """``sqrt(int ||e||_V^2 + int ||e'||_{V*}^2)`` for ``e = sol - reference``.

    ``reference`` is a :class:`ModalSolution` or a :class:`SplineSolution`; in
    the latter case integration runs over the union of both meshes.
    """
    if isinstance(reference, ModalSolution):
        return _xnorm_modal(sol, reference, chunk)
    if not isinstance(reference, SplineSolution):
        raise InvalidArgumentError("reference must be a ModalSolution or SplineSolution")
    if not np.isclose(reference.t_end, sol.t_end, rtol=1e-13, atol=0):
        raise InvalidArgumentError("solutions cover different time intervals")
    pts = np.union1d(sol.breakpoints, reference.breakpoints)
    tq, wq, owner = _gauss_points(pts)
    mid = 0.5 * (pts[owner] + pts[owner + 1])
    e_sol, e_ref = sol.locate(mid), reference.locate(mid)
    total = 0.0
    for lo in range(0, tq.size, chunk):
        sl = slice(lo, lo + chunk)
        u1, d1 = sol.evaluate(tq[sl], e_sol[sl])
        u2, d2 = reference.evaluate(tq[sl], e_ref[sl])
        e, de = (u1 - u2).T, (d1 - d2).T
        v_sq = system.norm_V(e) ** 2
        vs_sq = system.norm_Vstar(system.M @ de) ** 2
        total += float(wq[sl] @ (v_sq + vs_sq))
    return math.sqrt(max(total, 0.0))


def _xnorm_modal(sol, ref, chunk):
    lam = ref.eigenvalues
    proj = ref.system.M @ ref.vectors
    modal = SplineSolution(sol.breakpoints, sol.values @ proj, sol.k1 @ proj, sol.k2 @ proj)
    tq, wq, owner = _gauss_points(sol.breakpoints, _graded_cuts(float(lam[-1])))
    total = 0.0
    for lo in range(0, tq.size, chunk):
        sl = slice(lo, lo + chunk)
        u1, d1 = modal.evaluate(tq[sl], owner[sl])
        u2, d2 = ref.modal_values(tq[sl])
        integrand = (u1 - u2) ** 2 @ lam + (d1 - d2) ** 2 @ (1.0 / lam)
        total += float(wq[sl] @ integrand)
    return math.sqrt(max(total, 0.0))


def nodal_error(system, sol, reference):
    """Max over breakpoints of the ``H``-norm error of the nodal values."""
    u_ref, _ = reference.evaluate(sol.breakpoints)
    return float(np.max(system.norm_H((sol.values - u_ref).T)))

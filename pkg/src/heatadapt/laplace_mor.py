"""Laplace-domain snapshots, weighted POD and reduced time stepping.

Snapshots solve ``(s M + K) u_hat(s) = f_hat(s) + M u0`` at the sinc points
``s_k = alpha + i sinh(k theta)``. For real data ``u_hat(conj s)`` is the
conjugate of ``u_hat(s)``, so only ``k >= 0`` is solved and the pair weight is
doubled. The transform of ``u'`` is ``s u_hat(s) - u0``.

The reduced space is V-orthonormal (``W^T K W = I``); the reduced problem is
the Galerkin restriction ``M_R = W^T M W``, ``K_R = I``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ._validation import check_int, check_positive, check_vector
from .errors import InvalidArgumentError, NumericalFailureError
from .gelfand import DiscreteSystem
from .radau import (
    ModalSolution,
    PiecewiseQuadraticRhs,
    RhsFunction,
    SplineSolution,
    _as_rhs,
    _gauss_points,
    _graded_cuts,
    adaptive_loop,
    xnorm_error,
)
from .sinc import DEFAULT_ALPHA, DEFAULT_D, SincGrid

__all__ = [
    "SnapshotSet",
    "ReducedBasis",
    "ReducedProblem",
    "MorRun",
    "RankDeficiencyWarning",
    "laplace_snapshot",
    "build_snapshots",
    "snapshot_columns",
    "build_reduced_basis",
    "epsilon_M",
    "reduce_system",
    "projection_error_time",
    "semidiscrete_error",
    "semidiscrete_error_closed_form",
    "reduced_dual_error",
    "mor_pipeline",
]


class RankDeficiencyWarning(RuntimeWarning):
    """The snapshot span has lower dimension than the requested basis size."""


def _load(fhat, s, dim):
    if fhat is None:
        return np.zeros(dim)
    g = np.asarray(fhat(s))
    if g.shape != (dim,):
        raise InvalidArgumentError(f"fhat(s) must have shape ({dim},), got {g.shape}")
    return g


def laplace_snapshot(system, fhat, u0, s):
    """Solve ``(s M + K) u_hat = f_hat(s) + M u0``."""
    u0 = check_vector(u0, system.dim, name="u0")
    rhs = _load(fhat, s, system.dim) + system.M @ u0
    return system.shifted_solve(s, rhs)


@dataclass(frozen=True)
class SnapshotSet:
    """Samples ``u_hat(s_k)`` and ``s_k u_hat(s_k) - u0`` for ``k = 0..M``.

    Rows of ``u_hat`` and ``du_hat`` are indexed by ``k``; negative indices
    are the conjugates.
    """

    grid: SincGrid
    u_hat: np.ndarray
    du_hat: np.ndarray
    u0: np.ndarray
    fhat: object = None

    @property
    def M(self):
        return self.grid.M

    @property
    def shifts(self):
        return self.grid.points[self.grid.M:]

    @property
    def pair_weights(self):
        """Quadrature weight of each stored sample, doubled for conjugate pairs."""
        w = self.grid.weights[self.grid.M:].copy()
        w[1:] *= 2.0
        return w


def build_snapshots(system, fhat, u0, grid):
    """Solve at ``s_k`` for ``k = 0..M``; one shifted solve per sample."""
    if not isinstance(grid, SincGrid):
        raise InvalidArgumentError("grid must be a SincGrid")
    u0 = check_vector(u0, system.dim, name="u0")
    shifts = grid.points[grid.M:]
    U = np.empty((shifts.size, system.dim), dtype=complex)
    for k, s in enumerate(shifts):
        U[k] = laplace_snapshot(system, fhat, u0, s)
    dU = shifts[:, None] * U - u0
    return SnapshotSet(grid, U, dU, u0, fhat)


def _derivative_scale(s):
    return 1.0 / (1.0 + np.abs(s))


def snapshot_columns(snaps):
    """Real snapshot matrix: ``u0``, then weighted real/imaginary parts.

    Derivative samples are scaled by ``1 / (1 + |s_k|)`` so that their ``V``
    norm is commensurate with the ``V*`` norm they enter the goal with.
    """
    c = np.sqrt(snaps.pair_weights)
    sig = _derivative_scale(snaps.shifts)
    U = snaps.u_hat * c[:, None]
    dU = snaps.du_hat * (c * sig)[:, None]
    cols = [snaps.u0[None, :], U.real, U.imag[1:], dU.real, dU.imag[1:]]
    # k = 0 sits on the real axis, so its imaginary parts vanish for real data
    return np.concatenate(cols, axis=0).T


def _k_orthonormalize(K, S, tol=1e-13):
    """``S = Q R`` with ``Q^T K Q = I`` by two-pass classical Gram-Schmidt.

    Columns whose remainder falls below ``tol`` times their norm are not
    added to ``Q``; their coefficients still go into ``R``.
    """
    N, m = S.shape
    Q = np.empty((N, 0))
    KQ = np.empty((N, 0))
    R = np.zeros((0, m))
    for j in range(m):
        v = S[:, j].copy()
        norm0 = math.sqrt(max(float(v @ (K @ v)), 0.0))
        coef = np.zeros(Q.shape[1])
        for _ in range(2):
            c = KQ.T @ v
            v -= Q @ c
            coef += c
        Kv = K @ v
        nv = math.sqrt(max(float(v @ Kv), 0.0))
        if norm0 > 0 and nv > tol * norm0:
            Q = np.column_stack([Q, v / nv])
            KQ = np.column_stack([KQ, Kv / nv])
            R = np.vstack([R, np.zeros(m)])
            R[-1, j] = nv
        R[: coef.size, j] = coef
    return Q, R


@dataclass(frozen=True)
class ReducedBasis:
    """V-orthonormal reduced basis ``W`` and snapshot singular values."""

    W: np.ndarray
    singular_values: np.ndarray
    rank_deficient: bool = False
    M_R: np.ndarray = field(default=None, repr=False)

    @property
    def R(self):
        return self.W.shape[1]

    @property
    def K_R(self):
        return np.eye(self.R)

    def lift(self, x_R):
        """Full coefficients ``W x_R`` (row-wise for 2-D input)."""
        x_R = np.asarray(x_R)
        return self.W @ x_R if x_R.ndim == 1 else x_R @ self.W.T

    def project(self, system, x):
        """Reduced coordinates ``W^T K x`` of the V-orthogonal projection."""
        return self.W.T @ (system.K @ x)

    def projector(self, system, x):
        """``P x = W W^T K x``."""
        return self.W @ self.project(system, x)


def _goal_data(system, snaps, Q):
    """Coordinates in ``Q`` of the weighted samples and the ``V*`` Gram matrix of ``Q``."""
    c = np.sqrt(snaps.pair_weights)
    U, D = snaps.u_hat * c[:, None], snaps.du_hat * c[:, None]
    KQ = system.K @ Q
    A = KQ.T @ np.concatenate([U.real, U.imag]).T
    B = KQ.T @ np.concatenate([D.real, D.imag]).T
    MQ = system.M @ Q
    G = MQ.T @ system.solve_K(MQ)
    return A @ A.T, B @ B.T, 0.5 * (G + G.T)


def _goal_descent(AA, H, G, Z, steps):
    """Decrease ``tr(P AA) + tr(P G P H)``, ``P = I - Z Z^T``, over orthonormal ``Z``.

    Polak-Ribiere conjugate gradients on the Grassmann manifold: tangent
    projection as transport, QR retraction, Armijo backtracking. Every
    accepted step lowers the goal.
    """
    trAA, trGH = np.trace(AA), np.sum(G * H)

    def goal(Z):
        GZ, HZ = G @ Z, H @ Z
        val = trAA - np.sum(Z * (AA @ Z)) + trGH - 2 * np.sum(HZ * GZ) + np.sum((Z.T @ GZ) * (Z.T @ HZ))
        return val, GZ, HZ

    def grad(Z, GZ, HZ):
        PHZ = HZ - Z @ (Z.T @ HZ)
        PGZ = GZ - Z @ (Z.T @ GZ)
        g = -2 * (AA @ Z + G @ PHZ + H @ PGZ)
        return g - Z @ (Z.T @ g)

    scale = np.linalg.norm(AA, 2) + 2 * np.linalg.norm(G, 2) * np.linalg.norm(H, 2)
    if scale <= 0:
        return Z
    f, GZ, HZ = goal(Z)
    g = grad(Z, GZ, HZ)
    gn = float(np.sum(g * g))
    d, t = -g, 1.0 / scale
    for _ in range(steps):
        if gn <= (1e-13 * scale) ** 2:
            break
        slope = float(np.sum(g * d))
        if slope >= 0:
            d, slope = -g, -gn
        while True:
            Zn, _ = np.linalg.qr(Z + t * d)
            fn, GZn, HZn = goal(Zn)
            if fn <= f + 1e-4 * t * slope:
                break
            t *= 0.5
            if t * scale < 1e-14:
                return Z
        Z, f, GZ, HZ = Zn, fn, GZn, HZn
        g_old = g - Z @ (Z.T @ g)
        d = d - Z @ (Z.T @ d)
        g = grad(Z, GZ, HZ)
        gn_new = float(np.sum(g * g))
        beta = max(0.0, float(np.sum(g * (g - g_old))) / gn)
        d = -g + beta * d
        gn = gn_new
        t *= 2.0
    return Z


def build_reduced_basis(system, snaps, R, descent_steps=1000):
    """Reduced basis of dimension ``R`` from a snapshot set.

    The snapshot matrix is factored as ``S = Q C`` with K-orthonormal ``Q``
    and the SVD ``C = U Sigma Z^T`` gives the POD start ``W = Q U[:, :R]``.
    The POD weighs derivative samples in ``V`` rather than ``V*``, so it is
    followed by up to ``descent_steps`` conjugate-gradient steps on the sampled goal
    :func:`epsilon_M` within ``span(Q)``. ``descent_steps=0`` returns the
    plain POD. ``singular_values`` are those of ``C``.

    If the snapshot span has rank below ``R`` a basis of the attained rank is
    returned with ``rank_deficient=True`` and a :class:`RankDeficiencyWarning`.
    """
    R = check_int(R, name="R", minimum=0)
    descent_steps = check_int(descent_steps, name="descent_steps", minimum=0)
    S = snapshot_columns(snaps)
    if R > S.shape[1]:
        raise InvalidArgumentError(f"R = {R} exceeds the {S.shape[1]} snapshot columns")
    Q, C = _k_orthonormalize(system.K, S)
    if C.shape[0] == 0:
        sv = np.zeros(0)
        U = np.zeros((0, 0))
    else:
        U, sv, _ = sla.svd(C, full_matrices=False)
    rank = int(np.count_nonzero(sv > max(S.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0)))
    deficient = R > rank
    if deficient:
        warnings.warn(f"snapshot rank {rank} is below the requested R = {R}", RankDeficiencyWarning,
                      stacklevel=2)
    keep = min(R, rank)
    if keep == 0:
        W = np.zeros((system.dim, 0))
    else:
        Z = U[:, :keep]
        if descent_steps and keep < Q.shape[1]:
            Z = _goal_descent(*_goal_data(system, snaps, Q), Z, descent_steps)
        W = Q @ Z
    M_R = W.T @ (system.M @ W)
    return ReducedBasis(W, sv, deficient, 0.5 * (M_R + M_R.T))


def _vstar_sq(system, X):
    """Squared ``V*`` norms of the functionals ``M x`` for the columns of real ``X``."""
    G = system.M @ X
    return np.sum(G * system.solve_K(G), axis=0)


def epsilon_M(system, snaps, basis):
    """Sampled goal ``sum_j w_j (||e_j||_V^2 + ||de_j||_{V*}^2)`` over ``j = -M..M``."""
    total = 0.0
    w = snaps.pair_weights
    for data, vstar in ((snaps.u_hat, False), (snaps.du_hat, True)):
        X = np.concatenate([data.real, data.imag]).T
        E = X - basis.projector(system, X)
        sq = _vstar_sq(system, E) if vstar else system.norm_V(E) ** 2
        n = data.shape[0]
        total += float(w @ (sq[:n] + sq[n:]))
    return total


@dataclass(frozen=True)
class ReducedProblem:
    """Galerkin restriction of ``M u' + K u = F`` to ``span(W)``."""

    system: DiscreteSystem
    basis: ReducedBasis
    full: DiscreteSystem

    def initial(self, u0):
        """Reduced coordinates of ``P u0``, i.e. ``W^T K u0``."""
        return self.basis.project(self.full, check_vector(u0, self.full.dim, name="u0"))

    def load(self, F):
        """Reduced load ``W^T F(t)``."""
        F = _as_rhs(F, self.full.dim)
        Wt = self.basis.W.T
        if isinstance(F, PiecewiseQuadraticRhs):
            vals = np.stack([np.stack([Wt @ F._eval(e, t) for t in (a, a + (b - a) / 3, b)])
                             for e, (a, b) in enumerate(zip(F.breakpoints[:-1], F.breakpoints[1:]))])
            return PiecewiseQuadraticRhs(F.breakpoints, vals)
        if type(F).__name__ == "_ZeroRhs":
            return RhsFunction.zero(self.basis.R)
        return RhsFunction(lambda t: Wt @ F(t), self.basis.R, quadratic=F.quadratic)

    def lift(self, sol):
        return sol.map_space(self.basis.W)


def reduce_system(system, basis):
    """Reduced :class:`DiscreteSystem` with ``M_R = W^T M W`` and ``K_R = I``."""
    if basis.W.shape[0] != system.dim:
        raise InvalidArgumentError("basis does not match the system dimension")
    if basis.R == 0:
        raise InvalidArgumentError("cannot reduce onto an empty basis")
    red = DiscreteSystem(basis.M_R, basis.K_R, backend="dense")
    return ReducedProblem(red, basis, system)


def projection_error_time(system, basis, u0, t_end=1.0):
    """Squared ``||(I-P)u||^2_{L2(V)} + ||(I-P)u'||^2_{L2(V*)}`` on ``[0, t_end]`` for ``f = 0``.

    Exact in the eigenbasis: ``u = sum_i c_i exp(-lam_i t) e_i``.
    """
    eig = system.spectral()
    lam, E = eig.eigenvalues, eig.vectors
    c = system.modal(check_vector(u0, system.dim, name="u0"))
    Z = E - basis.W @ (basis.W.T @ (system.K @ E))
    Zc = Z * c
    KZ = system.K @ Zc
    MZ = system.M @ Zc
    A_V = Zc.T @ KZ
    A_S = MZ.T @ system.solve_K(MZ)
    s = lam[:, None] + lam[None, :]
    kern = -np.expm1(-s * t_end) / s
    total = np.sum((A_V + lam[:, None] * A_S * lam[None, :]) * kern)
    return float(max(total, 0.0))


def reduced_dual_error(system, basis, sol, reference, chunk=4096):
    """X-norm error with the derivative measured in the reduced dual, ``||W^T M e'||``.

    ``sol`` is a full-space :class:`SplineSolution`, ``reference`` a
    :class:`ModalSolution`.
    """
    lam = reference.eigenvalues
    proj = system.M @ reference.vectors
    C = reference.vectors.T @ (system.M @ basis.W)
    modal = SplineSolution(sol.breakpoints, sol.values @ proj, sol.k1 @ proj, sol.k2 @ proj)
    tq, wq, owner = _gauss_points(sol.breakpoints, _graded_cuts(float(lam[-1])))
    total = 0.0
    for lo in range(0, tq.size, chunk):
        sl = slice(lo, lo + chunk)
        u1, d1 = modal.evaluate(tq[sl], owner[sl])
        u2, d2 = reference.modal_values(tq[sl])
        integrand = (u1 - u2) ** 2 @ lam + np.sum(((d1 - d2) @ C) ** 2, axis=1)
        total += float(wq[sl] @ integrand)
    return math.sqrt(max(total, 0.0))


@dataclass(frozen=True)
class MorRun:
    """Result of :func:`mor_pipeline`."""

    basis: ReducedBasis
    problem: ReducedProblem
    history: list
    err_full_dual: np.ndarray
    err_reduced_dual: np.ndarray
    solves_full: int
    solves_reduced: int
    epsilon: float

    @property
    def n_elements(self):
        return np.array([r.n_elements for r in self.history])

    @property
    def eta(self):
        return np.array([r.eta for r in self.history])


def mor_pipeline(system, fhat, F, u0, M, R, theta=0.5, G=4, max_iter=20, tol=0.0,
                 alpha=DEFAULT_ALPHA, d=DEFAULT_D, t_end=1.0, reference=None, reduced_dual=False):
    """Snapshots, POD basis, adaptive stepping on the reduced problem, lifted errors.

    ``reference`` defaults to the exact modal solution, which requires
    ``F`` to vanish. ``solves_full`` counts shifted solves with the full
    matrices; ``solves_reduced`` counts stage solves of the reduced stepper.
    """
    grid = SincGrid(alpha, d, M)
    before = system.counters["shifted_solves"]
    snaps = build_snapshots(system, fhat, u0, grid)
    solves_full = system.counters["shifted_solves"] - before
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        basis = build_reduced_basis(system, snaps, R)
    problem = reduce_system(system, basis)
    history = adaptive_loop(problem.system, problem.load(F), problem.initial(u0), theta=theta, G=G,
                            tol=tol, max_iter=max_iter, t_end=t_end)
    if reference is None:
        if F is not None:
            raise InvalidArgumentError("a reference solution is required when F is given")
        reference = ModalSolution(system, u0)
    if not isinstance(reference, ModalSolution):
        raise InvalidArgumentError("reference must be a ModalSolution")
    full_err, red_err = [], []
    for rec in history:
        lifted = problem.lift(rec.solution)
        full_err.append(xnorm_error(system, lifted, reference))
        if reduced_dual:
            red_err.append(reduced_dual_error(system, basis, lifted, reference))
    if not np.all(np.isfinite(full_err)):
        raise NumericalFailureError("lifted error is not finite")
    return MorRun(basis, problem, history, np.array(full_err), np.array(red_err), solves_full,
                  int(problem.system.counters["stage_solves"]), epsilon_M(system, snaps, basis))


def _error_modes(system, basis, u0):
    """Columns, amplitudes and rates of ``u(t) - W y(t)`` as a sum of decaying modes."""
    u0 = check_vector(u0, system.dim, name="u0")
    eig = system.spectral()
    red = DiscreteSystem(basis.M_R, basis.K_R, backend="dense")
    rs = red.spectral()
    b = rs.vectors.T @ (basis.M_R @ basis.project(system, u0))
    V = np.column_stack([eig.vectors, basis.W @ rs.vectors])
    a = np.concatenate([system.modal(u0), -b])
    r = np.concatenate([eig.eigenvalues, rs.eigenvalues])
    return V, a, r


def semidiscrete_error_closed_form(system, basis, u0, t_end=1.0):
    """Closed-form Gram sum for :func:`semidiscrete_error`.

    Exact in exact arithmetic but the sum cancels: values below roughly
    ``1e-8 * ||u0||_V`` are rounding noise.
    """
    V, a, r = _error_modes(system, basis, u0)
    Va = V * a
    MVa = system.M @ Va
    A_V = Va.T @ (system.K @ Va)
    A_S = MVa.T @ system.solve_K(MVa)
    s = r[:, None] + r[None, :]
    kern = -np.expm1(-s * t_end) / s
    total = np.sum((A_V + r[:, None] * A_S * r[None, :]) * kern)
    return math.sqrt(max(float(total), 0.0))


def semidiscrete_error(system, basis, u0, t_end=1.0, n_gauss=20):
    """X-norm error of the time-continuous reduced solution for ``f = 0``.

    This is the level at which the error of the reduced adaptive run
    stagnates once the time discretization error is negligible. The error
    vector is formed at Gauss points on intervals that double in length
    away from ``t = 0``, so small errors are not lost to cancellation.
    """
    t_end = check_positive(t_end, name="t_end")
    V, a, r = _error_modes(system, basis, u0)
    t0 = min(t_end, 1e-3 / max(float(r.max()), 1e-300))
    cuts = [0.0, t0]
    while cuts[-1] < t_end:
        cuts.append(min(2 * cuts[-1], t_end))
    x, w = np.polynomial.legendre.leggauss(n_gauss)
    lo, hi = np.array(cuts[:-1]), np.array(cuts[1:])
    t = (0.5 * (hi - lo)[:, None] * (x + 1) + lo[:, None]).ravel()
    wt = (0.5 * (hi - lo)[:, None] * w).ravel()
    decay = np.exp(-np.outer(r, t))
    E = V @ (a[:, None] * decay)
    dE = V @ ((-r * a)[:, None] * decay)
    MdE = system.M @ dE
    vals = np.sum(E * (system.K @ E), axis=0) + np.sum(MdE * np.real(system.solve_K(MdE)), axis=0)
    return math.sqrt(max(float(wt @ vals), 0.0))

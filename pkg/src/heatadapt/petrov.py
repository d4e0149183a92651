"""Space-time Petrov-Galerkin view of the time stepper and inf-sup measurements.

Scalar mode ``u' + lam u`` on a time mesh. The hybrid scheme uses continuous
piecewise quadratic trial functions and, per element ``T``, the tests
``chi_T`` (indicator) and ``Phi_T = |T| Psi_T`` where ``Psi_T`` is piecewise
constant on the thirds of ``T`` and reproduces right-endpoint values of
quadratics. Crank-Nicolson uses piecewise linear trial functions and only
``chi_T``. Both add one row for the initial value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial.legendre import leggauss

from ._validation import check_positive, check_vector
from .errors import InvalidArgumentError, NumericalFailureError
from .radau import _TO_MONO, _as_breakpoints, _as_rhs

__all__ = [
    "PSI_VALUES",
    "psi_on_reference",
    "q_invisible",
    "mlambda",
    "PGSystem",
    "assemble_pg",
    "infsup_constant",
    "pg_solve",
    "pg_coefficients",
    "element_test_functions",
    "nesting_residual",
]

PSI_VALUES = np.array([1.0, -3.5, 5.5])

_X2, _W2 = leggauss(2)
_X3, _W3 = leggauss(3)


def psi_on_reference():
    """Values of ``Psi`` on the thirds of ``[0, 1]`` and its ``L2`` norm."""
    return PSI_VALUES.copy(), math.sqrt(np.sum(PSI_VALUES**2) / 3.0)


def q_invisible(lam, h):
    """Right-end value and slope of the quadratic with ``q(t_T) = 1`` that the tests cannot see."""
    lam = check_positive(lam, name="lam")
    h = check_positive(h, name="h")
    g = lam * h
    q = 2.0 * (3.0 - g) / (g * g + 4.0 * g + 6.0)
    return q, -lam * q


def mlambda(gamma):
    """Element block on (right hat, bubble) against (chi, Phi) and its determinant."""
    if gamma < 0:
        raise InvalidArgumentError("gamma must be >= 0")
    mat = np.array([[1 + gamma / 2, 2 * gamma / 3], [1 + gamma, -4.0]])
    return mat, -(2 * gamma**2 / 3 + 8 * gamma / 3 + 4)


# local trial shapes on x in [0, 1]: left hat, right hat, bubble
def _shapes(x, with_bubble):
    vals = [1 - x, x] + ([4 * x * (1 - x)] if with_bubble else [])
    ders = [-np.ones_like(x), np.ones_like(x)] + ([4 - 8 * x] if with_bubble else [])
    return np.array(vals), np.array(ders)


def _third_rule():
    """Gauss nodes/weights on [0, 1] split at the thirds, plus the third index."""
    xs, ws, idx = [], [], []
    for k in range(3):
        xs.append((k + 0.5 * (_X2 + 1)) / 3)
        ws.append(0.5 * _W2 / 3)
        idx.append(np.full(2, k))
    return np.concatenate(xs), np.concatenate(ws), np.concatenate(idx)


@dataclass(frozen=True)
class PGSystem:
    """Scalar-mode Petrov-Galerkin matrices.

    ``B = B_d + lam * B_m`` where ``B_d`` collects ``int u' v`` plus the
    initial-value row and ``B_m`` collects ``int u v``. ``Gx`` is the Gram
    matrix of ``lam ||u||^2 + ||u'||^2 / lam`` and ``Gy`` that of
    ``lam ||v||^2`` plus ``|w|^2`` for the initial-value test.
    """

    lam: float
    breakpoints: np.ndarray
    scheme: str
    B_d: np.ndarray
    B_m: np.ndarray
    Gx: np.ndarray
    Gy: np.ndarray

    @property
    def B(self):
        return self.B_d + self.lam * self.B_m


def _trial_index(n, e, scheme):
    idx = [e, e + 1]
    if scheme == "hybrid":
        idx.append(n + 1 + e)
    return idx


def assemble_pg(lam, mesh, scheme="hybrid"):
    """Assemble :class:`PGSystem` by exact Gauss quadrature of the polynomial integrands."""
    lam = check_positive(lam, name="lam")
    if scheme not in ("hybrid", "cn"):
        raise InvalidArgumentError(f"unknown scheme {scheme!r}")
    pts = _as_breakpoints(mesh)
    n = pts.size - 1
    bubble = scheme == "hybrid"
    n_trial = 2 * n + 1 if bubble else n + 1
    n_test_el = 2 if bubble else 1
    n_test = 1 + n_test_el * n
    B_d = np.zeros((n_test, n_trial))
    B_m = np.zeros((n_test, n_trial))
    G_m = np.zeros((n_trial, n_trial))
    G_d = np.zeros((n_trial, n_trial))
    Gy = np.zeros((n_test, n_test))
    B_d[0, 0] = 1.0
    Gy[0, 0] = 1.0

    x3 = 0.5 * (_X3 + 1)
    w3 = 0.5 * _W3
    v3, d3 = _shapes(x3, bubble)
    xt, wt, third = _third_rule()
    vt, dt = _shapes(xt, bubble)
    psi = PSI_VALUES[third]

    for e in range(n):
        h = pts[e + 1] - pts[e]
        idx = _trial_index(n, e, scheme)
        ix = np.ix_(idx, idx)
        G_m[ix] += h * (v3 * w3) @ v3.T
        G_d[ix] += (d3 * w3) @ d3.T / h
        rows = [1 + n_test_el * e + k for k in range(n_test_el)]
        # tests on [0,1]: chi = 1, Phi = h * Psi
        tests = [np.ones_like(xt)] + ([h * psi] if bubble else [])
        for r, v in zip(rows, tests):
            B_d[r, idx] += (dt * wt) @ v  # u' = d/h, dt = h dx
            B_m[r, idx] += h * (vt * wt) @ v
        T = np.array(tests)
        Gy[np.ix_(rows, rows)] += lam * h * (T * wt) @ T.T
    Gx = lam * G_m + G_d / lam
    return PGSystem(lam, pts, scheme, B_d, B_m, Gx, Gy)


def infsup_constant(lam, mesh, scheme="hybrid"):
    """Smallest singular value of ``Gy^{-1/2} B Gx^{-1/2}`` (Cholesky square roots)."""
    pg = assemble_pg(lam, mesh, scheme)
    try:
        Lx = sla.cholesky(pg.Gx, lower=True)
        Ly = sla.cholesky(pg.Gy, lower=True)
    except sla.LinAlgError as exc:
        raise NumericalFailureError(f"Gram factorization failed: {exc}") from None
    Z = sla.solve_triangular(Ly, pg.B, lower=True)
    Z = sla.solve_triangular(Lx, Z.T, lower=True).T
    return float(sla.svdvals(Z)[-1])


def pg_solve(system, mesh, F, u0, scheme="hybrid"):
    """Solve the full space-time system ``(B_d ⊗ M + B_m ⊗ K) c = rhs``.

    Returns ``(nodal, bubble)`` with shapes ``(n+1, dim)`` and ``(n, dim)``;
    ``bubble`` is empty for ``scheme="cn"``.
    """
    pts = _as_breakpoints(mesh)
    n = pts.size - 1
    N = system.dim
    u0 = check_vector(u0, N, name="u0")
    F = _as_rhs(F, N)
    pg = assemble_pg(1.0, pts, scheme)
    M = sp.csr_matrix(system.M)
    K = sp.csr_matrix(system.K)
    A = (sp.kron(sp.csr_matrix(pg.B_d), M) + sp.kron(sp.csr_matrix(pg.B_m), K)).tocsc()
    bubble = scheme == "hybrid"
    n_test_el = 2 if bubble else 1
    rhs = np.zeros((1 + n_test_el * n, N))
    rhs[0] = M @ u0
    xt, wt, third = _third_rule()
    for e in range(n):
        h = pts[e + 1] - pts[e]
        mono = _TO_MONO @ F.nodal(pts[e], pts[e + 1])
        Fq = mono[0] + np.outer(xt, mono[1]) + np.outer(xt**2, mono[2])
        rhs[1 + n_test_el * e] = h * (wt @ Fq)
        if bubble:
            rhs[2 + 2 * e] = h * ((wt * h * PSI_VALUES[third]) @ Fq)
    c = spla.spsolve(A, rhs.ravel()).reshape(-1, N)
    if not np.all(np.isfinite(c)):
        raise NumericalFailureError("space-time solve failed")
    return c[: n + 1], c[n + 1:]


def pg_coefficients(sol):
    """Nodal values and bubble coefficients of a :class:`SplineSolution`."""
    pts = sol.breakpoints
    mids = 0.5 * (pts[:-1] + pts[1:])
    u_mid, _ = sol.evaluate(mids, np.arange(pts.size - 1))
    bubble = u_mid - 0.5 * (sol.values[:-1] + sol.values[1:])
    return sol.values, bubble


def element_test_functions(mesh, scheme="hybrid"):
    """Per element, the test functions as values on its thirds, scaled to ``Phi = |T| Psi``."""
    pts = _as_breakpoints(mesh)
    out = []
    for e in range(pts.size - 1):
        h = pts[e + 1] - pts[e]
        funcs = [np.ones(3)] + ([h * PSI_VALUES] if scheme == "hybrid" else [])
        out.append((pts[e], pts[e + 1], funcs))
    return out


def nesting_residual(coarse, fine, scheme="hybrid"):
    """Largest relative least-squares residual of coarse tests in the fine test span.

    Functions are compared as piecewise constants on the thirds of the fine
    elements with ``L2`` weights.
    """
    cp, fp = _as_breakpoints(coarse), _as_breakpoints(fine)
    if not np.all(np.isin(np.round(cp, 14), np.round(fp, 14))):
        raise InvalidArgumentError("fine mesh does not refine the coarse mesh")
    cells = np.concatenate([np.linspace(fp[e], fp[e + 1], 4)[:-1] for e in range(fp.size - 1)] + [[fp[-1]]])
    width = np.diff(cells)
    centers = 0.5 * (cells[:-1] + cells[1:])

    def sample(pts):
        cols = []
        for a, b, funcs in element_test_functions(pts, scheme):
            inside = (centers > a) & (centers < b)
            third = np.clip(((centers - a) / (b - a) * 3).astype(int), 0, 2)
            for f in funcs:
                cols.append(np.where(inside, f[third], 0.0))
        return np.array(cols).T * np.sqrt(width)[:, None]

    C, Fm = sample(cp), sample(fp)
    coef, *_ = np.linalg.lstsq(Fm, C, rcond=None)
    res = np.linalg.norm(Fm @ coef - C, axis=0) / np.linalg.norm(C, axis=0)
    return float(res.max())

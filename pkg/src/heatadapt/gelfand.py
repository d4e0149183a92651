"""Finite-dimensional Gelfand triple ``V ⊆ H ⊆ V*`` given by a mass/stiffness pair.

Coefficient vectors ``x`` represent elements; functional vectors ``g``
represent members of ``V*`` through ``g_i = <g, phi_i>``. An element viewed
as a functional has vector ``M @ x``.
"""

from __future__ import annotations

import threading
from collections import Counter
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._validation import check_square
from .errors import InvalidArgumentError, NumericalFailureError

__all__ = [
    "DiscreteSystem",
    "SpectralFactorization",
    "eigendecompose",
    "write_coo",
    "read_coo",
]

MAX_DENSE_DIM = 5000


@dataclass(frozen=True)
class SpectralFactorization:
    """Generalized eigenpairs ``K e_i = lambda_i M e_i`` with ``E^T M E = I``."""

    eigenvalues: np.ndarray
    vectors: np.ndarray


class _DenseFactor:
    def __init__(self, A):
        self._lu = sla.lu_factor(A, check_finite=False)

    def solve(self, b):
        return sla.lu_solve(self._lu, b, check_finite=False)


class _SparseFactor:
    def __init__(self, A):
        self._lu = spla.splu(sp.csc_matrix(A))

    def solve(self, b):
        return self._lu.solve(b)


class _SpectralFactor:
    """Solves ``(a M + b K) x = r`` through the eigenbasis."""

    def __init__(self, eig, a, b):
        denom = a + b * eig.eigenvalues
        if np.any(np.abs(denom) < 1e-300):
            raise NumericalFailureError("singular pencil")
        self._E = eig.vectors
        self._inv = 1.0 / denom

    def solve(self, rhs):
        # E^T r is the coordinate vector of the functional; M-orthonormality gives
        # (aM + bK)^{-1} = E diag(1/(a + b lambda)) E^T
        coef = self._E.T @ rhs
        coef = coef * (self._inv[:, None] if coef.ndim == 2 else self._inv)
        return self._E @ coef


class DiscreteSystem:
    """Mass/stiffness pair defining the ``H``, ``V`` and ``V*`` norms.

    Parameters
    ----------
    M, K : array_like or sparse matrix
        Symmetric positive definite mass and stiffness matrices.
    backend : {"auto", "sparse", "dense", "spectral"}
        How factorizations are computed. ``"auto"`` picks sparse LU for sparse
        input and dense LU otherwise. ``"spectral"`` routes every solve through
        the generalized eigendecomposition and serves as an oracle.

    Attributes
    ----------
    counters : collections.Counter
        Running counts of factorizations and solves, keyed by kind.
    """

    def __init__(self, M, K, backend="auto"):
        M = check_square(M, name="M")
        K = check_square(K, name="K")
        if M.shape != K.shape:
            raise InvalidArgumentError(f"M and K shapes differ: {M.shape} vs {K.shape}")
        if backend not in ("auto", "sparse", "dense", "spectral"):
            raise InvalidArgumentError(f"unknown backend {backend!r}")
        if backend == "auto":
            backend = "sparse" if sp.issparse(M) or sp.issparse(K) else "dense"
        if backend == "sparse":
            M, K = sp.csc_matrix(M), sp.csc_matrix(K)
        else:
            M = M.toarray() if sp.issparse(M) else M
            K = K.toarray() if sp.issparse(K) else K
        for name, A in (("M", M), ("K", K)):
            asym = abs(A - A.T).max()
            if asym > 1e-12 * max(abs(A).max(), 1e-300):
                raise InvalidArgumentError(f"{name} is not symmetric")
        self.M = M
        self.K = K
        self.dim = M.shape[0]
        self.backend = backend
        self.counters = Counter()
        self._cache = {}
        self._lock = threading.Lock()
        self._spectral = None

    # -- norms -------------------------------------------------------------

    def _check(self, x):
        x = np.asarray(x)
        if x.shape[0] != self.dim:
            raise InvalidArgumentError(f"expected leading dimension {self.dim}, got {x.shape}")
        return x

    @staticmethod
    def _quad(A, x):
        Ax = A @ x
        return np.real(np.sum(np.conj(x) * Ax, axis=0))

    def norm_H(self, x):
        """``sqrt(x^T M x)``; columnwise for 2-D input."""
        return np.sqrt(np.maximum(self._quad(self.M, self._check(x)), 0.0))

    def norm_V(self, x):
        """``sqrt(x^T K x)``; columnwise for 2-D input."""
        return np.sqrt(np.maximum(self._quad(self.K, self._check(x)), 0.0))

    def norm_Vstar(self, g):
        """``sqrt(g^T K^{-1} g)`` for functional vectors; columnwise for 2-D input."""
        g = self._check(g)
        y = self.solve_K(g)
        return np.sqrt(np.maximum(np.real(np.sum(np.conj(g) * y, axis=0)), 0.0))

    # -- solves ------------------------------------------------------------

    def pencil_factor(self, a, b):
        """Cached factorization of ``a M + b K`` (``a``, ``b`` real or complex)."""
        key = (complex(a), complex(b))
        fac = self._cache.get(key)
        if fac is not None:
            return fac
        with self._lock:
            fac = self._cache.get(key)
            if fac is None:
                fac = self._factor(*key)
                self._cache[key] = fac
                self.counters["factorizations"] += 1
        return fac

    def _factor(self, a, b):
        if a.imag == 0 and b.imag == 0:
            a, b = a.real, b.real
        if self.backend == "spectral":
            return _SpectralFactor(self.spectral(), a, b)
        A = a * self.M + b * self.K
        try:
            fac = _SparseFactor(A) if self.backend == "sparse" else _DenseFactor(A)
        except (RuntimeError, sla.LinAlgError) as exc:
            raise NumericalFailureError(f"factorization of aM+bK failed: {exc}") from None
        return fac

    def solve_pencil(self, a, b, rhs, *, kind="pencil_solves"):
        """Solve ``(a M + b K) x = rhs``; 2-D ``rhs`` solves column by column."""
        rhs = self._check(rhs)
        fac = self.pencil_factor(a, b)
        complex_needed = np.iscomplexobj(rhs) or complex(a).imag != 0 or complex(b).imag != 0
        x = fac.solve(rhs.astype(complex if complex_needed else float, copy=False))
        if not np.all(np.isfinite(x)):
            raise NumericalFailureError("solve produced non-finite values")
        with self._lock:
            self.counters[kind] += 1 if rhs.ndim == 1 else rhs.shape[1]
        return x

    def solve_K(self, rhs):
        return self.solve_pencil(0.0, 1.0, rhs, kind="dual_solves")

    def shifted_solve(self, s, b):
        """Solve ``(s M + K) x = b`` for a shift with ``Re(s) >= 0``."""
        s = complex(s)
        if s.real < 0:
            raise NumericalFailureError(f"shift {s} may make sM+K singular")
        x = self.solve_pencil(s, 1.0, np.asarray(b), kind="shifted_solves")
        return x

    # -- spectral oracle ---------------------------------------------------

    def spectral(self):
        """Cached generalized eigendecomposition (dense, ``dim <= 5000``)."""
        if self._spectral is None:
            self._spectral = eigendecompose(self)
        return self._spectral

    def modal(self, x):
        """Eigen-coordinates ``E^T M x`` of element ``x``."""
        return self.spectral().vectors.T @ (self.M @ x)


def eigendecompose(system):
    """Dense generalized eigendecomposition ``K e = lambda M e``, ascending."""
    if system.dim > MAX_DENSE_DIM:
        raise InvalidArgumentError(f"dimension {system.dim} exceeds dense limit {MAX_DENSE_DIM}")
    M = system.M.toarray() if sp.issparse(system.M) else np.asarray(system.M)
    K = system.K.toarray() if sp.issparse(system.K) else np.asarray(system.K)
    try:
        lam, E = sla.eigh(K, M)
    except sla.LinAlgError as exc:
        raise InvalidArgumentError(f"M is not positive definite: {exc}") from None
    if lam[0] <= 0:
        raise InvalidArgumentError("K is not positive definite")
    return SpectralFactorization(lam, E)


def write_coo(path, A):
    """Write ``A`` in coordinate text format (``%dim N`` header, 0-based triples)."""
    A = sp.coo_matrix(A)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"%dim {A.shape[0]}\n")
        order = np.lexsort((A.col, A.row))
        for r, c, v in zip(A.row[order], A.col[order], A.data[order]):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")


def read_coo(path):
    with open(path, encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "%dim":
            raise InvalidArgumentError("missing '%dim N' header")
        n = int(header[1])
        rows, cols, vals = [], [], []
        for line in fh:
            if not line.strip():
                continue
            r, c, v = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    if rows and (max(rows) >= n or max(cols) >= n or min(rows + cols) < 0):
        raise InvalidArgumentError("coordinate index out of range")
    return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))

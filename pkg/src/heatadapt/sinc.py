"""Sinc approximation on the sinh-transformed real line.

The map ``phi = asinh`` sends the region ``{sinh(x + iy) : |y| < d}`` onto the
strip ``|Im w| < d``; on the strip, functions are sampled at ``k * theta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from ._validation import check_int, check_positive
from .errors import InvalidArgumentError, NumericalFailureError

__all__ = [
    "DEFAULT_D",
    "DEFAULT_ALPHA",
    "SincGrid",
    "sinc_step",
    "sinc_kernel",
    "conformal_phi",
    "conformal_psi",
    "sinc_quadrature",
    "sinc_interpolate",
    "theta_integral",
]

DEFAULT_D = math.pi / 4
DEFAULT_ALPHA = 1.0


def _check_d(d):
    d = check_positive(d, name="d")
    if d >= math.pi / 2:
        raise InvalidArgumentError("d must lie in (0, pi/2)")
    return d


def sinc_step(d, M):
    """``theta = sqrt(2 pi d / M)``; ``M = 0`` uses the ``M = 1`` step."""
    return math.sqrt(2 * math.pi * d / max(M, 1))


@dataclass(frozen=True)
class SincGrid:
    """Laplace sample points ``s_k = alpha + i sinh(k theta)`` and weights ``theta cosh(k theta)``."""

    alpha: float
    d: float
    M: int

    def __post_init__(self):
        if not self.alpha >= 1:
            raise InvalidArgumentError("alpha must be >= 1")
        _check_d(self.d)
        check_int(self.M, name="M", minimum=0)

    @property
    def theta(self):
        return sinc_step(self.d, self.M)

    @property
    def k(self):
        return np.arange(-self.M, self.M + 1)

    @property
    def z(self):
        return np.sinh(self.k * self.theta)

    @property
    def weights(self):
        return self.theta * np.cosh(self.k * self.theta)

    @property
    def points(self):
        return self.alpha + 1j * self.z


def sinc_kernel(k, theta, x):
    """``Sinc(k, theta)(x) = sin(pi u) / (pi u)`` with ``u = (x - k theta) / theta``."""
    theta = check_positive(theta, name="theta")
    return np.sinc((np.asarray(x, dtype=float) - k * theta) / theta)


def conformal_phi(z):
    """Principal ``asinh``; rejects points on the cuts ``i[1, inf)`` and ``-i[1, inf)``."""
    z = np.asarray(z, dtype=complex)
    if np.any((z.real == 0) & (np.abs(z.imag) >= 1)):
        raise InvalidArgumentError("argument lies on a branch cut of asinh")
    return np.arcsinh(z)


def conformal_psi(w):
    return np.sinh(np.asarray(w, dtype=complex))


def sinc_quadrature(F, d=DEFAULT_D, M=32):
    """Approximate ``int_R F(x) dx`` by ``theta sum_k cosh(k theta) F(sinh(k theta))``."""
    _check_d(d)
    M = check_int(M, name="M", minimum=1)
    theta = sinc_step(d, M)
    kt = np.arange(-M, M + 1) * theta
    vals = np.asarray([F(x) for x in np.sinh(kt)])
    if not np.all(np.isfinite(vals)):
        raise NumericalFailureError("integrand is not finite at a sinc node")
    w = theta * np.cosh(kt)
    # symmetric pairing keeps odd integrands at exactly zero
    total = w[M] * vals[M]
    for j in range(1, M + 1):
        total = total + w[M + j] * (vals[M + j] + vals[M - j])
    return total


def sinc_interpolate(samples, d=DEFAULT_D, K=None):
    """Weighted cardinal interpolant built from samples at ``z_k = sinh(k theta)``.

    ``samples`` has shape ``(2K+1, ...)``; the returned callable maps ``tau``
    (scalar or 1-D array) to values of shape ``(len(tau), ...)``.
    """
    _check_d(d)
    samples = np.asarray(samples)
    if K is None:
        K = (samples.shape[0] - 1) // 2
    K = check_int(K, name="K", minimum=1)
    if samples.shape[0] != 2 * K + 1:
        raise InvalidArgumentError(f"need {2 * K + 1} samples, got {samples.shape[0]}")
    theta = sinc_step(d, K)
    k = np.arange(-K, K + 1)
    z = np.sinh(k * theta)
    # phi'(z) = (1 + z^2)^(-1/2)
    weighted = samples * ((1 + z * z) ** 0.25).reshape((-1,) + (1,) * (samples.ndim - 1))

    def g(tau):
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        card = np.sinc((np.arcsinh(tau)[:, None] - k[None, :] * theta) / theta)
        scale = (1 + tau * tau) ** -0.25
        out = np.tensordot(card, weighted, axes=(1, 0))
        return out * scale.reshape((-1,) + (1,) * (out.ndim - 1))

    return g


def _theta_branch(alpha, lam, d, sign):
    def integrand(x):
        w = x + 1j * sign * d
        return abs(np.cosh(w)) / abs(alpha + 1j * np.sinh(w) + lam) ** 2

    # |alpha + lam + i z|^2 = (alpha + lam - sign cosh(x) sin d)^2 + sinh(x)^2 cos(d)^2,
    # so the upper curve peaks near cosh(x) = (alpha + lam) / sin(d)
    x_star = math.acosh(max(1.0, (alpha + lam) / math.sin(d))) if sign > 0 else 0.0
    peak = max(integrand(x_star), integrand(0.0))
    # the integrand decays like 2 exp(-|x|) / cos(d)^2; cut where it drops below 1e-16 * peak
    reach = x_star + 1.0
    while integrand(reach) >= 1e-16 * peak or integrand(-reach) >= 1e-16 * peak:
        reach += 1.0
    pts = sorted({-x_star, 0.0, x_star})
    total = 0.0
    for lo, hi in zip([-reach] + pts, pts + [reach]):
        if hi > lo:
            val, _ = integrate.quad(integrand, lo, hi, limit=400, epsabs=0, epsrel=1e-12)
            total += val
    return total


def theta_integral(alpha, lam, d):
    """Contour integral of ``|dz| / |alpha + i z + lam|^2`` over both curves ``sinh(x +- i d)``."""
    if not alpha >= 1:
        raise InvalidArgumentError("alpha must be >= 1")
    lam = check_positive(lam, name="lam")
    d = _check_d(d)
    return _theta_branch(alpha, lam, d, +1) + _theta_branch(alpha, lam, d, -1)

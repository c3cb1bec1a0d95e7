"""Helmholtz kernel with two-term singularity subtraction.

    g_k(R) = exp(ikR) / (4 pi R)
           = 1/(4 pi R) + ik/(4 pi) - k^2 R/(8 pi) - ...

The singular part ``1/(4 pi R) - k^2 R/(8 pi)`` is integrated in closed
form elsewhere; the functions here provide the full kernel, its gradient,
and the smooth remainders. All scalar functions accept plain arrays or
:class:`efieshape.dual.Dual` distances.
"""

from __future__ import annotations

import math

import numpy as np

from . import dual as dn

FOUR_PI = 4.0 * math.pi
# below k*R < _SERIES_SWITCH the remainder is summed from its Taylor series
_SERIES_SWITCH = 1.0
_SERIES_TERMS = 26


def singular_coefficients(k):
    """Coefficients ``(a, b)`` of the subtracted part ``a/R - b*R``."""
    return 1.0 / FOUR_PI, k * k / (2.0 * FOUR_PI)


def green(k, r):
    """``exp(ikr) / (4 pi r)`` for a distance ``r > 0``."""
    if np.any(dn.value(r) <= 0):
        raise ValueError("green() needs strictly positive distances")
    return dn.exp(1j * k * r) / (FOUR_PI * r)


def green_gradient(k, rvec):
    """Gradient of ``g_k`` evaluated at the difference vector ``rvec``."""
    r = dn.norm(rvec)
    if np.any(dn.value(r) <= 0):
        raise ValueError("green_gradient() needs a nonzero difference vector")
    g = dn.exp(1j * k * r) / (FOUR_PI * r)
    scale = g * (1j * k - 1.0 / r) / r
    return dn.expand(scale, -1) * rvec


def _series_coefficients(k, derivative=False):
    # remainder * 4 pi = ik + sum_{n>=3} (ik)^n R^(n-1) / n!
    coeffs = []
    for n in range(3, _SERIES_TERMS + 3):
        c = (1j * k) ** n / math.factorial(n)
        coeffs.append(c * (n - 1) if derivative else c)
    return coeffs


def _horner(coeffs, r):
    acc = coeffs[-1]
    for c in reversed(coeffs[:-1]):
        acc = c + r * acc
    return acc


def green_smooth(k, r):
    """Remainder ``g_k(r) - 1/(4 pi r) + k^2 r/(8 pi)``; finite at ``r = 0``.

    Summed from the Taylor series for ``k r < 1`` to avoid cancellation, in
    closed form otherwise.
    """
    if k == 0:
        return 0.0 * r + 0j
    rv = dn.value(r)
    near = k * rv < _SERIES_SWITCH
    series = (1j * k + r * r * _horner(_series_coefficients(k), r)) / FOUR_PI
    if np.all(near):
        return series
    safe = dn.where(near, 1.0, r)
    direct = (dn.exp(1j * k * safe) - 1.0) / (FOUR_PI * safe) + (k * k / (2.0 * FOUR_PI)) * safe
    return dn.where(near, series, direct)


def green_gradient_smooth(k, rvec):
    """Gradient of :func:`green_smooth` at ``rvec``; zero at the origin."""
    r = dn.norm(rvec)
    if k == 0:
        return 0.0 * rvec + 0j
    rv = dn.value(r)
    near = k * rv < _SERIES_SWITCH
    # d/dR remainder, divided by R
    scale = _horner(_series_coefficients(k, derivative=True), r) / FOUR_PI
    if not np.all(near):
        safe = dn.where(near, 1.0, r)
        g = dn.exp(1j * k * safe) / (FOUR_PI * safe)
        direct = (g * (1j * k - 1.0 / safe) + 1.0 / (FOUR_PI * safe * safe)
                  + k * k / (2.0 * FOUR_PI)) / safe
        scale = dn.where(near, scale, direct)
    return dn.expand(scale, -1) * rvec

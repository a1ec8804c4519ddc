"""Airy function Ai on complex arguments and its decaying-ray antiderivative.

a0(z) is the integral of Ai along the rotated ray,

    a0(z) = e^{i pi/6} * integral_z^infinity Ai(e^{i pi/6} t) dt,

evaluated by composite Gauss-Legendre panels marched until the integrand
underflows.  The public airy_ai is contracted for |z| <= 50; the wall-layer
profiles additionally use the guarded evaluator, which returns exact 0 in
the deep-underflow sector (|Ai| below ~1e-52, where the backend's unscaled
path can emit garbage instead of 0).
"""

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import airy as _scipy_airy

from .errors import AiryRangeError

__all__ = ["airy_ai", "airy_ai_deriv", "a0", "AI_AT_ZERO"]

_ROT = np.exp(1j * np.pi / 6)
# (2/3) Re z^{3/2} beyond which Ai is treated as exact 0: the backend loses
# all precision near its underflow edge (observed from exponent ~678); 600
# clips only values below ~1e-261 while the |z| <= 50 contract region never
# exceeds exponent 236.
_UNDERFLOW_EXPONENT = 600.0
_GL_NODES, _GL_WEIGHTS = leggauss(24)

# 3^{-2/3} / Gamma(2/3)
AI_AT_ZERO = 0.3550280538878172


def _decay_exponent(z):
    return (2.0 / 3.0) * np.real(z ** 1.5)


def airy_ai_guarded(z):
    """Ai(z) with a hard zero in the deep-underflow sector; vectorized."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    out = np.zeros(z.shape, dtype=complex)
    small = np.abs(z) < 8.0
    live = small | (_decay_exponent(z) < _UNDERFLOW_EXPONENT)
    if live.any():
        out[live] = _scipy_airy(z[live])[0]
    out[~np.isfinite(out)] = 0.0
    return out


def airy_ai(z):
    """Ai(z) for |z| <= 50 (scalar or array); larger arguments are rejected."""
    arr = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(np.abs(arr) > 50.0):
        raise AiryRangeError("airy_ai is contracted for |z| <= 50")
    out = airy_ai_guarded(arr)
    return out if np.ndim(z) else complex(out[0])


def airy_ai_deriv(z):
    """Ai'(z) for |z| <= 50."""
    arr = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(np.abs(arr) > 50.0):
        raise AiryRangeError("airy_ai_deriv is contracted for |z| <= 50")
    out = _scipy_airy(arr)[1]
    return out if np.ndim(z) else complex(out[0])


def a0(z, tail_tol=1e-18):
    """Antiderivative of Ai along the e^{i pi/6} ray, from z to infinity."""
    z = complex(z)
    if abs(z) > 50.0:
        raise AiryRangeError("a0 is contracted for |z| <= 50")
    total = 0.0 + 0.0j
    s = 0.0
    for _ in range(2000):
        # panel length tracks the local oscillation/decay scale of Ai
        h = max(0.25, 0.5 / np.sqrt(1.0 + abs(z + s)))
        t = s + 0.5 * h * (_GL_NODES + 1.0)
        total += 0.5 * h * np.sum(_GL_WEIGHTS * airy_ai_guarded(_ROT * (z + t)))
        s += h
        if s > 3.0 and abs(airy_ai_guarded(_ROT * (z + s))[0]) < tail_tol:
            break
    return _ROT * total

"""Complex exponential integral Ei(z).

Branch convention: principal value (purely real) on the negative real axis,
imaginary part continuous within each open half-plane, so Ei(x ± i0) =
PV ± iπ for x < 0 and Ei(x + iy) -> ±iπ as y -> ±inf.  The negative-axis
jump is carried separately by the timed-spectral-density formulas, which is
why the function itself must be branch-free there.

Two implementations: an ``@njit`` kernel (power series for small |z|, a
modified-Lentz continued fraction for E1(-z) away from the positive real
axis, and the divergent asymptotic series near it) and a pure-numpy path
that defers to ``scipy.special.expi``, which follows the same convention.
``FTES_NUMBA=0`` selects the scipy path.
"""

import math

import numpy as np
import scipy.special

from .accel import USE_NUMBA, njit_or_py

_EULER_GAMMA = 0.5772156649015328606
_SERIES_RADIUS = 8.0
_ASYMPTOTIC_RADIUS = 30.0
_MAXITER = 800


def _ei_kernel(z):
    # z == 0 is screened by the wrappers; return nan defensively.
    if z == 0:
        return complex(np.nan, np.nan)
    r = abs(z)
    x, y = z.real, z.imag

    use_series = r <= _SERIES_RADIUS or (
        x > 0.0 and abs(y) <= x and r <= _ASYMPTOTIC_RADIUS
    )
    if use_series:
        # Ei(z) = gamma + log z + sum_k z^k / (k k!), log real on the cut.
        if y == 0.0 and x < 0.0:
            logterm = complex(math.log(-x), 0.0)
        else:
            logterm = np.log(z)
        acc = complex(0.0, 0.0)
        term = complex(1.0, 0.0)
        for k in range(1, _MAXITER):
            term *= z / k
            contrib = term / k
            acc += contrib
            if abs(contrib) < 1e-18 * (abs(acc) + 1e-300):
                break
        return _EULER_GAMMA + logterm + acc

    if y > 0.0:
        branch = complex(0.0, math.pi)
    elif y < 0.0:
        branch = complex(0.0, -math.pi)
    else:
        branch = complex(0.0, 0.0)

    if x > 0.0 and abs(y) <= x:
        # near the positive real axis with large |z|: asymptotic series
        acc = complex(1.0, 0.0)
        term = complex(1.0, 0.0)
        prev = 1.0
        for k in range(1, 61):
            term *= k / z
            mag = abs(term)
            if mag > prev:
                break
            acc += term
            prev = mag
            if mag < 1e-18:
                break
        return np.exp(z) / z * acc + branch

    # modified Lentz continued fraction for E1(w), w = -z
    w = -z
    tiny = 1e-290
    b = w + 1.0
    if b == 0:
        b = complex(tiny, 0.0)
    c = complex(1e290, 0.0)
    d = 1.0 / b
    h = d
    for i in range(1, _MAXITER):
        a = -float(i) * float(i)
        b += 2.0
        d = a * d + b
        if d == 0:
            d = complex(tiny, 0.0)
        c = b + a / c
        if c == 0:
            c = complex(tiny, 0.0)
        d = 1.0 / d
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    e1 = h * np.exp(-w)
    return -e1 + branch


def _ei_many_kernel(z, out):
    for i in range(z.shape[0]):
        out[i] = _ei_kernel(z[i])
    return out


_ei_jit = njit_or_py(_ei_kernel)
if USE_NUMBA:
    import numba

    @numba.njit(cache=True)
    def _ei_many_jit(z, out):  # pragma: no cover - thin jit wrapper
        for i in range(z.shape[0]):
            out[i] = _ei_jit(z[i])
        return out

else:
    _ei_many_jit = None


def exp_integral(z):
    """Ei(z) for scalar complex z (principal value on the negative axis)."""
    z = complex(z)
    if z == 0:
        raise ValueError("Ei(z) has a logarithmic singularity at z = 0")
    if USE_NUMBA:
        return complex(_ei_jit(z))
    return complex(scipy.special.expi(z))


def ei_complex(z):
    """Vectorized Ei over a complex array (same branch as exp_integral)."""
    z = np.asarray(z, dtype=np.complex128)
    if np.any(z == 0):
        raise ValueError("Ei(z) has a logarithmic singularity at z = 0")
    if USE_NUMBA:
        flat = np.ascontiguousarray(z.reshape(-1))
        out = np.empty_like(flat)
        _ei_many_jit(flat, out)
        return out.reshape(z.shape)
    return scipy.special.expi(z)


def ei_real(x):
    """Real exponential integral ei(x), principal value for x < 0."""
    return scipy.special.expi(np.asarray(x, dtype=np.float64))


def ei_reference(z):
    """Series/CF evaluation bypassing the dispatch (used by the benchmark)."""
    return _ei_kernel(complex(z))

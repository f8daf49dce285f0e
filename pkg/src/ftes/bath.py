"""Bath-derived scalar functions.

Spectral density J, principle density S (its Kramers-Kronig partner),
zero-temperature bath correlation function C, and the timed spectral
density Gamma(omega, t) = int_0^t C(tau) exp(i omega tau) dtau, with closed
forms for Ohmic (s=1) and super-Ohmic (s=3) exponents.  Everything is a
pure function of a BathSpec; temperature is zero throughout.
"""

from dataclasses import dataclass
from math import gamma as gamma_fn

import numpy as np

from .expint import ei_complex, ei_real


class UnsupportedExponentError(ValueError):
    """Closed forms exist only for s = 1 and s = 3."""


@dataclass(frozen=True)
class BathSpec:
    """Ohmicity family J(w) = (pi/2) alpha w_c (w/w_c)^s Theta(w) e^{-w/w_c}."""

    alpha: float
    omega_c: float = 10.0
    s: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.omega_c <= 0:
            raise ValueError("omega_c must be > 0")
        if self.s <= 0:
            raise ValueError("s must be > 0")

    def _require_closed_form(self):
        if self.s not in (1, 1.0, 3, 3.0):
            raise UnsupportedExponentError(
                f"closed forms are available for s in {{1, 3}}, got s={self.s}"
            )


def spectral_density(omega, bath: BathSpec):
    """J(omega); Theta(0) := 0 so J vanishes at and below zero frequency."""
    omega = np.asarray(omega, dtype=np.float64)
    x = np.where(omega > 0.0, omega / bath.omega_c, 1.0)
    out = 0.5 * np.pi * bath.alpha * bath.omega_c * np.where(
        omega > 0.0, x ** bath.s * np.exp(-x), 0.0
    )
    return out if out.ndim else float(out)


def bath_correlation(t, bath: BathSpec):
    """C(t) = alpha w_c^2 Gamma(s+1) / [2 (1 + i w_c t)^(s+1)]."""
    t = np.asarray(t, dtype=np.float64)
    pref = 0.5 * bath.alpha * bath.omega_c**2 * gamma_fn(bath.s + 1)
    out = pref / (1.0 + 1j * bath.omega_c * t) ** (bath.s + 1)
    return out if out.ndim else complex(out)


def principle_density(omega, bath: BathSpec):
    """S(omega): imaginary part of the Markov-limit timed spectral density.

    Closed forms use the real exponential integral ei with its principal
    value on the negative axis.  The x*ei(x) products are regular at x = 0,
    where S(0) = -alpha w_c Gamma(s) / 2.
    """
    bath._require_closed_form()
    omega = np.asarray(omega, dtype=np.float64)
    x = omega / bath.omega_c
    xs = np.where(x == 0.0, 1.0, x)  # placeholder, masked below
    eix = np.where(x == 0.0, 0.0, ei_real(xs))
    half = 0.5 * bath.alpha * bath.omega_c
    if bath.s == 1:
        out = -half * (1.0 - x * np.exp(-x) * eix)
    else:
        out = -half * (2.0 + x + x**2 - x**3 * np.exp(-x) * eix)
    return out if out.ndim else float(out)


def _gamma_zero_freq(t, bath: BathSpec):
    u = 1.0 + 1j * bath.omega_c * np.asarray(t, dtype=np.float64)
    if bath.s == 1:
        return -0.5j * bath.alpha * bath.omega_c * (1.0 - 1.0 / u)
    return -1j * bath.alpha * bath.omega_c * (1.0 - u**-3)


def timed_spectral_density(omega, t, bath: BathSpec):
    """Gamma(omega, t) for t >= 0, one scalar frequency, t scalar or array.

    The ei(x + i*omega*t) branch is evaluated off-axis (the sign of omega
    selects the half-plane), and the residual -i*pi*Theta(-omega) jump of
    the principal-value ei(x) is restored explicitly, following the split
    used in the closed forms.  Gamma(omega, 0) = 0 identically, and the
    omega = 0 limit is taken analytically.
    """
    bath._require_closed_form()
    omega = float(omega)
    t = np.asarray(t, dtype=np.float64)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    if np.any(t < 0):
        raise ValueError("timed spectral density is defined for t >= 0")

    if omega == 0.0:
        out = _gamma_zero_freq(t, bath)
    else:
        x = omega / bath.omega_c
        u = 1.0 + 1j * bath.omega_c * t
        phase = np.exp(1j * omega * t)
        # keep the complex ei argument off the cut at t = 0 (limit is fixed below)
        zt = np.where(t == 0.0, 1.0, t)
        bracket = (
            ei_real(x)
            - ei_complex(x + 1j * omega * zt)
            - (1j * np.pi if x < 0 else 0.0)
        )
        if bath.s == 1:
            out = (
                -0.5j
                * bath.alpha
                * bath.omega_c
                * (1.0 - phase / u - x * np.exp(-x) * bracket)
            )
        else:
            out = (
                -0.5j
                * bath.alpha
                * bath.omega_c
                * (
                    x**2 * (1.0 - phase / u)
                    + x * (1.0 - phase / u**2)
                    + 2.0 * (1.0 - phase / u**3)
                    - x**3 * np.exp(-x) * bracket
                )
            )
        out = np.where(t == 0.0, 0.0 + 0.0j, out)
    return complex(out[0]) if scalar else out


def markov_spectral_density(omega, bath: BathSpec):
    """Gamma(omega, inf) = J(omega) + i S(omega)."""
    return complex(spectral_density(omega, bath) + 1j * principle_density(omega, bath))


def lineshape(t, bath: BathSpec):
    """Twice-integrated BCF eta(t) = int_0^t (t-u) C(u) du, closed form.

    Second differences of eta on a uniform grid reproduce the windowed
    double integrals of C used by the discretized influence functional;
    the quadrature route in the tempo module is cross-checked against this.
    """
    t = np.asarray(t, dtype=np.float64)
    wc, s = bath.omega_c, float(bath.s)
    pref = 0.5 * bath.alpha * wc**2 * gamma_fn(s + 1)
    u = 1.0 + 1j * wc * t
    if s == 1.0:
        inner = np.log(u) / (1j * wc)
    else:
        inner = (1.0 - u ** (1.0 - s)) / ((s - 1.0) * 1j * wc)
    out = pref * (t - inner) / (s * 1j * wc)
    return out if np.ndim(t) else complex(out)

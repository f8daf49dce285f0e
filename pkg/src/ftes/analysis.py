"""Scans and searches built on top of the generators.

Fault-tolerant excited-state (FTES) optimization, parameter scans behind
the figures, the coarse-graining diagnostic, decay-curve fitting, and small
generic helpers (golden-section gap minimization, oscillation periods).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import curve_fit, minimize, minimize_scalar

from .mastereq import (
    NoStationaryStateError,
    Superoperator,
    asymptotic_state,
    commutator_superop,
    game_generator,
    propagate_observable,
    redfield_generator,
    relaxation_rates,
)
from .system import (
    SINGLET,
    SystemModel,
    canonical_eigh,
    lamb_shift,
    purity,
    renormalized_hamiltonian,
    renormalized_spectrum,
    singlet_fidelity,
)

PURITY_FLOOR = 1e-16


# ---------------------------------------------------------------------------
# level scans


def level_gap(model: SystemModel, variant: str = "full", levels=(1, 2)) -> float:
    """Spacing between two energy-ordered levels of the renormalized H."""
    energies = renormalized_spectrum(model, variant)["energies"]
    return float(energies[levels[1]] - energies[levels[0]])


def minimum_gap_alpha(template: SystemModel, bracket, variant: str = "full"):
    """Golden-section search for the avoided-crossing alpha (levels 2/3)."""
    res = minimize_scalar(
        lambda a: level_gap(template.with_(alpha=float(a)), variant),
        bracket=bracket,
        method="golden",
        options={"xtol": 1e-10},
    )
    return float(res.x), float(res.fun)


# ---------------------------------------------------------------------------
# FTES search


@dataclass
class FtesResult:
    eta_star: float
    zeta_star: float
    rho_inf: Optional[np.ndarray]
    purity: float
    singlet_fidelity: float
    gamma_r: Optional[float]
    gamma_max: Optional[float]
    converged: bool
    unique: bool = True
    ft_index: int = -1
    jump_residual: float = np.nan  # ||M |FT>|| at the optimum
    message: str = ""
    extras: dict = field(default_factory=dict)


def _asymptotic_purity(template: SystemModel, eta: float, zeta: float):
    model = template.with_(eta=float(eta), zeta=float(zeta))
    sup = game_generator(model)
    try:
        ast = asymptotic_state(sup)
    except NoStationaryStateError:
        return None, None, None
    return purity(ast["rho_inf"]), ast, sup


def _renormalized_weights(model: SystemModel, sup: Superoperator, rho: np.ndarray):
    """Populations of rho in the eigenbasis of H_S + H_L, plus that basis."""
    h_ren = sup.basis @ np.diag(sup.energies.astype(complex)) @ sup.basis.conj().T
    h_ren = h_ren + lamb_shift(model)
    energies, vecs = canonical_eigh(h_ren)
    weights = np.real(np.einsum("ik,ij,jk->k", vecs.conj(), rho, vecs))
    return weights, energies, vecs


def _purity_objective(template: SystemModel):
    """log10(1 - purity) of the GAME asymptote, excited states only.

    The maximally-pure *ground*-state asymptote is a trivial optimum far
    from the FTES; asymptotes dominated by the renormalized ground state
    are sent to the pessimal value so Nelder-Mead stays in the excited
    basin around the singlet-fidelity peak.
    """

    def f(x):
        p, ast, sup = _asymptotic_purity(template, x[0], x[1])
        if p is None:
            return 1.0
        model = template.with_(eta=float(x[0]), zeta=float(x[1]))
        weights, _, _ = _renormalized_weights(model, sup, ast["rho_inf"])
        if int(np.argmax(weights)) == 0:
            return 1.0
        return np.log10(max(1.0 - p, 0.0) + PURITY_FLOOR)

    return f


def dark_state_residual(template: SystemModel, eta: float, zeta: float) -> float:
    """||M |FT>|| for the singlet-like eigenstate of H_S + H_L.

    At zero temperature only the transition to the ground state survives,
    so this is a single complex amplitude; its zeros in the (eta, zeta)
    plane are the fault-tolerance condition.
    """
    model = template.with_(eta=float(eta), zeta=float(zeta))
    sup = game_generator(model)
    h_ren = renormalized_hamiltonian(model, "full")
    _, vecs = canonical_eigh(h_ren)
    k = int(np.argmax(np.abs(SINGLET.conj() @ vecs) ** 2))
    return float(np.linalg.norm(sup.extras["jump"] @ vecs[:, k]))


def _nelder_mead(obj, x, h_eta, h_zeta, xatol, maxiter=800):
    simplex = np.array([x, x + [h_eta, 0.0], x + [0.0, h_zeta]])
    res = minimize(
        obj,
        x,
        method="Nelder-Mead",
        options={
            "initial_simplex": simplex,
            "xatol": xatol,
            "fatol": 1e-3,
            "maxiter": maxiter,
        },
    )
    return res.x, res.fun


def optimize_ftes(
    template: SystemModel,
    x0=None,
    coarse_points: int = 49,
    purity_target: float = 1e-8,
    jump_tol: float = 1e-6,
) -> FtesResult:
    """Maximize asymptotic-state purity of GAME over (eta, zeta).

    Seeding: a coarse eta-scan at zeta = 0 locates the singlet-fidelity
    peak, and Nelder-Mead on the dark-state residual ||M |FT>|| pins the
    fault-tolerance condition (the purity spike can be far too narrow to
    find blind, especially without the counterterm).  The reported optimum
    then comes from Nelder-Mead on log10(1 - purity), restarted once.  A
    result is converged when purity > 1 - purity_target, the kernel is
    one-dimensional, and the identified excited eigenstate of H_S + H_L is
    annihilated by the jump operator to jump_tol.
    """
    bath = template.bath
    if x0 is None:
        span = 1.3 * template.xi / max(bath.alpha, 1e-12) + 0.02
        etas = np.linspace(-span, span, coarse_points)
        fids = []
        for e in etas:
            p, ast, _ = _asymptotic_purity(template, e, 0.0)
            fids.append(-1.0 if p is None else singlet_fidelity(ast["rho_inf"]))
        eta0 = float(etas[int(np.argmax(fids))])
        # the dynamics is even in zeta (complex conjugation maps zeta to
        # -zeta) so zeta = 0 is always stationary; probe a log-spaced grid
        # for the scale and sign the residual actually prefers
        zeta_grid = np.concatenate([[0.0], template.xi * np.logspace(-2.5, 0.7, 12)])
        resid = [dark_state_residual(template, eta0, z) for z in zeta_grid]
        x0 = (eta0, float(zeta_grid[int(np.argmin(resid))]))

    x = np.asarray(x0, dtype=float)
    dark_obj = lambda y: np.log10(  # noqa: E731
        dark_state_residual(template, y[0], y[1]) ** 2 + 1e-300
    )
    h_eta = 0.1 * (abs(x[0]) + 0.01)
    h_zeta = 0.5 * abs(x[1]) if x[1] != 0.0 else 0.05 * template.xi + 1e-6
    x, _ = _nelder_mead(dark_obj, x, h_eta, h_zeta, xatol=1e-15, maxiter=1200)

    obj = _purity_objective(template)
    fun = obj(x)
    for _ in range(2):
        h_eta = 3e-3 * (abs(x[0]) + 0.01)
        h_zeta = 0.03 * abs(x[1]) if x[1] != 0.0 else 0.02 * template.xi + 1e-8
        x, fun = _nelder_mead(obj, x, h_eta, h_zeta, xatol=1e-14)
        if 10.0 ** fun < purity_target:
            break

    eta_s, zeta_s = float(x[0]), float(x[1])
    p, ast, sup = _asymptotic_purity(template, eta_s, zeta_s)
    if p is None:
        return FtesResult(
            eta_s, zeta_s, None, -1.0, 0.0, None, None, False, message="no kernel"
        )
    model = template.with_(eta=eta_s, zeta=zeta_s)
    rho = ast["rho_inf"]
    rates = relaxation_rates(sup)

    # identify the renormalized eigenstate the asymptote projects onto
    weights, _, vecs = _renormalized_weights(model, sup, rho)
    ft_index = int(np.argmax(weights))
    m_jump = sup.extras["jump"]
    jump_residual = float(np.linalg.norm(m_jump @ vecs[:, ft_index]))

    converged = (
        p > 1.0 - purity_target
        and ast["unique"]
        and jump_residual < jump_tol
        and ft_index > 0
    )
    return FtesResult(
        eta_star=eta_s,
        zeta_star=zeta_s,
        rho_inf=rho,
        purity=p,
        singlet_fidelity=singlet_fidelity(rho),
        gamma_r=rates["gamma_r"],
        gamma_max=rates["gamma_max"],
        converged=converged,
        unique=ast["unique"],
        ft_index=ft_index,
        jump_residual=jump_residual,
        message="" if converged else "tolerance not reached",
    )


def ftes_scan(
    template: SystemModel,
    sweep: str,
    grid,
    jump_threshold: float = 0.6,
) -> list:
    """FTES optimization along a xi- or alpha-grid with warm starts.

    Per-point failures are recorded in the result (converged=False) and the
    scan continues.  A warm-started optimum jumping by more than
    jump_threshold * (|previous| + 0.05) in eta marks the point as a branch
    jump in its message.
    """
    if sweep not in ("xi", "alpha"):
        raise ValueError("sweep must be 'xi' or 'alpha'")
    results = []
    x0 = None
    for value in grid:
        model = template.with_(**{sweep: float(value)})
        try:
            res = optimize_ftes(model, x0=x0)
        except Exception as exc:  # per-point isolation
            res = FtesResult(
                np.nan, np.nan, None, -1.0, 0.0, None, None, False, message=str(exc)
            )
        if (
            results
            and results[-1].converged
            and res.converged
            and abs(res.eta_star - results[-1].eta_star)
            > jump_threshold * (abs(results[-1].eta_star) + 0.05)
        ):
            res.message = "branch jump relative to warm start"
        results.append(res)
        if res.converged:
            x0 = (res.eta_star, res.zeta_star)
    return results


# ---------------------------------------------------------------------------
# decay scans

_GENERATORS = {"redfield": redfield_generator, "game": game_generator}


def decay_scan(
    template: SystemModel,
    eta_list,
    method: str = "game",
    times=None,
    rho0=None,
    observable=None,
    tcl4_options=None,
    tempo_config=None,
):
    """Singlet-fidelity curves versus time, one per eta.

    method is one of redfield | game | tcl4 | tempo.  Returns (times, dict
    eta -> fidelity array); per-eta failures are stored as None.
    """
    if times is None:
        times = np.linspace(0.0, 100.0, 501)
    times = np.asarray(times, dtype=float)
    if rho0 is None:
        rho0 = np.outer(SINGLET, SINGLET.conj())
    if observable is None:
        observable = np.outer(SINGLET, SINGLET.conj())

    curves = {}
    for eta in eta_list:
        model = template.with_(eta=float(eta))
        try:
            if method in _GENERATORS:
                sup = _GENERATORS[method](model)
                curves[float(eta)] = propagate_observable(sup, rho0, times, observable)
            elif method == "tcl4":
                from .tcl4 import tcl4_generator

                sup = tcl4_generator(model, **(tcl4_options or {}))
                curves[float(eta)] = propagate_observable(sup, rho0, times, observable)
            elif method == "tempo":
                from .tempo import TempoConfig, tempo_propagate

                cfg = tempo_config or TempoConfig(t_max=float(times.max()))
                t_grid, vals, _ = tempo_propagate(model, rho0, cfg, observable)
                curves[float(eta)] = np.interp(times, t_grid, vals)
            else:
                raise ValueError(f"unknown method '{method}'")
        except ValueError:
            raise
        except Exception:
            curves[float(eta)] = None
    return times, curves


# ---------------------------------------------------------------------------
# coarse-graining diagnostic


def _eigenframe_superop(model: SystemModel, kind: str) -> np.ndarray:
    """Generator matrix in the H_S eigenbasis labeling (Schroedinger picture)."""
    sup = _GENERATORS[kind](model)
    w = np.kron(np.conj(sup.basis), sup.basis)
    return w.conj().T @ sup.matrix @ w, sup.energies


def coarse_grain_distance(model: SystemModel, tc_grid) -> np.ndarray:
    """Frobenius distance between sinc-filtered RE and GAME superoperators.

    The filter multiplies element [(n,m),(i,j)] by sinc[(w_nm - w_ij) Tc/2]
    in the eigenbasis labeling; Tc = 0 reproduces the unfiltered distance.
    """
    r_re, energies = _eigenframe_superop(model, "redfield")
    r_game, _ = _eigenframe_superop(model, "game")
    bohr = energies[:, None] - energies[None, :]
    w_vec = bohr.reshape(-1, order="F")  # vec index n + 4m -> w_nm
    dw = w_vec[:, None] - w_vec[None, :]
    diff = r_re - r_game
    out = np.empty(len(tc_grid), dtype=float)
    for k, tc in enumerate(tc_grid):
        filt = np.sinc(dw * float(tc) / (2.0 * np.pi))
        out[k] = np.linalg.norm(diff * filt)
    return out


# ---------------------------------------------------------------------------
# curve fitting


def fit_exponential_decay(times, values, window=None):
    """Fit a + b exp(-gamma t) on a window; also fit a line for comparison.

    Returns a dict with the exponential parameters, RMS residuals of both
    models, and an ill_conditioned flag when gamma*(t_hi - t_lo) << 1 (the
    exponential is then indistinguishable from a line).
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is not None:
        mask = (times >= window[0]) & (times <= window[1])
        times, values = times[mask], values[mask]
    if times.size < 20:
        raise ValueError("need at least 20 samples in the fit window")

    t0 = times[0]
    shifted = times - t0

    def model(t, a, b, gamma):
        return a + b * np.exp(-gamma * t)

    a0 = values[-1]
    b0 = values[0] - a0
    span = shifted[-1] if shifted[-1] > 0 else 1.0
    gamma0 = 1.0 / span
    try:
        popt, _ = curve_fit(
            model, shifted, values, p0=(a0, b0, gamma0), maxfev=20000
        )
        converged = True
    except RuntimeError:
        popt, converged = (a0, b0, gamma0), False
    resid_exp = float(np.sqrt(np.mean((model(shifted, *popt) - values) ** 2)))

    lin = np.polyfit(shifted, values, 1)
    resid_lin = float(np.sqrt(np.mean((np.polyval(lin, shifted) - values) ** 2)))

    gamma = float(popt[2])
    ill = abs(gamma) * span < 0.05 or resid_exp > 0.9 * resid_lin
    return {
        "offset": float(popt[0]),
        "amplitude": float(popt[1]) * float(np.exp(gamma * t0)),
        "gamma": gamma,
        "converged": converged,
        "residual_exp": resid_exp,
        "residual_lin": resid_lin,
        "linear_slope": float(lin[0]),
        "linear_intercept": float(lin[1] - lin[0] * t0),
        "ill_conditioned": bool(ill),
    }


def oscillation_period(times, series) -> float:
    """Mean spacing of local maxima, with parabolic sub-grid refinement."""
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    peaks = []
    for i in range(1, len(series) - 1):
        if series[i] >= series[i - 1] and series[i] > series[i + 1]:
            y0, y1, y2 = series[i - 1], series[i], series[i + 1]
            denom = y0 - 2 * y1 + y2
            shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
            dt = times[i + 1] - times[i]
            peaks.append(times[i] + shift * dt)
    if len(peaks) < 2:
        raise ValueError("need at least two maxima to measure a period")
    return float(np.mean(np.diff(peaks)))


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y versus log x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def parabolic_minimum(x, y, half_width: int = 3):
    """Parabola fit through +-half_width grid points around the minimum.

    Returns (x_min, y_min) of the fitted parabola (fit window documented:
    three points on each side of the grid minimum).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = int(np.argmin(y))
    lo = max(0, k - half_width)
    hi = min(len(x), k + half_width + 1)
    coeff = np.polyfit(x[lo:hi], y[lo:hi], 2)
    if coeff[0] <= 0:
        return float(x[k]), float(y[k])
    xm = -coeff[1] / (2 * coeff[0])
    return float(xm), float(np.polyval(coeff, xm))

"""Redfield and GAME generators as 16x16 superoperators.

Vectorization is column-stacking: vec(rho) = rho.flatten(order='F'), so
vec(A rho B) = kron(B.T, A) vec(rho).  Generators are assembled in the H_S
eigenbasis (where Bohr frequencies are defined) and conjugated back to the
computational basis.  Propagation is spectral (decompose vec(rho0) over the
generator eigenvectors and exponentiate), with a scaling-and-squaring
fallback when the eigenvector matrix is ill-conditioned.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp

from .bath import markov_spectral_density, spectral_density, timed_spectral_density
from .system import (
    SystemModel,
    build_coupling_operator,
    build_system_hamiltonian,
    eigenbasis,
)

KERNEL_TOL_FACTOR = 1e-10  # zero-eigenvalue cut, relative to ||R||


class NoStationaryStateError(RuntimeError):
    pass


def vectorize(rho: np.ndarray) -> np.ndarray:
    """Column-stacked vectorization (columns appended one after another)."""
    return np.asarray(rho, dtype=complex).reshape(-1, order="F")


def devectorize(vec: np.ndarray) -> np.ndarray:
    n = int(round(np.sqrt(vec.size)))
    return np.asarray(vec, dtype=complex).reshape((n, n), order="F")


def commutator_superop(h: np.ndarray) -> np.ndarray:
    """Superoperator of rho -> -i [h, rho]."""
    n = h.shape[0]
    eye = np.eye(n)
    return -1j * (np.kron(eye, h) - np.kron(h.T, eye))


def _dissipator_from_lambda(a: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """A rho L^dag - rho L^dag A - A L rho + L rho A as a superoperator."""
    eye = np.eye(a.shape[0])
    return (
        np.kron(np.conj(lam), a)
        - np.kron((lam.conj().T @ a).T, eye)
        - np.kron(eye, a @ lam)
        + np.kron(a.T, lam)
    )


@dataclass
class Superoperator:
    """16x16 generator with eigenbasis metadata and a cached spectral form."""

    matrix: np.ndarray
    method: str
    energies: np.ndarray
    basis: np.ndarray  # columns: H_S eigenvectors in the computational basis
    model: SystemModel
    extras: dict = field(default_factory=dict)
    _eig: tuple = field(default=None, repr=False)

    @property
    def bohr(self) -> np.ndarray:
        return self.energies[:, None] - self.energies[None, :]

    def spectral(self):
        """(eigenvalues, eigenvectors, condition number), cached."""
        if self._eig is None:
            vals, vecs = np.linalg.eig(self.matrix)
            cond = np.linalg.cond(vecs)
            self._eig = (vals, vecs, cond)
        return self._eig

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix))


def lambda_filtered(a_eig: np.ndarray, bath, bohr: np.ndarray, t=np.inf) -> np.ndarray:
    """Lambda(t)_{ij} = A_{ij} Gamma(omega_{ji}, t) in the eigenbasis."""
    lam = np.empty_like(a_eig)
    for i in range(a_eig.shape[0]):
        for j in range(a_eig.shape[1]):
            w = bohr[j, i]
            g = (
                markov_spectral_density(w, bath)
                if t is None or np.isinf(t)
                else timed_spectral_density(w, t, bath)
            )
            lam[i, j] = a_eig[i, j] * g
    return lam


def _to_computational(sup_eig: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    w = np.kron(np.conj(vecs), vecs)
    return w @ sup_eig @ w.conj().T


def redfield_generator(model: SystemModel, t=np.inf) -> Superoperator:
    """Time-dependent Redfield generator; t=inf gives the Markov limit."""
    energies, vecs, a_eig, bohr = eigenbasis(model)
    lam = lambda_filtered(a_eig, model.bath, bohr, t)
    sup_eig = commutator_superop(np.diag(energies)) + _dissipator_from_lambda(a_eig, lam)
    mat = _to_computational(sup_eig, vecs)
    return Superoperator(mat, "RE", energies, vecs, model)


def redfield_kernel_generator(model: SystemModel) -> Superoperator:
    """Markov Redfield from the kernelized matrix-element form.

    Independent construction used to cross-check redfield_generator: builds
    G_{ni,mj} = A_ni A_mj^* [Gamma(w_in) + Gamma(w_jm)^*] and the explicit
    -i[H_S + H_L, .] term.
    """
    energies, vecs, a_eig, bohr = eigenbasis(model)
    gam = np.empty((4, 4), dtype=complex)
    for i in range(4):
        for j in range(4):
            gam[i, j] = markov_spectral_density(bohr[i, j], model.bath)

    g = np.empty((4, 4, 4, 4), dtype=complex)  # g[n, i, m, j]
    for n in range(4):
        for i in range(4):
            for m in range(4):
                for j in range(4):
                    g[n, i, m, j] = (
                        a_eig[n, i]
                        * np.conj(a_eig[m, j])
                        * (gam[i, n] + np.conj(gam[j, m]))
                    )

    lam = lambda_filtered(a_eig, model.bath, bohr, np.inf)
    h_l_eig = (a_eig @ lam - lam.conj().T @ a_eig) / 2.0j
    sup = commutator_superop(np.diag(energies) + h_l_eig)
    for n in range(4):
        for m in range(4):
            row = n + 4 * m
            for i in range(4):
                for j in range(4):
                    col = i + 4 * j
                    val = g[n, i, m, j]
                    if i == n:
                        val -= 0.5 * sum(g[k, m, k, j] for k in range(4))
                    if j == m:
                        val -= 0.5 * sum(g[k, i, k, n] for k in range(4))
                    sup[row, col] += val
    mat = _to_computational(sup, vecs)
    return Superoperator(mat, "RE-kernel", energies, vecs, model)


def game_generator(model: SystemModel) -> Superoperator:
    """GKSL generator with the geometric-mean jump operator M.

    M_{ij} = A_{ij} sqrt(2 J(omega_{ji})); the unitary part carries the same
    Lamb-shift as the Redfield equation.
    """
    energies, vecs, a_eig, bohr = eigenbasis(model)
    m_jump = np.empty_like(a_eig)
    for i in range(4):
        for j in range(4):
            m_jump[i, j] = a_eig[i, j] * np.sqrt(
                2.0 * spectral_density(bohr[j, i], model.bath)
            )
    lam = lambda_filtered(a_eig, model.bath, bohr, np.inf)
    h_l_eig = (a_eig @ lam - lam.conj().T @ a_eig) / 2.0j
    eye = np.eye(4)
    mdm = m_jump.conj().T @ m_jump
    sup_eig = (
        commutator_superop(np.diag(energies) + h_l_eig)
        + np.kron(np.conj(m_jump), m_jump)
        - 0.5 * (np.kron(eye, mdm) + np.kron(mdm.T, eye))
    )
    mat = _to_computational(sup_eig, vecs)
    m_comp = vecs @ m_jump @ vecs.conj().T
    return Superoperator(
        mat, "GAME", energies, vecs, model, extras={"jump": m_comp, "jump_eig": m_jump}
    )


def game_generator_no_lamb(model: SystemModel) -> Superoperator:
    """GAME with the Lamb-shift discarded (diagnostic; relaxes to the H_S ground state)."""
    energies, vecs, a_eig, bohr = eigenbasis(model)
    m_jump = np.empty_like(a_eig)
    for i in range(4):
        for j in range(4):
            m_jump[i, j] = a_eig[i, j] * np.sqrt(
                2.0 * spectral_density(bohr[j, i], model.bath)
            )
    eye = np.eye(4)
    mdm = m_jump.conj().T @ m_jump
    sup_eig = (
        commutator_superop(np.diag(energies))
        + np.kron(np.conj(m_jump), m_jump)
        - 0.5 * (np.kron(eye, mdm) + np.kron(mdm.T, eye))
    )
    mat = _to_computational(sup_eig, vecs)
    return Superoperator(mat, "GAME-noHL", energies, vecs, model)


def propagate(sup: Superoperator, rho0: np.ndarray, times) -> list:
    """rho(t) on a time grid by spectral decomposition of the generator."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    vals, vecs, cond = sup.spectral()
    v0 = vectorize(rho0)
    if cond < 1e8:
        coeff = np.linalg.solve(vecs, v0)
        states = []
        for t in times:
            vt = vecs @ (coeff * np.exp(vals * t))
            states.append(devectorize(vt))
        return states
    warnings.warn(
        f"near-defective generator (cond={cond:.2e}); "
        "switching to scaling-and-squaring exponentials"
    )
    return [devectorize(scipy.linalg.expm(sup.matrix * t) @ v0) for t in times]


def propagate_observable(sup: Superoperator, rho0, times, observable) -> np.ndarray:
    """<observable>(t) = Tr[obs rho(t)] along the propagated trajectory."""
    obs = np.asarray(observable, dtype=complex)
    return np.array(
        [np.real(np.trace(obs @ r)) for r in propagate(sup, rho0, times)]
    )


def propagate_redfield_td(model: SystemModel, rho0, times, rtol=1e-9) -> list:
    """Time-dependent Redfield propagation (finite-t coefficients), RK45."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    energies, vecs, a_eig, bohr = eigenbasis(model)
    w = np.kron(np.conj(vecs), vecs)
    wdag = w.conj().T
    comm = commutator_superop(np.diag(energies))

    def rhs(t, y):
        lam = lambda_filtered(a_eig, model.bath, bohr, t)
        sup = comm + _dissipator_from_lambda(a_eig, lam)
        return sup @ y

    y0 = wdag @ vectorize(rho0)
    sol = solve_ivp(
        rhs,
        (0.0, float(times.max())),
        y0,
        t_eval=times,
        method="RK45",
        rtol=rtol,
        atol=1e-12,
    )
    if not sol.success:
        raise RuntimeError(f"time-dependent Redfield integration failed: {sol.message}")
    return [devectorize(w @ sol.y[:, k]) for k in range(sol.y.shape[1])]


def asymptotic_state(sup: Superoperator):
    """Kernel of the generator: {'rho_inf', 'unique', 'kernel_dim', 'states'}.

    Kernel vectors are Hermitized and trace-normalized; tiny negative
    populations (kernel-extraction noise when a second eigenvalue sits just
    above the tolerance, as happens right at the FTES) are clipped to the
    physical cone, with the raw minimum eigenvalue reported alongside.
    """
    vals, vecs, _ = sup.spectral()
    tol = KERNEL_TOL_FACTOR * max(sup.norm(), 1.0)
    idx = np.where(np.abs(vals) < tol)[0]
    if idx.size == 0:
        raise NoStationaryStateError(
            f"no generator eigenvalue below {tol:.2e} in magnitude"
        )
    states = []
    min_eig_raw = np.inf
    for k in idx:
        rho = devectorize(vecs[:, k])
        rho = 0.5 * (rho + rho.conj().T)
        tr = np.trace(rho)
        if abs(tr) > 1e-12:
            rho = rho / tr
        w, u = np.linalg.eigh(rho)
        min_eig_raw = min(min_eig_raw, float(w.min()))
        if w.min() < 0 and abs(tr) > 1e-12:
            w = np.clip(w, 0.0, None)
            rho = (u * w) @ u.conj().T
            rho = rho / np.trace(rho)
        states.append(rho)
    return {
        "rho_inf": states[0],
        "unique": idx.size == 1,
        "kernel_dim": int(idx.size),
        "states": states,
        "min_eigenvalue_raw": min_eig_raw,
    }


def relaxation_rates(sup: Superoperator):
    """Recovery rate gamma_r and maximal rate gamma_max, in units of Delta.

    gamma_r is minus the real part of the non-kernel eigenvalue closest to
    the imaginary axis; it goes negative when the generator has a growing
    mode (Redfield/TCL4 in the unstable band).  Returns (None, None) when
    the dynamics is purely unitary at tolerance.
    """
    vals, _, _ = sup.spectral()
    tol = KERNEL_TOL_FACTOR * max(sup.norm(), 1.0)
    nonkernel = vals[np.abs(vals) >= tol]
    decaying = nonkernel[np.abs(nonkernel.real) >= tol]
    if decaying.size == 0:
        return {"gamma_r": None, "gamma_max": None}
    return {
        "gamma_r": float(-np.max(nonkernel.real)),
        "gamma_max": float(-np.min(nonkernel.real)),
    }


def choi_matrix(propagator: np.ndarray) -> np.ndarray:
    """Reshuffle a 16x16 propagator on vec_F into the Choi matrix.

    With column-stacked indices the propagator reshapes (Fortran order) to
    P[n, m, i, j]; the Choi matrix is Choi[4a+r, 4b+c] = P[r, c, a, b], so
    the identity map has Choi eigenvalues {4, 0, ...}.
    """
    p = propagator.reshape(4, 4, 4, 4, order="F")
    return np.transpose(p, (2, 0, 3, 1)).reshape(16, 16)


def cp_check(sup: Superoperator, t: float) -> float:
    """Minimum eigenvalue of the Choi matrix of exp(R t)."""
    prop = scipy.linalg.expm(sup.matrix * float(t))
    choi = choi_matrix(prop)
    choi = 0.5 * (choi + choi.conj().T)
    return float(np.min(np.linalg.eigvalsh(choi)))


def kossakowski_min_eigenvalue(sup: Superoperator) -> float:
    """Min eigenvalue of the rank-one GAME Kossakowski matrix M_ni M_mj^*."""
    m = sup.extras["jump_eig"]
    k = np.outer(vectorize(m), np.conj(vectorize(m)))
    return float(np.min(np.linalg.eigvalsh(0.5 * (k + k.conj().T))))


def trace_defect(sup: Superoperator) -> float:
    """Max |column sum| of the generator acting on vec basis = trace leakage."""
    ident = vectorize(np.eye(4))
    return float(np.max(np.abs(ident @ sup.matrix)))

"""Two-qubit system: Hamiltonian, bath coupling, counterterm, Lamb-shift.

Computational basis ordering is |q1 q2> with index 2*q1 + q2 and q = 0 the
sigma_z = +1 (excited) level, so the basis is [|00>, |01>, |10>, |11>] with
bare energies [+Delta, ~0, ~0, -Delta].  The singlet is
|S> = (|10> - |01>)/sqrt(2).  All frequencies are in units of the drive
Delta unless a model says otherwise.
"""

from dataclasses import dataclass, replace
from math import gamma as gamma_fn

import numpy as np

from .bath import BathSpec, markov_spectral_density, principle_density

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
ID2 = np.eye(2, dtype=complex)


def _op1(op):
    return np.kron(op, ID2)


def _op2(op):
    return np.kron(ID2, op)


def _ket(index):
    v = np.zeros(4, dtype=complex)
    v[index] = 1.0
    return v


SINGLET = (_ket(2) - _ket(1)) / np.sqrt(2.0)
TRIPLET0 = (_ket(2) + _ket(1)) / np.sqrt(2.0)

# preferred directions when splitting degenerate eigenspaces
_DEGENERACY_REFS = (SINGLET, TRIPLET0, _ket(0), _ket(3))


@dataclass(frozen=True)
class SystemModel:
    """Drive Delta, detunings (xi, eta, zeta), counterterm flag and bath."""

    bath: BathSpec
    delta: float = 1.0
    xi: float = 0.0
    eta: float = 0.0
    zeta: float = 0.0
    with_counterterm: bool = True

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be > 0")

    def with_(self, **kwargs) -> "SystemModel":
        """Model with some fields replaced (bath fields via alpha=, eta=, ...)."""
        bath_fields = {k: kwargs.pop(k) for k in ("alpha", "omega_c", "s") if k in kwargs}
        model = replace(self, **kwargs) if kwargs else self
        if bath_fields:
            model = replace(model, bath=replace(model.bath, **bath_fields))
        return model


def build_coupling_operator(model: SystemModel) -> np.ndarray:
    """A = [(1+eta) sx1 + sx2]/2 - (zeta/4)(sy1 sz2 - sz1 sy2)."""
    a = 0.5 * ((1.0 + model.eta) * _op1(SIGMA_X) + _op2(SIGMA_X))
    a -= 0.25 * model.zeta * (
        _op1(SIGMA_Y) @ _op2(SIGMA_Z) - _op1(SIGMA_Z) @ _op2(SIGMA_Y)
    )
    return a


def counterterm(model: SystemModel) -> np.ndarray:
    """H_c = alpha w_c Gamma(s) A^2 / 2 (regardless of the model flag)."""
    a = build_coupling_operator(model)
    pref = 0.5 * model.bath.alpha * model.bath.omega_c * gamma_fn(model.bath.s)
    return pref * (a @ a)


def build_system_hamiltonian(model: SystemModel) -> np.ndarray:
    """H_S = (Delta/2)[sz1 + (1-xi) sz2], plus the counterterm if enabled."""
    h = 0.5 * model.delta * (_op1(SIGMA_Z) + (1.0 - model.xi) * _op2(SIGMA_Z))
    if model.with_counterterm:
        h = h + counterterm(model)
    return h


def canonical_eigh(h: np.ndarray, degeneracy_tol: float = 1e-9):
    """Eigendecomposition with deterministic conventions.

    Degenerate subspaces are re-spanned along the singlet/triplet/edge
    reference directions (in that order of preference); every eigenvector
    then has its largest-magnitude component made real positive.
    """
    energies, vecs = np.linalg.eigh(h)
    scale = max(1.0, float(np.max(np.abs(energies))))
    # group indices of (near-)degenerate eigenvalues
    groups = []
    start = 0
    for i in range(1, len(energies) + 1):
        if i == len(energies) or energies[i] - energies[i - 1] > degeneracy_tol * scale:
            groups.append(list(range(start, i)))
            start = i
    for grp in groups:
        if len(grp) < 2:
            continue
        basis = vecs[:, grp]
        proj = basis @ basis.conj().T
        new_cols = []
        for ref in _DEGENERACY_REFS:
            v = proj @ ref
            for c in new_cols:
                v = v - c * (c.conj() @ v)
            nrm = np.linalg.norm(v)
            if nrm > 1e-8:
                new_cols.append(v / nrm)
            if len(new_cols) == len(grp):
                break
        if len(new_cols) == len(grp):
            vecs[:, grp] = np.column_stack(new_cols)
    for k in range(vecs.shape[1]):
        idx = int(np.argmax(np.abs(vecs[:, k])))
        phase = vecs[idx, k]
        if abs(phase) > 0:
            vecs[:, k] *= np.conj(phase) / abs(phase)
    return energies, vecs


def eigenbasis(model: SystemModel):
    """(energies, V, A_eig, bohr): H_S eigendata with A in that basis.

    bohr[i, j] = E_i - E_j.
    """
    energies, vecs = canonical_eigh(build_system_hamiltonian(model))
    a_eig = vecs.conj().T @ build_coupling_operator(model) @ vecs
    bohr = energies[:, None] - energies[None, :]
    return energies, vecs, a_eig, bohr


def lambda_markov_eig(model: SystemModel) -> np.ndarray:
    """Lambda(inf) = A o Gamma^T in the H_S eigenbasis."""
    _, _, a_eig, bohr = eigenbasis(model)
    gam = np.empty((4, 4), dtype=complex)
    for i in range(4):
        for j in range(4):
            gam[i, j] = markov_spectral_density(bohr[j, i], model.bath)
    return a_eig * gam


def lamb_shift(model: SystemModel) -> np.ndarray:
    """H_L = (A Lambda - Lambda^dag A) / 2i in the computational basis."""
    if model.bath.alpha == 0.0:
        return np.zeros((4, 4), dtype=complex)
    _, vecs, a_eig, _ = eigenbasis(model)
    lam = lambda_markov_eig(model)
    hl_eig = (a_eig @ lam - lam.conj().T @ a_eig) / 2.0j
    hl = vecs @ hl_eig @ vecs.conj().T
    return 0.5 * (hl + hl.conj().T)


_VARIANTS = ("bare", "lamb_only", "full")


def renormalized_hamiltonian(model: SystemModel, variant: str = "full") -> np.ndarray:
    """One of H_S, H_S - H_c + H_L, H_S + H_L (variant bare/lamb_only/full)."""
    if variant not in _VARIANTS:
        raise ValueError(f"variant must be one of {_VARIANTS}")
    h = build_system_hamiltonian(model)
    if variant == "bare":
        return h
    if variant == "lamb_only" and model.with_counterterm:
        h = h - counterterm(model)
    return h + lamb_shift(model)


def renormalized_spectrum(model: SystemModel, variant: str = "full"):
    """Eigendecomposition of the renormalized Hamiltonian.

    Returns dict with ascending 'energies', unitary 'vectors' (phase-fixed),
    'singlet_index' of the eigenvector with maximal singlet overlap and its
    'singlet_fidelity' |<S|v>|^2.
    """
    h = renormalized_hamiltonian(model, variant)
    energies, vecs = canonical_eigh(h)
    overlaps = np.abs(SINGLET.conj() @ vecs) ** 2
    k = int(np.argmax(overlaps))
    return {
        "energies": energies,
        "vectors": vecs,
        "singlet_index": k,
        "singlet_fidelity": float(overlaps[k]),
    }


def zero_detuning_splitting(bath: BathSpec, delta: float = 1.0) -> float:
    """Singlet-minus-triplet splitting of H_S + H_L at xi = eta = zeta = 0.

    Closed form for the counterterm-included model: the triplet level sits
    at q*Delta + [S(E-)E+ - S(E+)E-]/(Delta sqrt(q^2+4)) while the singlet
    stays at zero (it is annihilated by A), so the singlet-triplet splitting
    is minus that scalar: -0.067 Delta (s=1) and +0.0108 Delta (s=3) at
    alpha=0.2, w_c=10 Delta.
    """
    q = gamma_fn(bath.s) * bath.alpha * bath.omega_c / (2.0 * delta)
    root = np.sqrt(q * q + 4.0)
    e_plus = 0.5 * delta * (q + root)
    e_minus = 0.5 * delta * (q - root)
    s_plus = principle_density(e_plus, bath)
    s_minus = principle_density(e_minus, bath)
    triplet = q * delta + (s_minus * e_plus - s_plus * e_minus) / (delta * root)
    return -float(triplet)


def singlet_fidelity(rho: np.ndarray) -> float:
    """<S| rho |S> (real for Hermitian rho)."""
    return float(np.real(SINGLET.conj() @ rho @ SINGLET))


def purity(rho: np.ndarray) -> float:
    """Tr rho^2."""
    return float(np.real(np.trace(rho @ rho)))

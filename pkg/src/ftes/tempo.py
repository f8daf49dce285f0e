"""Tensor-network path-integral propagation (TEMPO).

The augmented density tensor over the last k_max time slices is stored as
an MPS in the eigenbasis of the coupling operator A (diagonal influence
phases).  Each step grows the chain by one slice through the full-step
system propagator, applies the pairwise influence gates
exp[-(a_p - a_q)(eta_k a_p' - eta_k^* a_q')] as a diagonal MPO whose bond
carries the (a_p - a_q) class of the new slice, and compresses with a
zip-up sweep followed by a right-to-left SVD truncation at eps_svd
(relative to the largest singular value per bond).  Histories beyond k_max
slices are summed out (hard memory cutoff).  Symmetric Trotter splitting:
half system propagators at birth and readout.

The step loop is a single function, numba-compiled by default; FTES_NUMBA=0
runs the identical code as plain numpy.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.integrate import quad

from .accel import USE_NUMBA, register_jitable
from .bath import BathSpec, bath_correlation
from .system import (
    SystemModel,
    build_coupling_operator,
    build_system_hamiltonian,
    canonical_eigh,
)

CHECKPOINT_FORMAT_VERSION = 1


class BondBudgetError(RuntimeError):
    """Hard bond-dimension cap forced a lossy truncation.

    .partial holds the (times, values, info) computed up to the abort.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class TempoConfig:
    """Trotter step, memory window, SVD cutoff and propagation horizon."""

    t_max: float
    tau_s: float = 0.02
    k_max: int = None  # default per bath: 150 (Ohmic), 75 (super-Ohmic)
    eps_svd: float = 1e-6
    chi_max: int = 96

    def __post_init__(self):
        if self.tau_s <= 0 or self.t_max <= 0:
            raise ValueError("tau_s and t_max must be positive")
        if self.k_max is not None and self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if not 0 <= self.eps_svd < 1:
            raise ValueError("eps_svd must be in [0, 1)")

    def resolved_k_max(self, bath: BathSpec) -> int:
        if self.k_max is not None:
            return self.k_max
        return 150 if bath.s == 1 else 75


def influence_coefficients(bath: BathSpec, tau_s: float, k_max: int) -> np.ndarray:
    """Makri window coefficients eta_k for separations k = 0 .. k_max.

    eta_0 integrates C over the ordered pairs inside one window; eta_k
    (k >= 1) integrates C over a window pair k steps apart.  Both reduce to
    one-dimensional weighted integrals of C and are evaluated adaptively
    (no cancellation, unlike second differences of the twice-integrated
    correlation function, which serve as the cross-check in the tests).
    """
    out = np.empty(k_max + 1, dtype=complex)

    def cquad(f, lo, hi):
        re = quad(lambda u: f(u).real, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=300)[0]
        im = quad(lambda u: f(u).imag, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=300)[0]
        return re + 1j * im

    out[0] = cquad(lambda u: (tau_s - u) * bath_correlation(u, bath), 0.0, tau_s)
    for k in range(1, k_max + 1):
        out[k] = cquad(
            lambda w: (tau_s - abs(w)) * bath_correlation(k * tau_s + w, bath),
            -tau_s,
            tau_s,
        )
    return out


# ---------------------------------------------------------------------------
# standalone MPS helpers (contract/truncate surface used by tests)


def svd_truncate(mps: list, eps_svd: float):
    """Right-to-left SVD sweep keeping singular values >= eps_svd * max.

    mps is a list of [chi_l, d, chi_r] tensors; returns (new_mps, discarded)
    with discarded the accumulated relative discarded weight.  The
    orthogonality center ends on site 0.
    """
    mps = [t.copy() for t in mps]
    discarded = 0.0
    for s in range(len(mps) - 1, 0, -1):
        chi_l, d, chi_r = mps[s].shape
        u, sv, vh = np.linalg.svd(mps[s].reshape(chi_l, d * chi_r), full_matrices=False)
        keep = max(int(np.sum(sv >= eps_svd * sv[0])), 1) if sv.size else 1
        discarded += float(np.sum(sv[keep:] ** 2)) / max(float(np.sum(sv**2)), 1e-300)
        mps[s] = vh[:keep].reshape(keep, d, chi_r)
        mps[s - 1] = np.tensordot(mps[s - 1], u[:, :keep] * sv[:keep], axes=(2, 0))
    return mps, discarded


def contract_mps(mps: list) -> np.ndarray:
    """Sum all but the first physical leg (trace over stored histories)."""
    right = np.ones(mps[-1].shape[2], dtype=complex)
    for t in reversed(mps[1:]):
        right = t.sum(axis=1) @ right
    return mps[0][0] @ right


# ---------------------------------------------------------------------------
# step core: runs `steps` growth steps in place


def _factor_left_impl(work, eps, cap):
    """work ~= U @ C with orthonormal U columns, truncated at eps (relative).

    Uses the eigendecomposition of the smaller Gram matrix instead of an
    SVD; singular values only need to be resolved down to eps ~ 1e-6, well
    above the sqrt(machine-eps) floor of the squared spectrum.  Returns
    (U, C, lost_fraction, hit_cap).
    """
    rows, cols = work.shape
    by_cols = cols <= rows
    if by_cols:
        g = work.conj().T @ work
    else:
        g = work @ work.conj().T
    g = 0.5 * (g + g.conj().T)
    evals, evecs = np.linalg.eigh(g)  # ascending
    n = evals.shape[0]
    emax = evals[n - 1] if evals[n - 1] > 0 else 0.0
    total = 0.0
    for i in range(n):
        if evals[i] > 0:
            total += evals[i]
    thr = eps * eps * emax
    floor = 1e-28 * emax
    cut = thr if thr > floor else floor
    keep = 0
    for i in range(n - 1, -1, -1):
        if evals[i] >= cut and keep < cap:
            keep += 1
        else:
            break
    if keep == 0:
        keep = 1
    hit_cap = False
    if keep == cap and keep < n:
        nxt = evals[n - 1 - keep]
        if nxt >= 100.0 * eps * eps * emax:
            hit_cap = True
    lost = 0.0
    for i in range(n - keep):
        if evals[i] > 0:
            lost += evals[i]
    lost = lost / (total + 1e-300)
    sig = np.empty(keep)
    for k in range(keep):
        ev = evals[n - 1 - k]
        sig[k] = np.sqrt(ev) if ev > 0 else 1e-150
    if by_cols:
        v = np.empty((cols, keep), dtype=np.complex128)
        for k in range(keep):
            v[:, k] = evecs[:, n - 1 - k]
        u = work @ v
        for k in range(keep):
            u[:, k] = u[:, k] / sig[k]
        c = np.empty((keep, cols), dtype=np.complex128)
        for k in range(keep):
            c[k] = np.conj(v[:, k]) * sig[k]
    else:
        u = np.empty((rows, keep), dtype=np.complex128)
        for k in range(keep):
            u[:, k] = evecs[:, n - 1 - k]
        c = u.conj().T @ work
    return u, c, lost, hit_cap


if USE_NUMBA:
    import numba as _numba

    _factor_left = _numba.njit(cache=True)(_factor_left_impl)
else:
    _factor_left = _factor_left_impl


def _stage_grow(tens, bd, lsites, birth, class_of, nclass, eps_zip, chi_max):
    """Memory cutoff, shift, front expansion/orthogonalization, zip seed.

    Returns (lsites, r1, carry, lost) with bd[1] set to the seed rank.
    """
    kmax = tens.shape[0]
    if lsites == kmax:
        tail = np.zeros(bd[lsites - 1], dtype=np.complex128)
        for j in range(16):
            tail += tens[lsites - 1, : bd[lsites - 1], j, 0]
        prev = np.ascontiguousarray(
            tens[lsites - 2, : bd[lsites - 2], :, : bd[lsites - 1]]
        )
        merged = prev.reshape(bd[lsites - 2] * 16, bd[lsites - 1]) @ tail
        tens[lsites - 2, : bd[lsites - 2], :, 0] = merged.reshape(bd[lsites - 2], 16)
        bd[lsites - 1] = 1
        lsites -= 1

    for s in range(lsites - 1, -1, -1):
        tens[s + 1, : bd[s], :, : bd[s + 1]] = tens[s, : bd[s], :, : bd[s + 1]]
    for s in range(lsites, 0, -1):
        bd[s + 1] = bd[s]
    lsites += 1

    old_front = np.ascontiguousarray(tens[1, 0, :, : bd[2]])
    c2 = bd[2]
    expanded = np.zeros((16, 16 * c2), dtype=np.complex128)
    for j in range(16):
        expanded[j, j * c2 : (j + 1) * c2] = old_front[j]
    # right-orthogonalize the expanded front so zip truncations see an
    # isometric environment; the left factor folds into the birth matrix
    uo, co, lost0, hit0 = _factor_left(np.conj(expanded.T).copy(), 1e-14, chi_max)
    r1 = uo.shape[1]
    # materialize before reshaping: fusing conj-of-transpose into a strided
    # setitem miscompiles under numba (wrong element order)
    tens[1, :r1, :, :c2] = np.ascontiguousarray(np.conj(uo.T)).reshape(r1, 16, c2)
    birth_eff = birth @ np.conj(co.T)  # [16, r1]
    bd[0] = 1
    bd[1] = r1

    m0 = np.zeros((16, nclass * r1), dtype=np.complex128)
    for j in range(16):
        beta = class_of[j]
        for r in range(r1):
            m0[j, beta * r1 + r] = birth_eff[j, r]
    u, carry, lost, hit = _factor_left(m0, eps_zip, chi_max)
    keep = u.shape[1]
    tens[0, 0, :, :keep] = u
    bd[1] = keep
    return lsites, r1, carry, lost


def _stage_zip(tens, bd, lsites, r1, carry, wmat, gate_sites, eps_zip, chi_max):
    """Apply the influence MPO left to right with zip-up truncation."""
    nclass = wmat.shape[1]
    ob = bd.copy()
    ob[1] = r1
    discarded = 0.0
    status = 0
    stop_site = min(lsites - 1, max(gate_sites, 1))
    for s in range(1, stop_site + 1):
        chi_here = ob[s]
        chi_r = ob[s + 1]
        kprev = bd[s]
        site = np.ascontiguousarray(tens[s, :chi_here, :, :chi_r]).reshape(
            chi_here, 16 * chi_r
        )
        last = s == stop_site
        ncol = chi_r if last else nclass * chi_r
        work = np.zeros((kprev, 16, ncol), dtype=np.complex128)
        for beta in range(nclass):
            cb = np.ascontiguousarray(carry[:, beta * chi_here : (beta + 1) * chi_here])
            mixed = (cb @ site).reshape(kprev, 16, chi_r)
            if last:
                for j in range(16):
                    work[:, j, :] += wmat[s, beta, j] * mixed[:, j, :]
            else:
                for j in range(16):
                    work[:, j, beta * chi_r : (beta + 1) * chi_r] = (
                        wmat[s, beta, j] * mixed[:, j, :]
                    )
        if last:
            tens[s, :kprev, :, :chi_r] = work
            bd[s + 1] = chi_r
        else:
            u, carry, lost, hit = _factor_left(
                work.reshape(kprev * 16, ncol), eps_zip, chi_max
            )
            discarded += lost
            if hit:
                status = 1
            keep = u.shape[1]
            tens[s, :kprev, :, :keep] = np.ascontiguousarray(u).reshape(
                kprev, 16, keep
            )
            bd[s + 1] = keep
    return stop_site, discarded, status


def _stage_sweep(tens, bd, stop_site, eps, chi_max):
    """Right-to-left truncation sweep; restores right-canonical form."""
    discarded = 0.0
    status = 0
    for s in range(stop_site, 0, -1):
        chi_l = bd[s]
        chi_r = bd[s + 1]
        mat = np.ascontiguousarray(tens[s, :chi_l, :, :chi_r]).reshape(
            chi_l, 16 * chi_r
        )
        # factor mat^dag = U C so mat = C^dag U^dag with orthonormal rows
        # U^dag; the left part C^dag is absorbed into the neighbor
        u, cfac, lost, hit = _factor_left(np.conj(mat.T).copy(), eps, chi_max)
        discarded += lost
        if hit:
            status = 1
        keep = u.shape[1]
        tens[s, :keep, :, :chi_r] = np.ascontiguousarray(np.conj(u.T)).reshape(
            keep, 16, chi_r
        )
        left = np.conj(cfac.T)  # [chi_l, keep]
        prev_l = bd[s - 1]
        absorbed = (
            np.ascontiguousarray(tens[s - 1, :prev_l, :, :chi_l]).reshape(
                prev_l * 16, chi_l
            )
            @ left
        )
        tens[s - 1, :prev_l, :, :keep] = absorbed.reshape(prev_l, 16, keep)
        bd[s] = keep
    return discarded, status


def _stage_readout(tens, bd, lsites, out_row):
    """Sum all history legs; write the front vector into out_row."""
    right = np.ones(1, dtype=np.complex128)
    for s in range(lsites - 1, 0, -1):
        summed = np.zeros((bd[s], bd[s + 1]), dtype=np.complex128)
        for j in range(16):
            summed += tens[s, : bd[s], j, : bd[s + 1]]
        right = summed @ right
    for j in range(16):
        acc = 0.0 + 0.0j
        for col in range(bd[1]):
            acc += tens[0, 0, j, col] * right[col]
        out_row[j] = acc


if USE_NUMBA:
    _stage_grow = _numba.njit(cache=True)(_stage_grow)
    _stage_zip = _numba.njit(cache=True)(_stage_zip)
    _stage_sweep = _numba.njit(cache=True)(_stage_sweep)
    _stage_readout = _numba.njit(cache=True)(_stage_readout)


def _propagate_core(
    tens,
    bd,
    lsites,
    steps,
    birth,
    wmat,
    class_of,
    gate_sites,
    eps,
    eps_zip,
    chi_max,
    out_vecs,
    out_bonds,
):
    """Run growth steps; stages are individually jitted, the loop is Python."""
    nclass = wmat.shape[1]
    discarded = 0.0
    status = 0
    for step in range(steps):
        lsites, r1, carry, lost = _stage_grow(
            tens, bd, lsites, birth, class_of, nclass, eps_zip, chi_max
        )
        discarded += lost
        stop_site, lost, st1 = _stage_zip(
            tens, bd, lsites, r1, carry, wmat, gate_sites, eps_zip, chi_max
        )
        discarded += lost
        lost, st2 = _stage_sweep(tens, bd, stop_site, eps, chi_max)
        discarded += lost
        status = max(status, st1, st2)
        _stage_readout(tens, bd, lsites, out_vecs[step])
        out_bonds[step] = int(bd[: lsites + 1].max())
        if status:
            return lsites, discarded, status
    return lsites, discarded, status




# ---------------------------------------------------------------------------
# public API


def _influence_tables(avals, bath, tau_s, k_max, eps_svd):
    eta = influence_coefficients(bath, tau_s, k_max)
    j = np.arange(16)
    ap = avals[j % 4]  # vec_F index j = p + 4q  <->  |p><q|
    aq = avals[j // 4]
    sigma = ap - aq
    classes, class_of = np.unique(np.round(sigma, 12), return_inverse=True)
    b0 = np.exp(-sigma * (eta[0] * ap - np.conj(eta[0]) * aq))
    wmat = np.ones((max(k_max, 2), classes.size, 16), dtype=complex)
    gate_sites = 1
    tol = 0.1 * max(eps_svd, 1e-14)
    for k in range(1, k_max):
        phi = eta[k] * ap - np.conj(eta[k]) * aq
        wmat[k] = np.exp(-np.outer(classes, phi))
        if np.max(np.abs(wmat[k] - 1.0)) > tol:
            gate_sites = k
    return b0, wmat, np.asarray(class_of, dtype=np.int64), eta, gate_sites


def _readout(w_half, u_a, vec):
    rho_a = (w_half @ vec).reshape(4, 4, order="F")
    return u_a @ rho_a @ u_a.conj().T


def tempo_propagate(
    model: SystemModel,
    rho0: np.ndarray,
    cfg: TempoConfig,
    observable: np.ndarray = None,
    checkpoint=None,
    checkpoint_every: int = 1000,
    return_states: bool = False,
):
    """Propagate rho0 with TEMPO; returns (times, <observable>(t), info).

    info records the max bond dimension per step, the accumulated relative
    discarded weight, the trace and the minimum eigenvalue of rho at every
    step (positivity is reported, never clamped).  A checkpoint path makes
    long runs resumable (npz, format version 1: site tensors, bonds, chain
    length, step counter, readout buffer).
    """
    k_max = cfg.resolved_k_max(model.bath)
    n_steps = int(round(cfg.t_max / cfg.tau_s))
    if n_steps < 1:
        raise ValueError("t_max shorter than one Trotter step")

    a = build_coupling_operator(model)
    avals, u_a = canonical_eigh(a)
    h_a = u_a.conj().T @ build_system_hamiltonian(model) @ u_a
    b0, wmat, class_of, _, gate_sites = _influence_tables(
        avals, model.bath, cfg.tau_s, k_max, cfg.eps_svd
    )

    half = scipy.linalg.expm(-0.5j * cfg.tau_s * h_a)
    w_half = np.kron(np.conj(half), half)
    birth = b0[:, None] * (w_half @ w_half)

    chi = int(cfg.chi_max)
    tens = np.zeros((max(k_max, 2), chi, 16, chi), dtype=np.complex128)
    bd = np.zeros(max(k_max, 2) + 1, dtype=np.int64)
    out_vecs = np.zeros((n_steps, 16), dtype=np.complex128)
    out_bonds = np.ones(n_steps, dtype=np.int64)
    rho0_a = u_a.conj().T @ np.asarray(rho0, dtype=complex) @ u_a
    tens[0, 0, :, 0] = b0 * (w_half @ rho0_a.reshape(-1, order="F"))
    bd[0] = 1
    bd[1] = 1
    lsites = 1
    out_vecs[0] = tens[0, 0, :, 0]
    done = 1  # states computed so far (index of next growth target)
    discarded = 0.0

    ckpt = Path(checkpoint) if checkpoint is not None else None
    if ckpt is not None and ckpt.exists():
        data = np.load(ckpt, allow_pickle=False)
        if int(data["version"]) != CHECKPOINT_FORMAT_VERSION:
            raise ValueError("checkpoint format version mismatch")
        if data["out_vecs"].shape[0] == n_steps and int(data["k_max"]) == k_max:
            tens = data["tens"]
            bd = data["bd"]
            lsites = int(data["lsites"])
            done = int(data["done"])
            out_vecs = data["out_vecs"]
            out_bonds = data["out_bonds"]
            discarded = float(data["discarded"])

    status = 0
    while done < n_steps:
        chunk = n_steps - done
        if ckpt is not None:
            chunk = min(chunk, checkpoint_every)
        lsites, dw, status = _propagate_core(
            tens,
            bd,
            lsites,
            chunk,
            birth,
            wmat,
            class_of,
            gate_sites,
            cfg.eps_svd,
            0.3 * cfg.eps_svd,
            chi,
            out_vecs[done : done + chunk],
            out_bonds[done : done + chunk],
        )
        discarded += dw
        done += chunk
        if ckpt is not None:
            np.savez_compressed(
                ckpt,
                version=CHECKPOINT_FORMAT_VERSION,
                tens=tens,
                bd=bd,
                lsites=lsites,
                done=done,
                out_vecs=out_vecs,
                out_bonds=out_bonds,
                discarded=discarded,
                k_max=k_max,
            )
        if status == 1:
            break

    n_ok = done if status == 0 else done
    times = np.concatenate([[0.0], np.arange(1, n_ok + 1) * cfg.tau_s])
    obs = np.eye(4, dtype=complex) if observable is None else np.asarray(observable, complex)

    rho_start = np.asarray(rho0, dtype=complex)
    values = np.empty(n_ok + 1)
    traces = np.empty(n_ok + 1)
    min_eigs = np.empty(n_ok + 1)
    states = [rho_start] if return_states else None
    values[0] = float(np.real(np.trace(obs @ rho_start)))
    traces[0] = float(np.real(np.trace(rho_start)))
    min_eigs[0] = float(np.min(np.linalg.eigvalsh(rho_start)))
    for k in range(n_ok):
        rho = _readout(w_half, u_a, out_vecs[k])
        rho_h = 0.5 * (rho + rho.conj().T)
        values[k + 1] = float(np.real(np.trace(obs @ rho)))
        traces[k + 1] = float(np.real(np.trace(rho)))
        min_eigs[k + 1] = float(np.min(np.linalg.eigvalsh(rho_h)))
        if return_states:
            states.append(rho)

    info = {
        "max_bond": int(out_bonds[:n_ok].max(initial=1)),
        "bond_history": out_bonds[:n_ok].copy(),
        "discarded_weight": discarded,
        "trace": traces,
        "min_eigenvalues": min_eigs,
        "states": states,
        "k_max": k_max,
        "n_steps": n_ok,
    }
    if status == 1:
        raise BondBudgetError(
            f"bond dimension cap chi_max={chi} forced a lossy truncation "
            f"at step {done}",
            partial=(times, values, info),
        )
    return times, values, info

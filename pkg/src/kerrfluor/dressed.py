"""Dressed states of the driven resonator in the frame rotating at the drive.

H = (omega0 - omega_d) a^dag a + (K/2) a^dag a^dag a a + sqrt(kappa_ex) (F* a + F a^dag)

is diagonalized on a truncated Fock space.  Moments from the hierarchy are
mapped back to a Fock-basis density matrix through

    rho_{mn} = sum_k (-1)^k / (k! sqrt(m! n!)) <a^dag^{n+k} a^{m+k}>,

then rotated into the dressed basis to read off populations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linear_sum_assignment
from scipy.special import gammaln

from .model import DriveField, SystemParams
from .moments import MomentTable

EDGE_BUFFER = 5
RELIABILITY_RATIO = 0.1


def annihilation(n_fock: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n_fock)), 1).astype(complex)


def rotating_hamiltonian(params: SystemParams, drive: DriveField, n_fock: int) -> np.ndarray:
    a = annihilation(n_fock)
    num = np.arange(n_fock, dtype=float)
    diag = (params.omega0 - drive.omega_d) * num + params.kerr / 2.0 * num * (num - 1.0)
    g = math.sqrt(params.kappa_ex)
    f = drive.amplitude_f
    return np.diag(diag).astype(complex) + g * (np.conj(f) * a + f * a.conj().T)


@dataclass(frozen=True)
class DressedBasis:
    """Eigenpairs of the rotating-frame Hamiltonian.

    Column i of ``unitary`` is the dressed state |i~> in the Fock basis and
    ``energies[i]`` its energy (rad/s).  ``labels[i]`` is the position of
    that state in the raw ascending-energy eigensolver output.
    """

    n_fock: int
    energies: np.ndarray
    unitary: np.ndarray
    labels: np.ndarray

    @property
    def reportable(self) -> int:
        """Number of states far enough from the truncation edge to report."""
        return self.n_fock - EDGE_BUFFER

    def matrix_elements(self) -> np.ndarray:
        """|<j~|a|i~>|^2 indexed [j, i]."""
        u = self.unitary
        return np.abs(u.conj().T @ annihilation(self.n_fock) @ u) ** 2

    def reordered(self, order) -> "DressedBasis":
        order = np.asarray(order)
        return DressedBasis(self.n_fock, self.energies[order], self.unitary[:, order],
                            self.labels[order])


def dressed_basis(params: SystemParams, drive: DriveField, n_fock: int = 20,
                  previous: DressedBasis | None = None) -> DressedBasis:
    """Diagonalize the rotating-frame Hamiltonian.

    Without a drive each state takes the label of the Fock state it
    overlaps most.  Otherwise, without ``previous``, states are ordered by
    sign(K) * E so that |0~> connects to the vacuum and higher labels climb
    the Kerr ladder.  With ``previous`` (the neighbouring point of a sweep),
    labels follow maximal eigenvector overlap instead.
    """
    if n_fock < 4:
        raise ValueError("n_fock must be at least 4")
    h = rotating_hamiltonian(params, drive, n_fock)
    e, u = sla.eigh(h)
    # deterministic eigenvector phase: largest Fock component real positive
    lead = u[np.argmax(np.abs(u), axis=0), np.arange(n_fock)]
    u = u * (np.abs(lead) / lead)[None, :]
    raw = np.arange(n_fock)
    if drive.amplitude_f == 0:
        _, order = linear_sum_assignment(-np.abs(u) ** 2)
    elif previous is not None:
        if previous.n_fock != n_fock:
            raise ValueError("previous basis has a different Fock truncation")
        overlap = np.abs(previous.unitary.conj().T @ u) ** 2
        _, order = linear_sum_assignment(-overlap)
    else:
        sign = -1.0 if params.kerr < 0 else 1.0
        order = np.argsort(sign * e, kind="stable")
    return DressedBasis(n_fock, e[order], u[:, order], raw[order])


def track_sweep(params: SystemParams, drives: list[DriveField], n_fock: int = 20) -> list[DressedBasis]:
    """Dressed bases along a drive sweep with labels carried by continuity."""
    out: list[DressedBasis] = []
    for d in drives:
        out.append(dressed_basis(params, d, n_fock, out[-1] if out else None))
    return out


@dataclass(frozen=True)
class Transition:
    i: int
    j: int
    frequency: float        # E_i - E_j (rad/s), offset from omega_d
    matrix_element: float   # |<j~|a|i~>|^2


def transition_table(basis: DressedBasis, i_max: int) -> list[Transition]:
    """All transitions i~ -> j~ with i, j <= i_max, including i == j."""
    if i_max < 0 or i_max >= basis.reportable:
        raise ValueError(f"i_max must be below {basis.reportable} for n_fock={basis.n_fock}")
    me = basis.matrix_elements()
    e = basis.energies
    return [Transition(i, j, float(e[i] - e[j]), float(me[j, i]))
            for i in range(i_max + 1) for j in range(i_max + 1)]


def transition_frequencies(basis: DressedBasis, i_max: int | None = None) -> np.ndarray:
    """Distinct-pair frequencies E_i - E_j (rad/s) over the reportable states."""
    top = basis.reportable - 1 if i_max is None else i_max
    e = basis.energies[:top + 1]
    return (e[:, None] - e[None, :]).reshape(-1)


@dataclass(frozen=True)
class DressedDensityMatrix:
    rho_tilde: np.ndarray

    @property
    def populations(self) -> np.ndarray:
        return self.rho_tilde.diagonal().real.copy()

    @property
    def trace(self) -> float:
        return float(self.rho_tilde.trace().real)

    @property
    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.rho_tilde - self.rho_tilde.conj().T)))


def fock_density_from_moments(moments: MomentTable, n_fock: int) -> np.ndarray:
    """Fock-basis density matrix (n_fock x n_fock) from normally ordered moments."""
    if n_fock - 1 > moments.n_max:
        raise ValueError(f"n_fock={n_fock} needs moments up to order {n_fock - 1}, "
                         f"table has n_max={moments.n_max}")
    n_max = moments.n_max
    alpha = moments.values
    lf = gammaln(np.arange(n_max + 2) + 1.0)
    m = np.arange(n_fock)
    rho = np.zeros((n_fock, n_fock), complex)
    for k in range(n_max + 1):
        top = n_max - k  # largest m, n with m + k <= n_max
        if top < 0:
            break
        mm = m[m <= top]
        if mm.size == 0:
            break
        w = np.exp(-lf[k] - 0.5 * (lf[mm][:, None] + lf[mm][None, :]))
        sub = alpha[np.ix_(mm + k, mm + k)].T  # rho_{mn} uses alpha_{n+k, m+k}
        rho[np.ix_(mm, mm)] += (-1) ** k * w * sub
    return rho


def dressed_density_matrix(moments: MomentTable, basis: DressedBasis) -> DressedDensityMatrix:
    """rho~ = U^dag rho U with rho reconstructed from the moment table.

    Requires ``basis.n_fock <= moments.n_max``.
    """
    if basis.n_fock > moments.n_max:
        raise ValueError(f"n_fock={basis.n_fock} exceeds moment truncation n_max={moments.n_max}")
    rho = fock_density_from_moments(moments, basis.n_fock)
    u = basis.unitary
    return DressedDensityMatrix(u.conj().T @ rho @ u)


@dataclass(frozen=True)
class PeakEstimates:
    """Dressed-state estimates of line intensities (units of |<a>|^2).

    ``sidebands[(i, j)]`` is P_i |<j~|a|i~>|^2 for i != j; ``center`` is
    sum_i P_i |<i~|a|i~>|^2 - |<a>|^2.  ``unreliable`` is set when the
    dressed coherence |rho~_01| exceeds a tenth of the larger of the two
    lowest populations, where neglecting coherences is not justified.
    """

    sidebands: dict
    center: float
    coherence_01: float
    unreliable: bool

    def total(self) -> float:
        return float(sum(self.sidebands.values()) + self.center)


def peak_intensity_estimates(rho: DressedDensityMatrix, basis: DressedBasis,
                             moments: MomentTable, i_max: int | None = None) -> PeakEstimates:
    top = basis.reportable - 1 if i_max is None else i_max
    if top >= basis.reportable:
        raise ValueError(f"i_max must be below {basis.reportable}")
    p = rho.populations
    me = basis.matrix_elements()
    side = {(i, j): float(p[i] * me[j, i])
            for i in range(top + 1) for j in range(top + 1) if i != j}
    center = float(np.sum(p[:top + 1] * me.diagonal()[:top + 1]) - abs(moments[0, 1]) ** 2)
    r = rho.rho_tilde
    coh = float(abs(r[0, 1]))
    ref = max(abs(r[0, 0]), abs(r[1, 1]))
    return PeakEstimates(side, center, coh, coh > RELIABILITY_RATIO * ref)

"""Brute-force reference path: Lindblad generator on a truncated Fock space.

Density matrices are vectorized row-major, so vec(A X B) = kron(A, B^T) vec(X).
The generator is

    L rho = -i [H, rho] + D[sqrt(kappa_ex + kappa_in) a] rho + D[sqrt(2 gamma_p) a^dag a] rho

with the rotating-frame Hamiltonian
H = (omega0 - omega_d) a^dag a + (K/2) a^dag^2 a^2 + sqrt(kappa_ex) (F* a + F a^dag).
Spectra follow from the quantum regression theorem.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import NumericalError, SingularSystemError
from .model import DriveField, FrequencyGrid, SystemParams, benchmark_params
from .spectrum import SpectrumSeries, spectrum_metadata

log = logging.getLogger(__name__)

N_FOCK_CAP = 30


def _ladder(n: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1.0, n)), 1).astype(complex)


@dataclass(frozen=True)
class Liouvillian:
    n_fock: int
    superop: np.ndarray
    params: SystemParams = field(repr=False)
    drive: DriveField = field(repr=False)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return (self.superop @ rho.reshape(-1)).reshape(self.n_fock, self.n_fock)


def build_liouvillian(params: SystemParams, drive: DriveField, n_fock: int) -> Liouvillian:
    if not 2 <= n_fock <= N_FOCK_CAP:
        raise ValueError(f"n_fock must lie in [2, {N_FOCK_CAP}]")
    a = _ladder(n_fock)
    ad = a.conj().T
    num = ad @ a
    eye = np.eye(n_fock)
    f = drive.amplitude_f
    h = ((params.omega0 - drive.omega_d) * num + params.kerr / 2.0 * ad @ ad @ a @ a
         + math.sqrt(params.kappa_ex) * (np.conj(f) * a + f * ad))
    sup = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for rate, c in ((params.kappa_loss, a), (2.0 * params.gamma_p, num)):
        if rate == 0:
            continue
        c = math.sqrt(rate) * c
        cdc = c.conj().T @ c
        sup += np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T)
    return Liouvillian(n_fock, sup, params, drive)


def steady_density(liou: Liouvillian) -> np.ndarray:
    """Null vector of L normalized to unit trace.

    The trace condition replaces the first row of L; a second null vector
    would leave that bordered matrix singular, which is reported as an error.
    """
    n = liou.n_fock
    trace_row = np.eye(n).reshape(-1)
    lmat = liou.superop
    scale = np.abs(lmat).max()
    if scale == 0:
        raise SingularSystemError("generator vanishes; every state is stationary", math.inf)
    bordered = lmat / scale
    bordered[0] = trace_row
    lu, piv, info = sla.lapack.zgetrf(bordered)
    if info > 0:
        raise SingularSystemError("steady state is not unique", math.inf)
    rcond, _ = sla.lapack.zgecon(lu, np.abs(bordered).sum(axis=0).max(), norm="1")
    if rcond < 1e-13:
        raise SingularSystemError("steady state is not unique (degenerate null space)",
                                  1.0 / max(rcond, 1e-300))
    b = np.zeros(n * n, complex)
    b[0] = 1.0
    x, _ = sla.lapack.zgetrs(lu, piv, b)
    rho = x.reshape(n, n)
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    resid = np.linalg.norm(lmat @ rho.reshape(-1)) / np.linalg.norm(lmat, 2)
    if resid > 1e-10:
        raise NumericalError(f"steady-state residual {resid:.2e} exceeds 1e-10")
    return rho


def moments_of_density(rho: np.ndarray, n_max: int) -> np.ndarray:
    """alpha[m, n] = tr(a^dag^m a^n rho) for 0 <= m, n <= n_max by explicit matrix powers."""
    d = rho.shape[0]
    a = _ladder(d)
    pw = [np.eye(d, dtype=complex)]
    for _ in range(min(n_max, d - 1)):
        pw.append(pw[-1] @ a)
    out = np.zeros((n_max + 1, n_max + 1), complex)
    for m in range(len(pw)):
        left = pw[m].conj().T
        for n in range(len(pw)):
            out[m, n] = np.trace(left @ pw[n] @ rho)
    return out


def regression_spectrum(liou: Liouvillian, rho_ss: np.ndarray,
                        grid: FrequencyGrid) -> SpectrumSeries:
    """(kappa_ex/pi) Re tr[a (s - L)^-1 (rho a^dag - <a^dag> rho)] at s = i(omega_d - omega).

    The source is traceless, so L may be deflated by -c |rho_ss><<1| without
    changing the result; that removes the zero eigenvalue and keeps s = 0
    regular.  One Schur factorization then serves every grid point.
    """
    params, drive = liou.params, liou.drive
    n = liou.n_fock
    a = _ladder(n)
    ad = a.conj().T
    src = (rho_ss @ ad - np.trace(ad @ rho_ss) * rho_ss).reshape(-1)
    c = np.abs(liou.superop).max()
    deflated = liou.superop - c * np.outer(rho_ss.reshape(-1), np.eye(n).reshape(-1))
    t, z = sla.schur(deflated, output="complex")
    y = z.conj().T @ src
    # tr(a X) = sum_ij a_ij X_ji = <vec(a^T), vec(X)>
    wz = a.T.reshape(-1) @ z
    s_all = 1j * (drive.omega_d - grid.points)
    diag = np.diag(t)
    eye = np.eye(t.shape[0])
    vals = np.empty(s_all.size)
    tiny = 1e-12 * c
    for k, s in enumerate(s_all):
        if np.min(np.abs(s - diag)) < tiny:
            log.warning("grid point sits on the Liouvillian spectrum; shifting by %.1e", tiny)
            s = s + tiny
        vals[k] = (wz @ sla.solve_triangular(s * eye - t, y)).real
    vals *= params.kappa_ex / math.pi
    coh = abs(drive.amplitude_f - 1j * math.sqrt(params.kappa_ex) * np.trace(a @ rho_ss)) ** 2
    meta = {"model": "lindblad", "n_fock": n}
    meta.update(spectrum_metadata(params, drive))
    return SpectrumSeries(grid, vals, float(coh), meta)


@dataclass(frozen=True)
class CheckResult:
    name: str
    deviation: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.deviation <= self.threshold


def moment_deviation(hier: np.ndarray, ref: np.ndarray, order: int = 4) -> float:
    """Max relative deviation over m + n <= order (denominator floored at 1e-12)."""
    worst = 0.0
    for m in range(order + 1):
        for n in range(order + 1 - m):
            den = max(abs(ref[m, n]), 1e-12)
            worst = max(worst, abs(hier[m, n] - ref[m, n]) / den)
    return worst


def equivalence_suite(f_values=(1.0, 3.0, 5.0, 10.0), n_max: int = 20, n_fock: int = 20,
                      grid_points: int = 1001, span_mhz: float = 60.0) -> list[CheckResult]:
    """Cross-check moments and spectra of the hierarchy against this module."""
    from .moments import solve_steady_moments
    from .spectrum import incoherent_spectrum
    from .tls import tls_incoherent_spectrum

    params = benchmark_params()
    grid = FrequencyGrid.centered(params.omega0, 2 * math.pi * span_mhz * 1e6, grid_points)
    out = []
    for f in f_values:
        drive = DriveField.from_normalized(f, params)
        liou = build_liouvillian(params, drive, n_fock)
        rho = steady_density(liou)
        mom = solve_steady_moments(params, drive, n_max)
        out.append(CheckResult(f"moments F/sqrt(kex)={f:g}",
                               moment_deviation(mom.values, moments_of_density(rho, 4)), 1e-8))
        s_h = incoherent_spectrum(params, drive, grid, n_max, mom)
        s_o = regression_spectrum(liou, rho, grid)
        dev = float(np.max(np.abs(s_h.values - s_o.values)) / np.max(np.abs(s_o.values)))
        out.append(CheckResult(f"spectrum F/sqrt(kex)={f:g}", dev, 1e-6))
    tls_params = benchmark_params(kerr_mhz=-200.0)
    for f in (1.0, 5.0):
        drive = DriveField.from_normalized(f, tls_params)
        liou = build_liouvillian(tls_params, drive, 2)
        s_o = regression_spectrum(liou, steady_density(liou), grid)
        s_t = tls_incoherent_spectrum(tls_params, drive, grid)
        dev = float(np.max(np.abs(s_o.values - s_t.values)) / np.max(np.abs(s_t.values)))
        out.append(CheckResult(f"two-level F/sqrt(kex)={f:g}", dev, 1e-8))
    return out

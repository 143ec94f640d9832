"""Two-level limit (|K| -> infinity) of the driven resonator in closed form."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularSystemError
from .model import DriveField, FrequencyGrid, SystemParams
from .spectrum import SpectrumSeries, spectrum_metadata


@dataclass(frozen=True)
class TlsSteadyState:
    """<sigma>_s, <sigma^dag sigma>_s and rbar = kappa / (kappa_ex + kappa_in)."""

    sigma_s: complex
    excitation_s: float
    rbar: float

    @property
    def connected_excitation(self) -> float:
        return self.excitation_s - abs(self.sigma_s) ** 2


def tls_steady_state(params: SystemParams, drive: DriveField) -> TlsSteadyState:
    kap = params.kappa
    rbar = kap / params.kappa_loss
    f = drive.amplitude_f
    g = math.sqrt(params.kappa_ex)
    lorentz = kap / 2.0 + 1j * (drive.omega_d - params.omega0)
    den = 2.0 * rbar * params.kappa_ex * abs(f) ** 2 + abs(lorentz) ** 2
    sigma = -1j * g * lorentz * f / den
    excitation = rbar * params.kappa_ex * abs(f) ** 2 / den
    return TlsSteadyState(complex(sigma), float(excitation), float(rbar))


def tls_laplace_matrices(params: SystemParams, drive: DriveField):
    """Return (B, g) with the 3x3 system written as (s I + B) betabar = g.

    Unknowns are (betabar_1, betabar_2, betabar_3) for the correlators
    <sigma^dag(0) sigma(tau)>, <sigma^dag(0) sigma^dag(tau)> and
    <sigma^dag(0) sigma^dag sigma(tau)>, each minus its factorized part.
    """
    delta = drive.omega_d - params.omega0
    kap = params.kappa
    g = math.sqrt(params.kappa_ex)
    f = drive.amplitude_f
    fc = np.conj(f)
    b = np.array([
        [-1j * delta + kap / 2.0, 0.0, -2j * g * f],
        [0.0, 1j * delta + kap / 2.0, 2j * g * fc],
        [-1j * g * fc, 1j * g * f, params.kappa_loss],
    ], dtype=complex)
    ss = tls_steady_state(params, drive)
    sc = np.conj(ss.sigma_s)
    rhs = np.array([ss.connected_excitation, -sc ** 2, -sc * ss.excitation_s], dtype=complex)
    return b, rhs


def _solve3(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Batched Cramer's rule for (k, 3, 3) matrices; returns only the first unknown."""
    c00 = a[:, 1, 1] * a[:, 2, 2] - a[:, 1, 2] * a[:, 2, 1]
    c01 = a[:, 1, 2] * a[:, 2, 0] - a[:, 1, 0] * a[:, 2, 2]
    c02 = a[:, 1, 0] * a[:, 2, 1] - a[:, 1, 1] * a[:, 2, 0]
    det = a[:, 0, 0] * c00 + a[:, 0, 1] * c01 + a[:, 0, 2] * c02
    scale = np.abs(a).reshape(len(a), -1).max(axis=1) ** 3
    if np.any(np.abs(det) <= 1e-14 * scale):
        raise SingularSystemError("3x3 two-level system is singular", math.inf)
    # first row of the adjugate times y
    num = (y[0] * c00
           + y[1] * (a[:, 0, 2] * a[:, 2, 1] - a[:, 0, 1] * a[:, 2, 2])
           + y[2] * (a[:, 0, 1] * a[:, 1, 2] - a[:, 0, 2] * a[:, 1, 1]))
    return num / det


def tls_incoherent_spectrum(params: SystemParams, drive: DriveField,
                            grid: FrequencyGrid) -> SpectrumSeries:
    """(kappa_ex/pi) Re betabar_1(i(omega_d - omega)) on ``grid``, plus the coherent weight."""
    b, rhs = tls_laplace_matrices(params, drive)
    s = 1j * (drive.omega_d - grid.points)
    a = b[None, :, :] + s[:, None, None] * np.eye(3)[None, :, :]
    values = params.kappa_ex / math.pi * _solve3(a, rhs).real
    meta = {"model": "tls"}
    meta.update(spectrum_metadata(params, drive))
    return SpectrumSeries(grid, values, tls_coherent_power(params, drive), meta)


def tls_coherent_power(params: SystemParams, drive: DriveField) -> float:
    """|F - i sqrt(kappa_ex) <sigma>_s|^2 (photons/s)."""
    ss = tls_steady_state(params, drive)
    return abs(drive.amplitude_f - 1j * math.sqrt(params.kappa_ex) * ss.sigma_s) ** 2


def mollow_sideband_offset(params: SystemParams, drive: DriveField) -> float:
    """Rabi splitting 2 sqrt(kappa_ex) |F| (rad/s) of the strong-drive triplet."""
    return 2.0 * math.sqrt(params.kappa_ex) * abs(drive.amplitude_f)

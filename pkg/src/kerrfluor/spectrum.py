"""Incoherent and coherent output spectra from the Laplace-domain correlator hierarchy.

With beta_{m,n}(tau) = <a^dag(0) a^dag^m(tau) a^n(tau)> - <a^dag> <a^dag^m a^n>,
the Laplace transforms obey

    (s I - M0) betabar(s) = beta(0),   beta_{m,n}(0) = alpha_{m+1,n} - alpha_{1,0} alpha_{m,n},

where M0 is the moment-hierarchy generator.  The incoherent photon-flux
density at frequency omega is (kappa_ex / pi) Re betabar_{0,1}(i (omega_d - omega)).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.constants import hbar
from scipy.ndimage import convolve1d

from .csvio import float_column, read_table, write_table
from .errors import NumericalError, TruncationError
from .model import TWO_PI, DriveField, FrequencyGrid, SystemParams
from .moments import DEFAULT_N_MAX, MomentTable, hierarchy_matrix, solve_steady_moments

log = logging.getLogger(__name__)

EIG_COND_MAX = 1e10
EIG_SPOT_TOL = 1e-9


@dataclass(frozen=True)
class SpectrumSeries:
    """Photon-flux spectral density sampled on ``grid``.

    ``values`` are in photons/s per rad/s; ``coherent_weight`` (photons/s) is
    the weight of the delta peak at the drive frequency, held separately.
    """

    grid: FrequencyGrid
    values: np.ndarray
    coherent_weight: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (len(self.grid),):
            raise ValueError("values must match the grid length")
        if not np.all(np.isfinite(v)):
            raise NumericalError("spectrum contains non-finite values")
        if self.coherent_weight < 0 or not math.isfinite(self.coherent_weight):
            raise ValueError("coherent_weight must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def integral(self) -> float:
        """Trapezoidal integral over angular frequency (photons/s)."""
        return float(np.trapezoid(self.values, self.grid.points))

    def riemann_sum(self) -> float:
        """sum(values) * step on a uniform grid."""
        return float(self.values.sum() * self.grid.step())

    def to_csv(self, path: str | Path, header: dict | None = None) -> None:
        meta = dict(self.meta)
        meta["coherent_weight"] = self.coherent_weight
        meta.update(header or {})
        write_table(path, {"frequency_hz": self.grid.hz, "flux_density": self.values}, meta)

    @classmethod
    def from_csv(cls, path: str | Path) -> "SpectrumSeries":
        cols, meta = read_table(path)
        grid = FrequencyGrid.from_hz(float_column(cols, "frequency_hz", path))
        weight = float(meta.pop("coherent_weight", 0.0))
        return cls(grid, float_column(cols, "flux_density", path), weight, meta)


@dataclass(frozen=True)
class BetaOperator:
    """Correlator system (s I - m0) betabar = rhs in flat (m, n) order.

    ``m0`` is the moment-hierarchy generator (its (0, 0) row is empty) and
    ``rhs[0] = 0``, so betabar_{0,0} = 0 for every s.
    """

    m0: sp.csr_matrix
    rhs: np.ndarray
    n_max: int

    def reduced(self) -> tuple[sp.csr_matrix, np.ndarray]:
        """Drop the (0, 0) index; flat index (0, 1) becomes position 0."""
        return self.m0[1:, 1:].tocsr(), self.rhs[1:]


def correlator_rhs(moments: MomentTable) -> np.ndarray:
    """beta_{m,n}(0) = alpha_{m+1,n} - alpha_{1,0} alpha_{m,n}, zero at (0, 0)."""
    a = moments.values
    n_max = moments.n_max
    shifted = np.zeros_like(a)
    shifted[:n_max] = a[1:]
    rhs = shifted - a[1, 0] * a
    rhs[0, 0] = 0.0
    return rhs.reshape(-1)


def build_beta_operator(params: SystemParams, drive: DriveField, n_max: int = DEFAULT_N_MAX,
                        moments: MomentTable | None = None) -> BetaOperator:
    """Assemble M0 and the initial-value vector of the correlator hierarchy.

    Raises
    ------
    TruncationError
        If ``moments`` was checked and found unconverged, or does not match
        ``n_max``.
    """
    if moments is None:
        moments = solve_steady_moments(params, drive, n_max)
    if moments.n_max != n_max:
        raise TruncationError(f"moment table has n_max={moments.n_max}, expected {n_max}")
    if moments.converged is False:
        raise TruncationError(f"moments are not converged at n_max={n_max}")
    return BetaOperator(hierarchy_matrix(params, drive, n_max), correlator_rhs(moments), n_max)


class Resolvent:
    """Evaluates betabar_{0,1}(s) for many s with one of two interchangeable routes.

    ``method="eig"`` diagonalizes M0 once; ``method="lu"`` factors
    (s I - M0) at each point.  ``"auto"`` uses eig unless the eigenvector
    matrix is ill-conditioned or a spot check against LU disagrees.
    """

    def __init__(self, op: BetaOperator, method: str = "auto"):
        if method not in ("auto", "eig", "lu"):
            raise ValueError(f"unknown resolvent method {method!r}")
        self.m0, self.rhs = op.reduced()
        self.method = "lu" if method == "lu" else "eig"
        self.condition = math.nan
        if not np.any(self.rhs):
            self.method = "zero"
            return
        if self.method == "eig":
            lam, vec = sla.eig(self.m0.toarray())
            self.lam = lam
            self.condition = float(np.linalg.cond(vec))
            if method == "auto" and not (math.isfinite(self.condition)
                                         and self.condition <= EIG_COND_MAX):
                log.info("eigenvector condition %.2e too large; using per-point LU",
                         self.condition)
                self.method = "lu"
                return
            # betabar_01(s) = sum_k w_k / (s - lam_k)
            self.w = vec[0, :] * np.linalg.solve(vec, self.rhs)
            if method == "auto" and not self._spot_check():
                self.method = "lu"

    def _spot_check(self) -> bool:
        spread = float(np.max(np.abs(self.lam.imag))) + float(np.max(np.abs(self.lam.real)))
        probes = 1j * np.array([-spread, 0.0, 0.37 * spread])
        e = self._eval_eig(probes)
        ref = self._eval_lu(probes)
        err = float(np.max(np.abs(e - ref)) / max(np.max(np.abs(ref)), 1e-300))
        if err > EIG_SPOT_TOL:
            log.info("eigen route disagrees with LU by %.2e; using per-point LU", err)
            return False
        return True

    def _eval_eig(self, s: np.ndarray) -> np.ndarray:
        return (1.0 / (s[:, None] - self.lam[None, :])) @ self.w

    def _eval_lu(self, s: np.ndarray) -> np.ndarray:
        eye = sp.identity(self.m0.shape[0], dtype=complex, format="csc")
        m0 = self.m0.tocsc()
        out = np.empty(s.size, complex)
        for k, sk in enumerate(s):
            out[k] = spla.splu(sk * eye - m0).solve(self.rhs)[0]
        return out

    def __call__(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        if self.method == "zero":
            return np.zeros(s.size, complex)
        if self.method == "eig":
            return self._eval_eig(s)
        return self._eval_lu(s)


def incoherent_spectrum(params: SystemParams, drive: DriveField, grid: FrequencyGrid,
                        n_max: int = DEFAULT_N_MAX, moments: MomentTable | None = None,
                        method: str = "auto") -> SpectrumSeries:
    """Incoherent photon-flux density (kappa_ex/pi) Re betabar_{0,1}(i(omega_d - omega)).

    The returned series also carries the coherent delta-peak weight.
    """
    if moments is None:
        moments = solve_steady_moments(params, drive, n_max)
    op = build_beta_operator(params, drive, n_max, moments)
    res = Resolvent(op, method)
    s = 1j * (drive.omega_d - grid.points)
    values = params.kappa_ex / math.pi * res(s).real
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    if peak > 0 and values.min() < -1e-9 * peak:
        log.warning("spectrum dips to %.2e of its maximum below zero", values.min() / peak)
    meta = {"model": "knr", "n_max": n_max, "resolvent": res.method}
    meta.update(spectrum_metadata(params, drive))
    return SpectrumSeries(grid, values, coherent_power(params, drive, n_max, moments), meta)


def coherent_power(params: SystemParams, drive: DriveField, n_max: int = DEFAULT_N_MAX,
                   moments: MomentTable | None = None) -> float:
    """Weight |F - i sqrt(kappa_ex) <a>|^2 of the delta peak at omega_d (photons/s)."""
    if moments is None:
        moments = solve_steady_moments(params, drive, n_max)
    out = drive.amplitude_f - 1j * math.sqrt(params.kappa_ex) * moments[0, 1]
    return abs(out) ** 2


def total_incoherent_rate(moments: MomentTable, params: SystemParams) -> float:
    """kappa_ex (<a^dag a> - |<a>|^2), the integral of the incoherent density."""
    return params.kappa_ex * moments.connected_photon_number


def _boxcar_kernel(width: float) -> np.ndarray:
    """Samples of a unit-area boxcar ``width`` samples wide, by exact bin overlap."""
    half = width / 2.0
    k = np.arange(-math.ceil(half - 0.5), math.ceil(half - 0.5) + 1)
    overlap = np.clip(np.minimum(k + 0.5, half) - np.maximum(k - 0.5, -half), 0.0, 1.0)
    return overlap / overlap.sum()


def convolve_resolution(series: SpectrumSeries, rbw_hz: float) -> SpectrumSeries:
    """Boxcar-average the series over a resolution bandwidth ``rbw_hz``.

    The coherent delta peak is deposited on the grid (split linearly between
    the two nearest points) before convolving, so it turns into a finite
    peak of height coherent_weight / rbw.  Edges use mirror reflection,
    which conserves sum(values) * step.
    """
    step = series.grid.step()
    rbw = TWO_PI * rbw_hz
    if not rbw_hz > 0 or rbw < step * (1 - 1e-9):
        raise ValueError(f"rbw {rbw_hz} Hz is below the grid step {step / TWO_PI:.6g} Hz")
    vals = np.array(series.values)
    if series.coherent_weight > 0:
        wd = series.meta.get("omega_d")
        if wd is None:
            raise ValueError("series has a coherent weight but no omega_d in its metadata")
        pos = (float(wd) - series.grid.points[0]) / step
        if 0 <= pos <= vals.size - 1:
            i = min(int(math.floor(pos)), vals.size - 2)
            frac = pos - i
            vals[i] += (1 - frac) * series.coherent_weight / step
            vals[i + 1] += frac * series.coherent_weight / step
        else:
            log.warning("drive frequency lies outside the grid; coherent peak dropped")
    kernel = _boxcar_kernel(rbw / step)
    if kernel.size > vals.size:
        raise ValueError("rbw is wider than the grid")
    out = convolve1d(vals, kernel, mode="reflect")
    meta = dict(series.meta)
    meta["rbw_hz"] = rbw_hz
    return SpectrumSeries(series.grid, out, 0.0, meta)


def psd_watts_per_hz(series: SpectrumSeries) -> np.ndarray:
    """Power spectral density hbar omega S(omega) * 2 pi, in W/Hz."""
    return hbar * series.grid.points * series.values * TWO_PI


def watts_to_dbm(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(p) + 30.0


def dbm_to_watts(p_dbm) -> np.ndarray:
    return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


def spectrum_metadata(params: SystemParams, drive: DriveField) -> dict:
    """Parameter header for CSV output (rates in Hz, omega_d kept in rad/s)."""
    return {
        "omega0_hz": params.omega0 / TWO_PI,
        "kerr_hz": params.kerr / TWO_PI,
        "kappa_ex_hz": params.kappa_ex / TWO_PI,
        "kappa_in_hz": params.kappa_in / TWO_PI,
        "gamma_p_hz": params.gamma_p / TWO_PI,
        "drive_freq_hz": drive.omega_d / TWO_PI,
        "omega_d": drive.omega_d,
        "f_abs": abs(drive.amplitude_f),
    }

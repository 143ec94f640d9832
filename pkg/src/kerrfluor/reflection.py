"""Reflection coefficient of the resonator: linear model, power dependence, and fitting."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.optimize import least_squares, minimize_scalar

from .csvio import float_column, read_table, write_table
from .errors import FitError, TruncationError
from .model import TWO_PI, DriveField, SystemParams, amplitude_from_power
from .moments import DEFAULT_N_MAX, check_truncation, solve_steady_moments


@dataclass(frozen=True)
class ReflectionTrace:
    """Complex reflection ``gamma`` at probe angular frequencies ``omega``."""

    omega: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float)
        g = np.asarray(self.gamma, dtype=complex)
        if w.ndim != 1 or w.shape != g.shape or w.size < 2:
            raise ValueError("omega and gamma must be 1-D arrays of equal length >= 2")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(g))):
            raise ValueError("trace contains non-finite values")
        if not np.all(np.diff(w) > 0):
            raise ValueError("probe frequencies must be strictly increasing")
        object.__setattr__(self, "omega", w)
        object.__setattr__(self, "gamma", g)

    def to_csv(self, path: str | Path, header: dict | None = None) -> None:
        write_table(path, {"freq_hz": self.omega / TWO_PI, "re_gamma": self.gamma.real,
                           "im_gamma": self.gamma.imag}, header)

    @classmethod
    def from_csv(cls, path: str | Path) -> "ReflectionTrace":
        cols, _ = read_table(path)
        f = float_column(cols, "freq_hz", path)
        g = float_column(cols, "re_gamma", path) + 1j * float_column(cols, "im_gamma", path)
        return cls(TWO_PI * f, g)


def linear_reflection(omega_p, omega0: float, kappa_ex: float, kappa_in_star: float):
    """Gamma = 1 - kappa_ex / (i (omega_p - omega0) + (kappa_ex + kappa_in_star) / 2)."""
    if kappa_ex < 0 or kappa_in_star < 0:
        raise ValueError("rates must be non-negative")
    w = np.asarray(omega_p, dtype=float)
    g = 1.0 - kappa_ex / (1j * (w - omega0) + (kappa_ex + kappa_in_star) / 2.0)
    return complex(g) if np.ndim(g) == 0 else g


def nonlinear_reflection(params: SystemParams, probe: DriveField, n_max: int = DEFAULT_N_MAX,
                         tol: float = 1e-8) -> complex:
    """Coherent reflection amplitude of a single probe of arbitrary strength.

    Uses the steady-state mean field with the probe as the only drive,
    Gamma = 1 + i sqrt(kappa_ex) <a^dag>_s / F*, which is the complex
    conjugate of <b_out>/<b_in> in the rotating frame.  The conjugate matches
    the phase convention of :func:`linear_reflection`.

    Raises
    ------
    TruncationError
        If the moments are not converged at ``n_max``.
    """
    if probe.amplitude_f == 0:
        raise ValueError("probe amplitude must be non-zero")
    mom = solve_steady_moments(params, probe, n_max)
    report = check_truncation(params, probe, n_max, tol, base=mom)
    if not report.converged:
        raise TruncationError(f"probe too strong for n_max={n_max} (change {report.max_change:.2e}); "
                              f"try n_max={report.recommended_n_max}")
    return complex(1.0 + 1j * math.sqrt(params.kappa_ex) * mom[1, 0] / np.conj(probe.amplitude_f))


def power_sweep(params: SystemParams, powers_dbm, omega_p: float | None = None,
                n_max: int = DEFAULT_N_MAX) -> np.ndarray:
    """Complex Gamma at ``omega_p`` (default omega0) versus at-chip probe power."""
    wp = params.omega0 if omega_p is None else omega_p
    return np.array([nonlinear_reflection(params, DriveField.from_power(p, wp), n_max)
                     for p in powers_dbm])


def calibrate_attenuation(params: SystemParams, source_dbm, measured_abs_gamma,
                          bounds_db: tuple[float, float], omega_p: float | None = None,
                          n_max: int = DEFAULT_N_MAX) -> float:
    """Line attenuation (dB, negative) mapping source power to at-chip power.

    Minimizes sum (|Gamma(source + att)| - measured)^2 over ``att`` in
    ``bounds_db``; the dip shallowing with power pins the offset.
    """
    src = np.asarray(source_dbm, dtype=float)
    meas = np.asarray(measured_abs_gamma, dtype=float)

    def cost(att):
        return float(np.sum((np.abs(power_sweep(params, src + att, omega_p, n_max)) - meas) ** 2))

    res = minimize_scalar(cost, bounds=bounds_db, method="bounded", options={"xatol": 1e-3})
    if not res.success:
        raise FitError(f"attenuation calibration failed: {res.message}")
    return float(res.x)


@dataclass(frozen=True)
class LinearReflectionFit:
    """Fitted resonance (rad/s) and background a * exp(i tau (omega - omega_ref))."""

    omega0: float
    kappa_ex: float
    kappa_in_star: float
    background: complex
    delay: float
    stderr: dict
    residual_rms: float
    omega_ref: float

    def model(self, omega) -> np.ndarray:
        w = np.asarray(omega, dtype=float)
        env = self.background * np.exp(1j * self.delay * (w - self.omega_ref))
        return env * linear_reflection(w, self.omega0, self.kappa_ex, self.kappa_in_star)

    def report(self) -> dict:
        return {
            "omega0_hz": self.omega0 / TWO_PI,
            "kappa_ex_hz": self.kappa_ex / TWO_PI,
            "kappa_in_star_hz": self.kappa_in_star / TWO_PI,
            "omega0_hz_stderr": self.stderr["omega0"] / TWO_PI,
            "kappa_ex_hz_stderr": self.stderr["kappa_ex"] / TWO_PI,
            "kappa_in_star_hz_stderr": self.stderr["kappa_in_star"] / TWO_PI,
            "background_abs": abs(self.background),
            "background_phase_rad": float(np.angle(self.background)),
            "delay_s": self.delay,
            "residual_rms": self.residual_rms,
        }


def _initial_guess(trace: ReflectionTrace):
    """Resonance where the trace strays furthest from its off-resonant background.

    The cable delay is removed first.  Away from resonance Gamma -> background;
    |Gamma/a - 1| peaks at omega0
    with a half-power (1/sqrt 2) full width equal to the total linewidth.
    """
    w, g = trace.omega, trace.gamma
    edge = max(2, g.size // 20)
    # cable delay: mean phase slope of the two off-resonant edge segments
    slopes = [np.polyfit(w[sl], np.unwrap(np.angle(g[sl])), 1)[0]
              for sl in (slice(0, edge), slice(g.size - edge, g.size))]
    tau = float(np.mean(slopes))
    g = g * np.exp(-1j * tau * (w - float(np.mean(w))))
    far = np.concatenate([g[:edge], g[-edge:]])
    a = complex(np.mean(far))
    if abs(a) == 0:
        raise FitError("trace has a vanishing background")
    dev = np.abs(g / a - 1.0)
    win = max(1, g.size // 200) * 2 + 1
    smooth = uniform_filter1d(dev, win, mode="nearest")
    noise = float(np.std(np.diff(g[:edge] / a))) / math.sqrt(2.0) + 1e-300
    k = int(np.argmax(smooth))
    diameter = float(smooth[k])
    if diameter < 10.0 * noise or k in (0, g.size - 1):
        raise FitError("no resonance feature found in the probe span")
    above = np.nonzero(smooth >= diameter / math.sqrt(2.0))[0]
    kappa = max(w[above[-1]] - w[above[0]], 2.0 * (w[1] - w[0]))
    kex = float(np.clip(diameter * kappa / 2.0, 0.05 * kappa, 0.99 * kappa))
    return float(w[k]), kex, max(kappa - kex, 1e-3 * kappa), a, kappa, tau


def fit_linear_reflection(trace: ReflectionTrace) -> LinearReflectionFit:
    """Complex least-squares fit of the linear model times a cable background.

    Raises
    ------
    FitError
        If the span holds no resonance or the optimizer fails.
    """
    w0, kex, kin, a, kappa, tau0 = _initial_guess(trace)
    w = trace.omega
    ref = float(np.mean(w))
    span = w[-1] - w[0]

    # unknowns in natural scales: omega0 offset and rates in units of kappa
    def unpack(x):
        return (w0 + x[0] * kappa, x[1] * kappa, x[2] * kappa, complex(x[3], x[4]), x[5] / span)

    def resid(x):
        o0, ke, ki, bg, tau = unpack(x)
        model = bg * np.exp(1j * tau * (w - ref)) * linear_reflection(w, o0, ke, ki)
        r = model - trace.gamma
        return np.concatenate([r.real, r.imag])

    x0 = np.array([0.0, kex / kappa, kin / kappa, a.real, a.imag, tau0 * span])
    lb = [-np.inf, 0.0, 0.0, -np.inf, -np.inf, -np.inf]
    sol = least_squares(resid, x0, bounds=(lb, np.inf), method="trf", x_scale="jac",
                        xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=5000)
    if not sol.success:
        raise FitError(f"reflection fit did not converge: {sol.message}")
    o0, ke, ki, bg, tau = unpack(sol.x)
    dof = max(sol.fun.size - sol.x.size, 1)
    s2 = float(sol.fun @ sol.fun) / dof
    try:
        cov = np.linalg.inv(sol.jac.T @ sol.jac) * s2
        err = np.sqrt(np.clip(np.diag(cov), 0.0, None)) * kappa
    except np.linalg.LinAlgError:
        err = np.full(sol.x.size, np.nan)
    stderr = {"omega0": float(err[0]), "kappa_ex": float(err[1]), "kappa_in_star": float(err[2])}
    return LinearReflectionFit(float(o0), float(ke), float(ki), bg, float(tau), stderr,
                               math.sqrt(s2 / 2.0), ref)


def synthetic_trace(omega, omega0, kappa_ex, kappa_in_star, noise: float = 0.0,
                    rng: np.random.Generator | None = None) -> ReflectionTrace:
    """Linear-model trace with optional complex Gaussian noise of rms ``noise`` per point."""
    g = linear_reflection(omega, omega0, kappa_ex, kappa_in_star)
    if noise > 0:
        if rng is None:
            raise ValueError("a random generator is required for noisy traces")
        g = g + noise / math.sqrt(2.0) * (rng.standard_normal(g.size)
                                          + 1j * rng.standard_normal(g.size))
    return ReflectionTrace(np.asarray(omega, dtype=float), g)


def probe_amplitude(power_dbm: float, omega_p: float) -> complex:
    return amplitude_from_power(power_dbm, omega_p)

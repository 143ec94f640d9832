"""Physical parameters, unit conventions and the (m, n) moment index map.

All rates and frequencies are angular (rad/s).  Hz/MHz/GHz only appear at
the configuration and CSV boundaries, and always with an explicit suffix in
the field name.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.constants import hbar

from .errors import ConfigError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SystemParams:
    """Kerr resonator parameters.

    Attributes
    ----------
    omega0 : float
        Resonance frequency (rad/s).
    kerr : float
        Kerr coefficient K (rad/s); negative for a transmon-like resonator.
    kappa_ex : float
        External coupling rate to the signal line (rad/s).
    kappa_in : float
        Internal loss rate (rad/s).
    gamma_p : float
        Pure dephasing rate (rad/s).
    """

    omega0: float
    kerr: float
    kappa_ex: float
    kappa_in: float = 0.0
    gamma_p: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ValueError(f"{f.name} must be finite")
        if self.omega0 <= 0:
            raise ValueError("omega0 must be positive")
        if self.kappa_ex <= 0:
            raise ValueError("kappa_ex must be positive")
        if self.kappa_in < 0 or self.gamma_p < 0:
            raise ValueError("kappa_in and gamma_p must be non-negative")

    @property
    def kappa(self) -> float:
        """Total coherence decay rate kappa_ex + kappa_in + 2 gamma_p."""
        return self.kappa_ex + self.kappa_in + 2.0 * self.gamma_p

    @property
    def kappa_loss(self) -> float:
        """Energy decay rate kappa_ex + kappa_in."""
        return self.kappa_ex + self.kappa_in

    @property
    def kappa_in_star(self) -> float:
        """Nominal internal loss seen by a weak reflection probe."""
        return self.kappa_in + 2.0 * self.gamma_p

    def replace(self, **changes) -> "SystemParams":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return SystemParams(**data)


@dataclass(frozen=True)
class DriveField:
    """Coherent drive with angular frequency ``omega_d`` and amplitude F.

    ``|F|**2`` is the incident photon rate (1/s).
    """

    omega_d: float
    amplitude_f: complex = 0.0

    def __post_init__(self):
        if not math.isfinite(self.omega_d) or self.omega_d <= 0:
            raise ValueError("omega_d must be positive and finite")
        if not np.isfinite(complex(self.amplitude_f)):
            raise ValueError("amplitude_f must be finite")
        object.__setattr__(self, "amplitude_f", complex(self.amplitude_f))

    @property
    def photon_rate(self) -> float:
        return abs(self.amplitude_f) ** 2

    def with_amplitude(self, amplitude_f: complex) -> "DriveField":
        return DriveField(self.omega_d, amplitude_f)

    @classmethod
    def from_power(cls, power_dbm: float, omega_d: float) -> "DriveField":
        return cls(omega_d, amplitude_from_power(power_dbm, omega_d))

    @classmethod
    def from_normalized(cls, f_over_sqrt_kex: float, params: SystemParams,
                        omega_d: float | None = None) -> "DriveField":
        """Drive specified as F / sqrt(kappa_ex); resonant unless ``omega_d`` given."""
        wd = params.omega0 if omega_d is None else omega_d
        return cls(wd, f_over_sqrt_kex * math.sqrt(params.kappa_ex))


@dataclass(frozen=True)
class MomentIndex:
    """Flat index map for the square (m, n) grid 0 <= m, n <= n_max."""

    n_max: int

    def __post_init__(self):
        if self.n_max < 0:
            raise ValueError("n_max must be non-negative")

    @property
    def dim(self) -> int:
        return (self.n_max + 1) ** 2

    def flat(self, m: int, n: int) -> int:
        if not (0 <= m <= self.n_max and 0 <= n <= self.n_max):
            raise IndexError(f"({m}, {n}) outside 0..{self.n_max}")
        return m * (self.n_max + 1) + n

    def unflat(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.dim:
            raise IndexError(k)
        return divmod(k, self.n_max + 1)

    def grids(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened m and n arrays in flat-index order."""
        m, n = np.divmod(np.arange(self.dim), self.n_max + 1)
        return m, n


@dataclass(frozen=True)
class FrequencyGrid:
    """Strictly increasing angular frequencies (rad/s)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1)
        if pts.size == 0:
            raise ValueError("frequency grid is empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("frequency grid contains non-finite values")
        if pts.size > 1 and not np.all(np.diff(pts) > 0):
            raise ValueError("frequency grid must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.size

    @classmethod
    def centered(cls, center: float, half_span: float, n_points: int) -> "FrequencyGrid":
        """Uniform grid of ``n_points`` over center +- half_span (rad/s)."""
        if n_points < 2 or half_span <= 0:
            raise ValueError("need n_points >= 2 and half_span > 0")
        return cls(center + np.linspace(-half_span, half_span, n_points))

    @classmethod
    def from_hz(cls, freq_hz) -> "FrequencyGrid":
        return cls(TWO_PI * np.asarray(freq_hz, dtype=float))

    @property
    def hz(self) -> np.ndarray:
        return self.points / TWO_PI

    def step(self) -> float:
        """Uniform step (rad/s); raises if the grid is not uniform."""
        if self.points.size < 2:
            raise ValueError("single-point grid has no step")
        d = np.diff(self.points)
        if np.ptp(d) > 1e-6 * abs(d.mean()):
            raise ValueError("grid is not uniform")
        return float(d.mean())


def amplitude_from_power(power_dbm: float, omega_d: float) -> complex:
    """Drive amplitude F (1/sqrt(s)) for a tone of ``power_dbm`` at the chip.

    Uses P = hbar * omega_d * |F|^2 with arg F = 0.  ``-inf`` maps to F = 0.
    """
    if not math.isfinite(omega_d) or omega_d <= 0:
        raise ValueError("omega_d must be positive and finite")
    if math.isnan(power_dbm) or power_dbm == math.inf:
        raise ValueError("power must be finite or -inf")
    if power_dbm == -math.inf:
        return 0j
    watts = 10.0 ** ((power_dbm - 30.0) / 10.0)
    return complex(math.sqrt(watts / (hbar * omega_d)))


def power_from_amplitude(amplitude_f: complex, omega_d: float) -> float:
    """Inverse of :func:`amplitude_from_power` (dBm); F = 0 gives ``-inf``."""
    if not math.isfinite(omega_d) or omega_d <= 0:
        raise ValueError("omega_d must be positive and finite")
    rate = abs(amplitude_f) ** 2
    if not math.isfinite(rate):
        raise ValueError("amplitude must be finite")
    if rate == 0:
        return -math.inf
    return 10.0 * math.log10(hbar * omega_d * rate) + 30.0


def epsilon(m: int, n: int, params: SystemParams) -> complex:
    """Lab-frame rate eps_{m,n} multiplying <a^dag^m a^n> in its equation of motion."""
    if m < 0 or n < 0:
        raise ValueError("m and n must be non-negative")
    d = m - n
    return complex(-(m + n) * params.kappa_loss / 2.0 - d * d * params.gamma_p,
                   d * params.omega0 + d * (m + n - 1) * params.kerr / 2.0)


def epsilon_detuned(m: int, n: int, params: SystemParams, omega_d: float) -> complex:
    """eps'_{m,n} = eps_{m,n} - i (m - n) omega_d, evaluated without cancellation."""
    if m < 0 or n < 0:
        raise ValueError("m and n must be non-negative")
    d = m - n
    return complex(-(m + n) * params.kappa_loss / 2.0 - d * d * params.gamma_p,
                   d * (params.omega0 - omega_d) + d * (m + n - 1) * params.kerr / 2.0)


def epsilon_detuned_grid(index: MomentIndex, params: SystemParams, omega_d: float) -> np.ndarray:
    """Vector of eps'_{m,n} in flat-index order."""
    m, n = index.grids()
    d = m - n
    return (-(m + n) * params.kappa_loss / 2.0 - d * d * params.gamma_p
            + 1j * (d * (params.omega0 - omega_d) + d * (m + n - 1) * params.kerr / 2.0))


# --- key = value configuration -------------------------------------------

_HZ_SCALE = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}

# canonical name -> (kind, target)
_PARAM_KEYS = ("omega0", "kerr", "kappa_ex", "kappa_in", "gamma_p", "drive_freq")
_PLAIN_KEYS = {
    "drive_power_dbm": float,
    "f_over_sqrt_kex": float,
    "drive_amplitude_re": float,
    "drive_amplitude_im": float,
    "n_max": int,
    "grid_span_mhz": float,
    "grid_points": int,
    "rbw_hz": float,
    "seed": int,
    "model": str,
}


def _split_unit(key: str) -> tuple[str, float] | None:
    """(name, factor to rad/s) for a unit-suffixed frequency key."""
    base, _, suffix = key.rpartition("_")
    if base not in _PARAM_KEYS:
        return None
    if suffix == "rads":
        return base, 1.0
    if suffix in _HZ_SCALE:
        return base, TWO_PI * _HZ_SCALE[suffix]
    return None


def parse_config_text(text: str) -> dict:
    """Parse strict ``key = value`` text.

    Frequency keys carry a unit suffix (``omega0_ghz``, ``kappa_ex_mhz``,
    ``kerr_mhz``...) and are interpreted as ordinary frequencies (value/2pi),
    except ``_rads`` which is already angular; all are returned in rad/s
    under the bare name.  Unknown keys,
    duplicates and malformed lines raise :class:`ConfigError`.
    """
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        unit = _split_unit(key)
        if unit is not None:
            name, conv = unit
            caster = float
        elif key in _PLAIN_KEYS:
            name, conv, caster = key, None, _PLAIN_KEYS[key]
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if name in out:
            raise ConfigError(f"line {lineno}: duplicate key {name!r}")
        try:
            val = caster(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
        if isinstance(val, float) and math.isnan(val):
            raise ConfigError(f"line {lineno}: NaN for {key!r}")
        out[name] = val * conv if conv is not None else val
    return out


def load_config(path: str | Path) -> dict:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def params_from_config(cfg: dict) -> SystemParams:
    missing = [k for k in ("omega0", "kerr", "kappa_ex") if k not in cfg]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    try:
        return SystemParams(cfg["omega0"], cfg["kerr"], cfg["kappa_ex"],
                            cfg.get("kappa_in", 0.0), cfg.get("gamma_p", 0.0))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def drive_from_config(cfg: dict, params: SystemParams) -> DriveField:
    """Drive from exactly one of drive_power_dbm, f_over_sqrt_kex or drive_amplitude_re/_im."""
    wd = cfg.get("drive_freq", params.omega0)
    has_a = "drive_amplitude_re" in cfg or "drive_amplitude_im" in cfg
    given = [k for k, flag in (("drive_power_dbm", "drive_power_dbm" in cfg),
                               ("f_over_sqrt_kex", "f_over_sqrt_kex" in cfg),
                               ("drive_amplitude", has_a)) if flag]
    if len(given) > 1:
        raise ConfigError(f"drive specified more than once: {', '.join(given)}")
    if "drive_power_dbm" in cfg:
        return DriveField.from_power(cfg["drive_power_dbm"], wd)
    if has_a:
        return DriveField(wd, complex(cfg.get("drive_amplitude_re", 0.0),
                                      cfg.get("drive_amplitude_im", 0.0)))
    return DriveField.from_normalized(cfg.get("f_over_sqrt_kex", 0.0), params, wd)


def format_config(params: SystemParams, drive: DriveField, exact: bool = False, **extra) -> str:
    """Inverse of :func:`parse_config_text` for a parameter set.

    The default uses MHz/GHz units and F / sqrt(kappa_ex).  With ``exact``
    rates are written in rad/s and the drive as its complex amplitude, which
    parse back to bit-identical floats.
    """
    if exact:
        lines = [f"{name}_rads = {float(value)!r}" for name, value in (
            ("omega0", params.omega0), ("kerr", params.kerr), ("kappa_ex", params.kappa_ex),
            ("kappa_in", params.kappa_in), ("gamma_p", params.gamma_p),
            ("drive_freq", drive.omega_d))]
        lines += [f"drive_amplitude_re = {float(drive.amplitude_f.real)!r}",
                  f"drive_amplitude_im = {float(drive.amplitude_f.imag)!r}"]
    else:
        lines = [
            f"omega0_ghz = {params.omega0 / TWO_PI / 1e9!r}",
            f"kerr_mhz = {params.kerr / TWO_PI / 1e6!r}",
            f"kappa_ex_mhz = {params.kappa_ex / TWO_PI / 1e6!r}",
            f"kappa_in_mhz = {params.kappa_in / TWO_PI / 1e6!r}",
            f"gamma_p_mhz = {params.gamma_p / TWO_PI / 1e6!r}",
            f"drive_freq_ghz = {drive.omega_d / TWO_PI / 1e9!r}",
            f"f_over_sqrt_kex = {abs(drive.amplitude_f) / math.sqrt(params.kappa_ex)!r}",
        ]
    for k, v in extra.items():
        if k not in _PLAIN_KEYS or k in ("drive_power_dbm", "f_over_sqrt_kex",
                                         "drive_amplitude_re", "drive_amplitude_im"):
            raise ConfigError(f"cannot emit key {k!r}")
        lines.append(f"{k} = {v!r}")
    return "\n".join(lines) + "\n"


# Reference parameter sets.
def benchmark_params(kerr_mhz: float = -20.0, gamma_p_mhz: float = 0.1) -> SystemParams:
    return SystemParams(omega0=TWO_PI * 10e9, kerr=TWO_PI * kerr_mhz * 1e6,
                        kappa_ex=TWO_PI * 0.5e6, kappa_in=TWO_PI * 0.5e6,
                        gamma_p=TWO_PI * gamma_p_mhz * 1e6)


def device_params(kappa_in_mhz: float = 0.046, gamma_p_mhz: float = 0.0065) -> SystemParams:
    """Measured-device parameter set; internal rates default to fitted values."""
    return SystemParams(omega0=TWO_PI * 10.3653e9, kerr=TWO_PI * -9.7e6,
                        kappa_ex=TWO_PI * 0.260e6, kappa_in=TWO_PI * kappa_in_mhz * 1e6,
                        gamma_p=TWO_PI * gamma_p_mhz * 1e6)

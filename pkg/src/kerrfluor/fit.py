"""Bounded derivative-free fits of (kappa_in, gamma_p, A) to a measured fluorescence spectrum.

The model PSD is A * [hbar omega S(omega) 2 pi] after averaging over the
analyzer resolution bandwidth.  Residuals are taken in linear power, either
relative to the model (default) or unweighted and normalized by the data energy.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.stats import truncnorm

from .csvio import float_column, read_table, write_table
from .errors import ConfigError, FitError, NumericalError
from .model import TWO_PI, DriveField, FrequencyGrid, SystemParams
from .moments import check_truncation
from .spectrum import (convolve_resolution, dbm_to_watts, incoherent_spectrum,
                       psd_watts_per_hz, watts_to_dbm)

log = logging.getLogger(__name__)

PARAM_NAMES = ("kappa_in", "gamma_p", "scale")
DEFAULT_BOUNDS = {
    "kappa_in": (0.0, TWO_PI * 0.07e6),
    "gamma_p": (0.0, TWO_PI * 0.01e6),
    "scale": (0.7, 1.1),
}
WEIGHTINGS = ("relative", "uniform")
DEFAULT_GUESS = {"kappa_in": TWO_PI * 0.05e6, "gamma_p": TWO_PI * 0.0025e6, "scale": 1.0}


@dataclass(frozen=True)
class MeasuredSpectrum:
    """Analyzer trace in linear W/Hz with its acquisition metadata."""

    freq_hz: np.ndarray
    psd: np.ndarray
    drive_power_dbm: float
    rbw_hz: float

    def __post_init__(self):
        f = np.asarray(self.freq_hz, dtype=float)
        p = np.asarray(self.psd, dtype=float)
        if f.ndim != 1 or f.shape != p.shape or f.size < 3:
            raise ValueError("freq_hz and psd must be 1-D arrays of equal length >= 3")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(p))):
            raise ValueError("measured spectrum contains non-finite values")
        if not np.all(np.diff(f) > 0):
            raise ValueError("frequencies must be strictly increasing")
        object.__setattr__(self, "freq_hz", f)
        object.__setattr__(self, "psd", p)

    @property
    def grid(self) -> FrequencyGrid:
        return FrequencyGrid.from_hz(self.freq_hz)

    def to_csv(self, path: str | Path, header: dict | None = None) -> None:
        meta = {"drive_power_dbm": self.drive_power_dbm, "rbw_hz": self.rbw_hz}
        meta.update(header or {})
        write_table(path, {"freq_hz": self.freq_hz, "psd_dbm_per_hz": watts_to_dbm(self.psd)}, meta)

    @classmethod
    def from_csv(cls, path: str | Path, drive_power_dbm: float | None = None,
                 rbw_hz: float | None = None) -> "MeasuredSpectrum":
        """Read (freq_hz, psd_dbm_per_hz); metadata may come from the header or arguments."""
        cols, meta = read_table(path)
        if drive_power_dbm is None:
            if "drive_power_dbm" not in meta:
                raise ConfigError(f"{path}: drive power not given")
            drive_power_dbm = float(meta["drive_power_dbm"])
        if rbw_hz is None:
            if "rbw_hz" not in meta:
                raise ConfigError(f"{path}: rbw not given")
            rbw_hz = float(meta["rbw_hz"])
        f = float_column(cols, "freq_hz", path)
        return cls(f, dbm_to_watts(float_column(cols, "psd_dbm_per_hz", path)),
                   drive_power_dbm, rbw_hz)


@dataclass(frozen=True)
class FitConfig:
    """Fixed device parameters, bounds and optimizer settings.

    ``base`` supplies omega0, K and kappa_ex (its kappa_in and gamma_p are
    ignored).  ``exclusion_hz`` is the half-width of the window around the
    drive that is dropped from the residuals; None means 3 * RBW.

    ``weighting`` picks the residual: ``"relative"`` uses
    (A m - d) / (A m + noise_floor), the chi^2 for analyzer noise that is
    proportional to the received power on top of a floor (W/Hz);
    ``"uniform"`` uses plain A m - d, which lets the few points near the
    peaks dominate.
    ``profile_scale`` lets the sampler solve for A in closed form at each
    (kappa_in, gamma_p) instead of sampling it.
    """

    base: SystemParams
    drive: DriveField
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    n_trials: int = 500
    seed: int = 0
    n_max: int = 12
    exclusion_hz: float | None = None
    profile_scale: bool = True
    weighting: str = "relative"
    noise_floor: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.noise_floor) and self.noise_floor >= 0):
            raise ConfigError("noise_floor must be finite and non-negative")
        if self.weighting not in WEIGHTINGS:
            raise ConfigError(f"unknown weighting {self.weighting!r}; choose from {WEIGHTINGS}")
        for name in PARAM_NAMES:
            if name not in self.bounds:
                raise ConfigError(f"missing bounds for {name}")
            lo, hi = self.bounds[name]
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ConfigError(f"degenerate bounds for {name}: ({lo}, {hi})")
        if self.bounds["kappa_in"][0] < 0 or self.bounds["gamma_p"][0] < 0:
            raise ConfigError("rate bounds must be non-negative")
        if self.n_trials < 1:
            raise ConfigError("trial budget must be at least 1")

    def lower(self) -> np.ndarray:
        return np.array([self.bounds[k][0] for k in PARAM_NAMES])

    def upper(self) -> np.ndarray:
        return np.array([self.bounds[k][1] for k in PARAM_NAMES])

    def params_for(self, kappa_in: float, gamma_p: float) -> SystemParams:
        return self.base.replace(kappa_in=kappa_in, gamma_p=gamma_p)


def model_psd(config: FitConfig, kappa_in: float, gamma_p: float, freq_hz: np.ndarray,
              rbw_hz: float) -> np.ndarray:
    """RBW-averaged model PSD (W/Hz) at unit scale."""
    params = config.params_for(kappa_in, gamma_p)
    grid = FrequencyGrid.from_hz(freq_hz)
    series = incoherent_spectrum(params, config.drive, grid, config.n_max)
    step_hz = float(np.mean(np.diff(freq_hz)))
    if rbw_hz > step_hz * (1 + 1e-9):
        series = convolve_resolution(series, rbw_hz)
    return psd_watts_per_hz(series)


class Objective:
    """Weighted residual sum of squares over the points outside the drive window."""

    def __init__(self, data: MeasuredSpectrum, config: FitConfig):
        self.data = data
        self.config = config
        half = config.exclusion_hz if config.exclusion_hz is not None else 3.0 * data.rbw_hz
        f_drive = config.drive.omega_d / TWO_PI
        self.mask = np.abs(data.freq_hz - f_drive) > half
        if self.mask.sum() < 3:
            raise ConfigError("exclusion window removes almost all data points")
        self.norm = float(np.sum(data.psd[self.mask] ** 2))
        if self.norm <= 0:
            raise FitError("measured spectrum is identically zero")
        self.evaluations = 0

    def model(self, kappa_in: float, gamma_p: float) -> np.ndarray:
        return model_psd(self.config, kappa_in, gamma_p, self.data.freq_hz, self.data.rbw_hz)

    def _shape(self, m: np.ndarray) -> np.ndarray:
        mm = m[self.mask]
        return np.maximum(mm, 1e-12 * max(float(np.max(mm)), 1e-300))

    def best_scale(self, m: np.ndarray) -> float:
        """Optimal A for a fixed model shape, clipped to its bounds.

        Without a noise floor both objectives are convex quadratics (in A,
        or in 1/A for the relative form) and the clipped optimum is exact.
        With a floor the relative form is minimized numerically in A.
        """
        lo, hi = self.config.bounds["scale"]
        d = self.data.psd[self.mask]
        if self.config.weighting == "uniform":
            mm = m[self.mask]
            den = float(mm @ mm)
            if den == 0:
                return lo
            return float(np.clip(mm @ d / den, lo, hi))
        if self.config.noise_floor > 0:
            res = minimize_scalar(lambda a: self.value(m, a), bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-10})
            return float(res.x)
        z = d / self._shape(m)
        num, den = float(z @ z), float(z.sum())
        if den <= 0:
            return lo
        return float(np.clip(num / den, lo, hi))

    def value(self, m: np.ndarray, scale: float) -> float:
        d = self.data.psd[self.mask]
        if self.config.weighting == "uniform":
            r = scale * m[self.mask] - d
            return float(r @ r) / self.norm
        r = (scale * self._shape(m) - d) / (scale * self._shape(m) + self.config.noise_floor)
        return float(r @ r) / r.size

    def __call__(self, kappa_in: float, gamma_p: float, scale: float | None = None):
        """Return (objective, scale used); +inf if the model cannot be evaluated."""
        self.evaluations += 1
        try:
            m = self.model(kappa_in, gamma_p)
        except (NumericalError, ValueError) as exc:
            log.debug("model failed at kappa_in=%g gamma_p=%g: %s", kappa_in, gamma_p, exc)
            return math.inf, (scale if scale is not None else math.nan)
        if scale is None:
            scale = self.best_scale(m)
        return self.value(m, scale), scale


def objective(candidate, data: MeasuredSpectrum, config: FitConfig) -> float:
    """Objective for an explicit (kappa_in, gamma_p, A) candidate within bounds."""
    x = np.asarray(candidate, dtype=float)
    if np.any(x < config.lower()) or np.any(x > config.upper()):
        raise ValueError("candidate outside the configured bounds")
    return Objective(data, config)(x[0], x[1], x[2])[0]


@dataclass(frozen=True)
class Trial:
    index: int
    kappa_in: float
    gamma_p: float
    scale: float
    objective: float

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.objective)


@dataclass(frozen=True)
class FitResult:
    strategy: str
    kappa_in: float
    gamma_p: float
    scale: float
    objective: float
    history: tuple
    at_bound: dict
    gamma_p_identifiable: bool = True
    seed: int = 0
    elapsed_s: float = 0.0

    @property
    def kappa_in_star(self) -> float:
        return self.kappa_in + 2.0 * self.gamma_p

    @property
    def n_trials(self) -> int:
        return len(self.history)

    def report(self) -> dict:
        """Key-value report; rates in Hz (divided by 2 pi)."""
        out = {
            "strategy": self.strategy,
            "seed": self.seed,
            "kappa_in_hz": self.kappa_in / TWO_PI,
            "gamma_p_hz": self.gamma_p / TWO_PI,
            "scale": self.scale,
            "kappa_in_star_hz": self.kappa_in_star / TWO_PI,
            "objective": self.objective,
            "n_trials": self.n_trials,
            "failed_trials": sum(t.failed for t in self.history),
            "gamma_p_identifiable": self.gamma_p_identifiable,
        }
        for k, v in self.at_bound.items():
            out[f"{k}_at_bound"] = v
        return out

    def write_report(self, path: str | Path) -> None:
        lines = [f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}"
                 for k, v in self.report().items()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def write_history(self, path: str | Path) -> None:
        h = self.history
        write_table(path, {
            "trial": [t.index for t in h],
            "kappa_in_hz": [t.kappa_in / TWO_PI for t in h],
            "gamma_p_hz": [t.gamma_p / TWO_PI for t in h],
            "scale": [t.scale for t in h],
            "objective": [t.objective for t in h],
        }, {"strategy": self.strategy, "seed": self.seed})


# --- sampler ----------------------------------------------------------------

class ParzenSampler:
    """Tree-structured Parzen style sampler on the unit box.

    The first ``n_startup`` points are uniform.  Afterwards the history is
    split into the best ``gamma`` fraction and the rest; each group is
    modelled by a product of truncated Gaussians centred on its points
    (plus a flat prior component), and the candidate with the largest
    density ratio l(x)/g(x) among ``n_candidates`` draws from l is returned.
    """

    def __init__(self, dim: int, rng: np.random.Generator, n_startup: int = 20,
                 n_candidates: int = 24, gamma: float = 0.15, prior_weight: float = 1.0):
        self.dim = dim
        self.rng = rng
        self.n_startup = n_startup
        self.n_candidates = n_candidates
        self.gamma = gamma
        self.prior_weight = prior_weight

    def _bandwidth(self, pts: np.ndarray) -> np.ndarray:
        n = len(pts)
        sd = pts.std(axis=0) if n > 1 else np.full(self.dim, 0.5)
        bw = 1.06 * np.maximum(sd, 1e-3) * n ** (-1.0 / (4 + self.dim))
        return np.clip(bw, 1.0 / min(100, n + 1) / 2, 0.5)

    def _log_density(self, x: np.ndarray, pts: np.ndarray, bw: np.ndarray) -> np.ndarray:
        """log of a mixture: prior (uniform) + truncated Gaussian kernels."""
        a = (0.0 - pts) / bw
        b = (1.0 - pts) / bw
        # per-kernel, per-dimension log pdf, summed across dimensions
        comp = truncnorm.logpdf(x[:, None, :], a[None], b[None], loc=pts[None], scale=bw[None])
        comp = comp.sum(axis=2)
        w = np.full(len(pts), 1.0)
        logs = np.concatenate([np.zeros((len(x), 1)), comp], axis=1)
        weights = np.concatenate([[self.prior_weight], w])
        weights = weights / weights.sum()
        mx = logs.max(axis=1, keepdims=True)
        return (mx[:, 0] + np.log(np.exp(logs - mx) @ weights))

    def _sample_good(self, pts: np.ndarray, bw: np.ndarray, n: int) -> np.ndarray:
        weights = np.concatenate([[self.prior_weight], np.ones(len(pts))])
        weights = weights / weights.sum()
        which = self.rng.choice(len(weights), size=n, p=weights)
        out = np.empty((n, self.dim))
        for k, j in enumerate(which):
            if j == 0:
                out[k] = self.rng.random(self.dim)
            else:
                mu = pts[j - 1]
                a = (0.0 - mu) / bw
                b = (1.0 - mu) / bw
                out[k] = truncnorm.rvs(a, b, loc=mu, scale=bw, random_state=self.rng)
        return out

    def suggest(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        ok = np.isfinite(ys)
        xs, ys = xs[ok], ys[ok]
        if len(xs) < self.n_startup:
            return self.rng.random(self.dim)
        order = np.argsort(ys, kind="stable")
        n_good = max(1, int(math.ceil(self.gamma * len(xs))))
        good, bad = xs[order[:n_good]], xs[order[n_good:]]
        bw_g, bw_b = self._bandwidth(good), self._bandwidth(bad)
        cand = self._sample_good(good, bw_g, self.n_candidates)
        score = self._log_density(cand, good, bw_g) - self._log_density(cand, bad, bw_b)
        return cand[int(np.argmax(score))]


# --- strategies ---------------------------------------------------------------

def _to_unit(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return (x - lo) / (hi - lo)


def _from_unit(u: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return lo + np.clip(u, 0.0, 1.0) * (hi - lo)


def _finish(strategy: str, history: list[Trial], obj: Objective, config: FitConfig,
            t0: float) -> FitResult:
    finite = [t for t in history if not t.failed]
    if not finite:
        raise FitError(f"all {len(history)} trials failed")
    best = min(finite, key=lambda t: (t.objective, t.index))
    lo, hi = config.lower(), config.upper()
    vals = np.array([best.kappa_in, best.gamma_p, best.scale])
    tol = 1e-6 * (hi - lo)
    at_bound = {name: bool(v <= l + t or v >= h - t)
                for name, v, l, h, t in zip(PARAM_NAMES, vals, lo, hi, tol)}
    for name, flag in at_bound.items():
        if flag:
            log.warning("fitted %s sits on its bound", name)
    ident = gamma_p_identifiable(obj, best, config)
    return FitResult(strategy, best.kappa_in, best.gamma_p, best.scale, best.objective,
                     tuple(history), at_bound, ident, config.seed, time.perf_counter() - t0)


def gamma_p_identifiable(obj: Objective, best: Trial, config: FitConfig,
                         threshold: float = 4.0, factor: float = 0.5) -> bool:
    """Whether gamma_p is pinned to within +-``factor`` of its estimate.

    gamma_p is moved to (1 -+ factor) times the best value, clipped to its
    bounds, with kappa_in re-optimized (A is profiled inside the objective),
    so a trade-off along kappa_in + 2 gamma_p is not mistaken for
    sensitivity.  Both moves must raise chi^2 by ``threshold``; an estimate
    on a bound or at zero therefore fails.  The noise variance comes from
    the best-fit residuals.
    """
    lo, hi = config.bounds["gamma_p"]
    k_lo, k_hi = config.bounds["kappa_in"]
    n = int(obj.mask.sum())
    sigma2 = max(best.objective / max(n - 3, 1), 1e-30)
    for g in ((1.0 - factor) * best.gamma_p, (1.0 + factor) * best.gamma_p):
        g = min(max(g, lo), hi)
        if abs(g - best.gamma_p) <= 1e-3 * factor * best.gamma_p:
            return False
        res = minimize_scalar(lambda k: obj(k, g)[0], bounds=(k_lo, k_hi), method="bounded",
                              options={"xatol": 1e-4 * (k_hi - k_lo), "maxiter": 60})
        if (float(res.fun) - best.objective) / sigma2 < threshold:
            return False
    return True


def fit_parzen(data: MeasuredSpectrum, config: FitConfig) -> FitResult:
    """Sequential model-based search over the bounded box with a seeded sampler."""
    t0 = time.perf_counter()
    obj = Objective(data, config)
    rng = np.random.default_rng(config.seed)
    lo, hi = config.lower(), config.upper()
    dim = 2 if config.profile_scale else 3
    sampler = ParzenSampler(dim, rng)
    xs = np.empty((0, dim))
    ys = np.empty(0)
    history: list[Trial] = []
    for k in range(config.n_trials):
        u = sampler.suggest(xs, ys)
        if config.profile_scale:
            p = _from_unit(np.append(u, 0.0), lo, hi)
            val, scale = obj(p[0], p[1])
        else:
            p = _from_unit(u, lo, hi)
            val, scale = obj(p[0], p[1], p[2])
        history.append(Trial(k, float(p[0]), float(p[1]), float(scale), float(val)))
        xs = np.vstack([xs, u])
        ys = np.append(ys, val)
    return _finish("parzen", history, obj, config, t0)


def fit_simplex(data: MeasuredSpectrum, config: FitConfig,
                initial: dict | None = None) -> FitResult:
    """Bounded Nelder-Mead from an initial guess, budget ``config.n_trials`` evaluations."""
    t0 = time.perf_counter()
    obj = Objective(data, config)
    lo, hi = config.lower(), config.upper()
    guess = dict(DEFAULT_GUESS)
    guess.update(initial or {})
    x0 = np.array([guess[k] for k in PARAM_NAMES], dtype=float)
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ConfigError("initial guess lies outside the bounds")
    history: list[Trial] = []

    def f(u):
        if len(history) >= config.n_trials:
            return math.inf
        p = _from_unit(u, lo, hi)
        val, scale = obj(p[0], p[1], p[2])
        history.append(Trial(len(history), float(p[0]), float(p[1]), float(scale), float(val)))
        return val if math.isfinite(val) else 1e300

    u0 = _to_unit(x0, lo, hi)
    # initial simplex: 10 % of the box along each axis, stepping inward
    simplex = [u0]
    for i in range(3):
        v = u0.copy()
        v[i] += 0.1 if v[i] <= 0.9 else -0.1
        simplex.append(v)
    minimize(f, u0, method="Nelder-Mead", bounds=[(0.0, 1.0)] * 3,
             options={"maxfev": config.n_trials, "initial_simplex": np.array(simplex),
                      "xatol": 1e-6, "fatol": 1e-14})
    return _finish("simplex", history, obj, config, t0)


STRATEGIES = {"parzen": fit_parzen, "simplex": fit_simplex}


def fit_spectrum(data: MeasuredSpectrum, config: FitConfig, strategy: str = "parzen",
                 initial: dict | None = None, check: bool = True) -> FitResult:
    """Fit (kappa_in, gamma_p, A) with the chosen strategy.

    With ``check`` the moment truncation is certified at the four rate-bound
    corners before any trial runs.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown fit strategy {strategy!r}; choose from {sorted(STRATEGIES)}")
    if check:
        certify_truncation(config)
    if strategy == "simplex":
        return fit_simplex(data, config, initial)
    return fit_parzen(data, config)


def certify_truncation(config: FitConfig, tol: float = 1e-8) -> None:
    (k0, k1), (g0, g1) = config.bounds["kappa_in"], config.bounds["gamma_p"]
    for ki in (k0, k1):
        for gp in (g0, g1):
            rep = check_truncation(config.params_for(ki, gp), config.drive, config.n_max, tol)
            if not rep.converged:
                raise ConfigError(f"n_max={config.n_max} is not converged at kappa_in={ki:.4g}, "
                                  f"gamma_p={gp:.4g}; use n_max >= {rep.recommended_n_max}")


def synthetic_measurement(config: FitConfig, kappa_in: float, gamma_p: float, scale: float,
                          freq_hz: np.ndarray, rbw_hz: float, noise: float = 0.0,
                          rng: np.random.Generator | None = None,
                          drive_power_dbm: float = math.nan,
                          noise_floor: float = 0.0) -> MeasuredSpectrum:
    """Model trace with Gaussian noise of rms ``noise * (signal + noise_floor)``.

    The floor itself is taken as already subtracted, so only its
    fluctuation remains in the data.
    """
    psd = scale * model_psd(config, kappa_in, gamma_p, np.asarray(freq_hz, float), rbw_hz)
    if noise > 0:
        if rng is None:
            raise ValueError("a random generator is required for noisy data")
        psd = psd + noise * (psd + noise_floor) * rng.standard_normal(psd.size)
    return MeasuredSpectrum(freq_hz, psd, drive_power_dbm, rbw_hz)


def overlay_table(result: FitResult, data: MeasuredSpectrum, config: FitConfig) -> dict:
    obj = Objective(data, config)
    model = result.scale * obj.model(result.kappa_in, result.gamma_p)
    return {
        "freq_hz": data.freq_hz,
        "data_dbm_per_hz": watts_to_dbm(data.psd),
        "model_dbm_per_hz": watts_to_dbm(np.maximum(model, 1e-300)),
        "included": obj.mask.astype(int),
    }


def with_budget(config: FitConfig, n_trials: int) -> FitConfig:
    return replace(config, n_trials=n_trials)

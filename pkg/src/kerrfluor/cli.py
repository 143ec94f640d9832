"""Command-line interface: ``kerrfluor <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 fit failure.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .csvio import write_table
from .errors import ConfigError, FitError, NumericalError
from .model import (TWO_PI, DriveField, FrequencyGrid, SystemParams, benchmark_params,
                    device_params, drive_from_config, format_config, load_config,
                    params_from_config, power_from_amplitude)

log = logging.getLogger("kerrfluor")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_FIT = 0, 2, 3, 4
FIGURES = ("fig2a", "fig2b", "fig2c", "fig3", "fig4")


# --- run configuration ---------------------------------------------------------

class RunConfig:
    """Resolved parameters for one invocation (config file, then flag overrides)."""

    def __init__(self, args: argparse.Namespace, default_params: SystemParams,
                 default_n_max: int = 20):
        cfg = load_config(args.config) if args.config else {}
        self.file_keys = cfg
        self.params = params_from_config(cfg) if cfg else default_params
        if args.power_dbm is not None and args.f_over_sqrt_kex is not None:
            raise ConfigError("--power-dbm and --f-over-sqrt-kex are mutually exclusive")
        if args.power_dbm is not None or args.f_over_sqrt_kex is not None:
            cfg = {k: v for k, v in cfg.items()
                   if k not in ("drive_power_dbm", "f_over_sqrt_kex", "drive_amplitude_re",
                                "drive_amplitude_im")}
            if args.power_dbm is not None:
                cfg["drive_power_dbm"] = args.power_dbm
            else:
                cfg["f_over_sqrt_kex"] = args.f_over_sqrt_kex
        self.drive = drive_from_config(cfg, self.params)
        self.f_value = cfg.get("f_over_sqrt_kex")
        self.n_max = _pick(args.nmax, cfg.get("n_max"), default_n_max)
        self.grid_points = _pick(args.grid_points, cfg.get("grid_points"), 1001)
        self.grid_span_mhz = _pick(args.grid_span_mhz, cfg.get("grid_span_mhz"), None)
        self.rbw_hz = _pick(args.rbw_hz, cfg.get("rbw_hz"), None)
        self.seed = _pick(args.seed, cfg.get("seed"), 0)
        if self.n_max < 1:
            raise ConfigError("n_max must be >= 1")
        if self.grid_points < 2:
            raise ConfigError("grid_points must be >= 2")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)

    def grid(self, span_mhz: float | None = None) -> FrequencyGrid:
        span = span_mhz if span_mhz is not None else self.grid_span_mhz
        if span is None:
            p, d = self.params, self.drive
            rabi = 2.0 * math.sqrt(p.kappa_ex) * abs(d.amplitude_f)
            half = max(3.0 * rabi, 10.0 * p.kappa)
        else:
            if span <= 0:
                raise ConfigError("grid span must be positive")
            half = TWO_PI * span * 1e6
        return FrequencyGrid.centered(self.drive.omega_d, half, self.grid_points)

    def header(self, command: str, **extra) -> dict:
        """Metadata sufficient to re-run the command: version, command, seed and config."""
        h = {"tool": f"kerrfluor {__version__}", "command": command, "seed": self.seed}
        settings = {"n_max": self.n_max, "grid_points": self.grid_points, "seed": self.seed}
        if self.grid_span_mhz is not None:
            settings["grid_span_mhz"] = self.grid_span_mhz
        if self.rbw_hz is not None:
            settings["rbw_hz"] = self.rbw_hz
        h.update(config_header(self.params, self.drive, **settings))
        if self.drive.amplitude_f != 0:
            h["drive_power_dbm"] = power_from_amplitude(self.drive.amplitude_f, self.drive.omega_d)
        h.update(extra)
        return h


def _pick(flag, cfg_value, default):
    if flag is not None:
        return flag
    if cfg_value is not None:
        return cfg_value
    return default


def config_header(params: SystemParams, drive: DriveField, **extra) -> dict:
    """``cfg.*`` metadata entries that re-parse to bit-identical parameters."""
    out = {}
    for line in format_config(params, drive, exact=True, **extra).splitlines():
        k, _, v = line.partition(" = ")
        out[f"cfg.{k}"] = v
    return out


def config_from_header(meta: dict) -> dict:
    """Re-parse the ``cfg.*`` metadata lines of an output CSV into a config dict."""
    from .model import parse_config_text
    text = "\n".join(f"{k[4:]} = {v}" for k, v in meta.items() if k.startswith("cfg."))
    return parse_config_text(text)


def _sweep_values(spec: str) -> np.ndarray:
    """``start:stop:num`` (inclusive linspace) or a comma-separated list."""
    try:
        if ":" in spec:
            a, b, n = spec.split(":")
            return np.linspace(float(a), float(b), int(n))
        return np.array([float(x) for x in spec.split(",")])
    except ValueError as exc:
        raise ConfigError(f"bad sweep specification {spec!r}") from exc


# --- subcommands ------------------------------------------------------------------

def cmd_spectrum(args) -> int:
    from .moments import solve_steady_moments
    from .spectrum import convolve_resolution, incoherent_spectrum

    rc = RunConfig(args, benchmark_params())
    mom = solve_steady_moments(rc.params, rc.drive, rc.n_max, check=True)
    series = incoherent_spectrum(rc.params, rc.drive, rc.grid(), rc.n_max, mom)
    if rc.rbw_hz:
        series = convolve_resolution(series, rc.rbw_hz)
    header = rc.header("spectrum", converged=mom.converged)
    series.to_csv(rc.out / "spectrum.csv", header)
    mom.to_csv(rc.out / "moments.csv", rc.header("spectrum"))
    print(f"wrote {rc.out / 'spectrum.csv'} (coherent weight {series.coherent_weight:.6g} /s)")
    return EXIT_OK


def cmd_tls_spectrum(args) -> int:
    from .spectrum import convolve_resolution
    from .tls import tls_incoherent_spectrum

    rc = RunConfig(args, benchmark_params())
    series = tls_incoherent_spectrum(rc.params, rc.drive, rc.grid())
    if rc.rbw_hz:
        series = convolve_resolution(series, rc.rbw_hz)
    series.to_csv(rc.out / "tls_spectrum.csv", rc.header("tls-spectrum"))
    print(f"wrote {rc.out / 'tls_spectrum.csv'}")
    return EXIT_OK


def _drive_sweep(rc: RunConfig, spec: str | None) -> list[tuple[float, DriveField]]:
    if spec is None:
        f = rc.f_value if rc.f_value is not None else \
            abs(rc.drive.amplitude_f) / math.sqrt(rc.params.kappa_ex)
        return [(f, rc.drive)]
    return [(float(f), DriveField.from_normalized(float(f), rc.params, rc.drive.omega_d))
            for f in _sweep_values(spec)]


def dressed_rows(params: SystemParams, sweep, n_fock: int, i_max: int) -> dict:
    from .dressed import track_sweep, transition_table

    bases = track_sweep(params, [d for _, d in sweep], n_fock)
    rows = {"f_over_sqrt_kex": [], "quantity": [], "value": []}
    for (f, _), basis in zip(sweep, bases):
        for t in transition_table(basis, i_max):
            if t.i == t.j:
                continue
            for q, v in ((f"freq_{t.i}_{t.j}_mhz", t.frequency / TWO_PI / 1e6),
                         (f"me_{t.i}_{t.j}", t.matrix_element)):
                rows["f_over_sqrt_kex"].append(f)
                rows["quantity"].append(q)
                rows["value"].append(v)
    return rows


def population_rows(params: SystemParams, sweep, n_max: int, i_max: int,
                    estimates: bool) -> dict:
    from .dressed import dressed_density_matrix, peak_intensity_estimates, track_sweep
    from .moments import solve_steady_moments

    bases = track_sweep(params, [d for _, d in sweep], n_max)
    rows = {"f_over_sqrt_kex": [], "quantity": [], "value": []}

    def add(f, q, v):
        rows["f_over_sqrt_kex"].append(f)
        rows["quantity"].append(q)
        rows["value"].append(v)

    for (f, d), basis in zip(sweep, bases):
        mom = solve_steady_moments(params, d, n_max)
        rho = dressed_density_matrix(mom, basis)
        est = peak_intensity_estimates(rho, basis, mom, i_max)
        if estimates:
            for (i, j), v in sorted(est.sidebands.items()):
                add(f, f"est_{i}_{j}", v)
            add(f, "center", est.center)
        else:
            for i, p in enumerate(rho.populations[:i_max + 1]):
                add(f, f"P_{i}", float(p))
            add(f, "trace", rho.trace)
        add(f, "rho01_abs", est.coherence_01)
        add(f, "unreliable", int(est.unreliable))
    return rows


def cmd_dressed(args) -> int:
    rc = RunConfig(args, benchmark_params())
    rows = dressed_rows(rc.params, _drive_sweep(rc, args.sweep), rc.n_max, args.i_max)
    write_table(rc.out / "dressed.csv", rows, rc.header("dressed", sweep=args.sweep or "single"))
    print(f"wrote {rc.out / 'dressed.csv'}")
    return EXIT_OK


def cmd_populations(args) -> int:
    rc = RunConfig(args, benchmark_params())
    rows = population_rows(rc.params, _drive_sweep(rc, args.sweep), rc.n_max, args.i_max, False)
    write_table(rc.out / "populations.csv", rows,
                rc.header("populations", sweep=args.sweep or "single"))
    print(f"wrote {rc.out / 'populations.csv'}")
    return EXIT_OK


def cmd_peaks(args) -> int:
    rc = RunConfig(args, benchmark_params())
    rows = population_rows(rc.params, _drive_sweep(rc, args.sweep), rc.n_max, args.i_max, True)
    write_table(rc.out / "peaks.csv", rows, rc.header("peaks", sweep=args.sweep or "single"))
    print(f"wrote {rc.out / 'peaks.csv'}")
    return EXIT_OK


def cmd_reflection(args) -> int:
    from .reflection import (ReflectionTrace, fit_linear_reflection, linear_reflection,
                             power_sweep)

    rc = RunConfig(args, device_params())
    p = rc.params
    if args.input:
        fit = fit_linear_reflection(ReflectionTrace.from_csv(args.input))
        lines = [f"{k} = {v!r}" for k, v in fit.report().items()]
        (rc.out / "reflection_fit.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        print("\n".join(lines))
    else:
        span = rc.grid_span_mhz if rc.grid_span_mhz is not None else 5 * p.kappa / TWO_PI / 1e6
        w = FrequencyGrid.centered(p.omega0, TWO_PI * span * 1e6, rc.grid_points).points
        trace = ReflectionTrace(w, linear_reflection(w, p.omega0, p.kappa_ex, p.kappa_in_star))
        trace.to_csv(rc.out / "reflection.csv", rc.header("reflection"))
        print(f"wrote {rc.out / 'reflection.csv'}")
    if args.power_sweep:
        powers = _sweep_values(args.power_sweep)
        g = power_sweep(p, powers, None, rc.n_max)
        write_table(rc.out / "power_sweep.csv",
                    {"power_dbm": powers, "abs_gamma": np.abs(g), "re_gamma": g.real,
                     "im_gamma": g.imag},
                    rc.header("reflection --power-sweep", power_sweep=args.power_sweep))
        print(f"wrote {rc.out / 'power_sweep.csv'}")
    return EXIT_OK


def cmd_fit(args) -> int:
    from .fit import (FitConfig, MeasuredSpectrum, fit_spectrum, overlay_table,
                      synthetic_measurement)

    rc = RunConfig(args, device_params(), default_n_max=12)
    data = None
    drive = rc.drive
    if args.input:
        data = MeasuredSpectrum.from_csv(args.input, rbw_hz=rc.rbw_hz,
                                         drive_power_dbm=args.power_dbm)
        if args.f_over_sqrt_kex is None:
            drive = DriveField.from_power(data.drive_power_dbm, rc.drive.omega_d)
    if drive.amplitude_f == 0:
        raise ConfigError("fit needs a non-zero drive (--power-dbm or config)")
    cfg = FitConfig(rc.params, drive, n_trials=args.trials, seed=rc.seed, n_max=rc.n_max,
                    exclusion_hz=args.exclusion_hz, weighting=args.weighting,
                    noise_floor=args.noise_floor)
    if data is not None:
        pass
    elif args.synthetic_noise is not None:
        rbw = rc.rbw_hz or 10e3
        span = rc.grid_span_mhz if rc.grid_span_mhz is not None else 25.0
        f = rc.drive.omega_d / TWO_PI + np.linspace(-span * 1e6, span * 1e6, rc.grid_points)
        rng = np.random.default_rng(rc.seed)
        data = synthetic_measurement(cfg, rc.params.kappa_in, rc.params.gamma_p,
                                     args.synthetic_scale, f, rbw, args.synthetic_noise, rng,
                                     power_from_amplitude(drive.amplitude_f, drive.omega_d),
                                     args.noise_floor)
        data.to_csv(rc.out / "synthetic_data.csv", rc.header("fit --synthetic-noise",
                                                             synthetic_scale=args.synthetic_scale))
    else:
        raise ConfigError("fit needs --input or --synthetic-noise")
    result = fit_spectrum(data, cfg, args.strategy)
    result.write_report(rc.out / "fit_report.txt")
    result.write_history(rc.out / "fit_history.csv")
    write_table(rc.out / "fit_overlay.csv", overlay_table(result, data, cfg),
                rc.header("fit", strategy=args.strategy))
    print((rc.out / "fit_report.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    from .oracle import equivalence_suite

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_max = args.nmax if args.nmax is not None else 20
    results = equivalence_suite(n_max=n_max, n_fock=min(n_max, 30),
                                grid_points=args.grid_points or 1001,
                                span_mhz=args.grid_span_mhz or 60.0)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<32} deviation {r.deviation:.3e}"
              f"  (threshold {r.threshold:.0e})")
    write_table(out / "oracle_check.csv",
                {"check": [r.name for r in results],
                 "deviation": [float(r.deviation) for r in results],
                 "threshold": [r.threshold for r in results],
                 "passed": [int(r.passed) for r in results]},
                {"tool": f"kerrfluor {__version__}", "command": "oracle-check", "n_max": n_max})
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


def cmd_figure(args) -> int:
    from .spectrum import incoherent_spectrum
    from .tls import tls_incoherent_spectrum

    out = Path(args.out) / args.name
    out.mkdir(parents=True, exist_ok=True)
    n_max = args.nmax if args.nmax is not None else 20
    points = args.grid_points or 1001
    span = args.grid_span_mhz or 60.0
    f_values = _sweep_values(args.sweep) if args.sweep else np.arange(1.0, 11.0)

    def header(params, drive, **extra):
        h = {"tool": f"kerrfluor {__version__}", "command": f"figure {args.name}"}
        h.update(config_header(params, drive, n_max=n_max, grid_points=points,
                               grid_span_mhz=span))
        h.update(extra)
        return h

    if args.name in ("fig2a", "fig2b", "fig2c"):
        params = benchmark_params(kerr_mhz=-20.0 if args.name == "fig2c" else -200.0)
        grid = FrequencyGrid.centered(params.omega0, TWO_PI * span * 1e6, points)
        for f in f_values:
            drive = DriveField.from_normalized(float(f), params)
            if args.name == "fig2a":
                series = tls_incoherent_spectrum(params, drive, grid)
            else:
                series = incoherent_spectrum(params, drive, grid, n_max)
            series.to_csv(out / f"spectrum_f{f:g}.csv", header(params, drive))
    elif args.name == "fig3":
        params = benchmark_params()
        sweep_f = _sweep_values(args.sweep) if args.sweep else np.linspace(0.0, 12.0, 121)
        sweep = [(float(f), DriveField.from_normalized(float(f), params)) for f in sweep_f]
        write_table(out / "transitions.csv", dressed_rows(params, sweep, n_max, 3),
                    header(params, sweep[0][1], sweep=args.sweep or "0:12:121"))
        grid = FrequencyGrid.centered(params.omega0, TWO_PI * span * 1e6, points)
        for f in (2.0, 6.0, 10.0):
            drive = DriveField.from_normalized(f, params)
            incoherent_spectrum(params, drive, grid, n_max).to_csv(
                out / f"spectrum_f{f:g}.csv", header(params, drive))
    elif args.name == "fig4":
        sweep_f = _sweep_values(args.sweep) if args.sweep else np.linspace(0.5, 10.0, 20)
        for gp, tag in ((0.0, "gp0"), (0.1, "gp0.1")):
            params = benchmark_params(gamma_p_mhz=gp)
            sweep = [(float(f), DriveField.from_normalized(float(f), params)) for f in sweep_f]
            h = header(params, sweep[0][1], sweep=args.sweep or "0.5:10:20")
            write_table(out / f"populations_{tag}.csv",
                        population_rows(params, sweep, n_max, 3, False), h)
            write_table(out / f"peaks_{tag}.csv", population_rows(params, sweep, n_max, 3, True), h)
        write_table(out / "matrix_elements.csv",
                    dressed_rows(benchmark_params(), [(float(f), DriveField.from_normalized(
                        float(f), benchmark_params())) for f in sweep_f], n_max, 3),
                    header(benchmark_params(), DriveField.from_normalized(0.0, benchmark_params())))
    print(f"wrote {out}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="key = value parameter file")
    common.add_argument("--out", type=str, default=".", help="output directory")
    common.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
    common.add_argument("--nmax", type=int, help="moment truncation order")
    common.add_argument("--grid-span-mhz", type=float, help="half-span of the frequency grid (MHz)")
    common.add_argument("--grid-points", type=int, help="number of grid points")
    drive = common.add_mutually_exclusive_group()
    drive.add_argument("--power-dbm", type=float, help="drive power at the chip (dBm)")
    drive.add_argument("--f-over-sqrt-kex", type=float, help="drive amplitude F / sqrt(kappa_ex)")
    common.add_argument("--rbw-hz", type=float, help="analyzer resolution bandwidth (Hz)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="kerrfluor", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kerrfluor {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", parents=[common], help="incoherent spectrum and coherent weight")
    p.set_defaults(func=cmd_spectrum)
    p = sub.add_parser("tls-spectrum", parents=[common], help="two-level closed-form spectrum")
    p.set_defaults(func=cmd_tls_spectrum)
    for name, func, helptext in (("dressed", cmd_dressed, "dressed transition table"),
                                 ("populations", cmd_populations, "dressed-state populations"),
                                 ("peaks", cmd_peaks, "dressed-state peak-intensity estimates")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--sweep", type=str, help="F/sqrt(kappa_ex) values: start:stop:num or a,b,c")
        p.add_argument("--i-max", type=int, default=3, help="highest dressed index reported")
        p.set_defaults(func=func)
    p = sub.add_parser("reflection", parents=[common], help="reflection trace, fit or power sweep")
    p.add_argument("--input", type=str, help="trace CSV (freq_hz, re_gamma, im_gamma) to fit")
    p.add_argument("--power-sweep", type=str, help="probe powers in dBm: start:stop:num or list")
    p.set_defaults(func=cmd_reflection)
    p = sub.add_parser("fit", parents=[common], help="fit kappa_in, gamma_p and scale")
    p.add_argument("--input", type=str, help="spectrum CSV (freq_hz, psd_dbm_per_hz)")
    p.add_argument("--synthetic-noise", type=float,
                   help="instead of --input, fit model data with this relative noise")
    p.add_argument("--synthetic-scale", type=float, default=1.0)
    p.add_argument("--strategy", choices=("parzen", "simplex"), default="parzen")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--weighting", choices=("relative", "uniform"), default="relative")
    p.add_argument("--noise-floor", type=float, default=0.0, help="analyzer floor (W/Hz)")
    p.add_argument("--exclusion-hz", type=float, help="half-width dropped around the drive")
    p.set_defaults(func=cmd_fit)
    p = sub.add_parser("oracle-check", parents=[common], help="cross-check against the Lindblad path")
    p.set_defaults(func=cmd_oracle_check)
    p = sub.add_parser("figure", parents=[common], help="regenerate a CSV bundle")
    p.add_argument("name", choices=FIGURES)
    p.add_argument("--sweep", type=str, help="override the drive sweep")
    p.set_defaults(func=cmd_figure)
    return parser


def _failing_module(exc: BaseException) -> str:
    pkg = Path(__file__).parent
    name = "cli"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        path = Path(frame.f_code.co_filename)
        if path.parent == pkg:
            name = path.stem
    return name


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FitError, NumericalError, np.linalg.LinAlgError,
            ValueError, OSError) as exc:
        if isinstance(exc, FitError):
            code = EXIT_FIT
        elif isinstance(exc, (NumericalError, np.linalg.LinAlgError)):
            code = EXIT_NUMERICAL
        else:
            code = EXIT_CONFIG
        print(f"kerrfluor: error in {_failing_module(exc)}: {exc}", file=sys.stderr)
        return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kerrfluor.errors import ConfigError
from kerrfluor.model import (TWO_PI, DriveField, FrequencyGrid, MomentIndex, SystemParams,
                             amplitude_from_power, benchmark_params, drive_from_config, epsilon,
                             epsilon_detuned, epsilon_detuned_grid, format_config,
                             parse_config_text, params_from_config, power_from_amplitude)


def test_amplitude_from_power_reference_value():
    f = amplitude_from_power(-112.8, TWO_PI * 10.3653e9)
    assert abs(f) ** 2 == pytest.approx(7.64e8, rel=2e-3)
    assert abs(f) == pytest.approx(2.76e4, rel=2e-3)
    assert f.imag == 0 and f.real > 0


def test_zero_power_limit():
    assert amplitude_from_power(-math.inf, TWO_PI * 1e9) == 0
    assert power_from_amplitude(0.0, TWO_PI * 1e9) == -math.inf


def test_power_roundtrip():
    w = TWO_PI * 10.3653e9
    assert power_from_amplitude(amplitude_from_power(-140.0, w), w) == pytest.approx(-140.0, rel=1e-12)


@given(st.floats(-200, 0), st.floats(1e8, 1e11))
def test_power_roundtrip_property(p, f_hz):
    w = TWO_PI * f_hz
    assert power_from_amplitude(amplitude_from_power(p, w), w) == pytest.approx(p, rel=1e-12, abs=1e-10)


@pytest.mark.parametrize("bad", [math.nan, math.inf])
def test_power_rejects_nonfinite(bad):
    with pytest.raises(ValueError):
        amplitude_from_power(bad, TWO_PI * 1e9)


def test_epsilon_examples():
    p = SystemParams(TWO_PI * 10e9, 0.0, TWO_PI * 0.5e6, TWO_PI * 0.5e6, TWO_PI * 0.1e6)
    assert epsilon(0, 0, p) == 0
    e10 = epsilon(1, 0, p)
    assert e10.imag == pytest.approx(p.omega0, rel=1e-15)
    assert e10.real == pytest.approx(-TWO_PI * 0.6e6, rel=1e-12)
    e11 = epsilon(1, 1, benchmark_params())
    assert e11.imag == 0
    assert e11.real == pytest.approx(-TWO_PI * 1.0e6, rel=1e-12)


@given(st.integers(0, 12), st.integers(0, 12))
def test_epsilon_conjugate_symmetry(m, n):
    p = benchmark_params()
    assert epsilon(m, n, p) == pytest.approx(np.conj(epsilon(n, m, p)), rel=1e-14, abs=1e-6)


def test_epsilon_detuned_matches_definition():
    p = benchmark_params()
    wd = p.omega0 + TWO_PI * 3e6
    for m, n in ((1, 0), (3, 1), (0, 4), (2, 2)):
        ref = epsilon(m, n, p) - 1j * (m - n) * wd
        assert epsilon_detuned(m, n, p, wd) == pytest.approx(ref, rel=1e-6)
    idx = MomentIndex(5)
    grid = epsilon_detuned_grid(idx, p, wd)
    for k in range(idx.dim):
        assert grid[k] == pytest.approx(epsilon_detuned(*idx.unflat(k), p, wd), rel=1e-14)


def test_epsilon_rejects_negative_indices():
    with pytest.raises(ValueError):
        epsilon(-1, 0, benchmark_params())


@pytest.mark.parametrize("kw", [dict(kappa_ex=0.0), dict(kappa_in=-1.0), dict(gamma_p=-1.0),
                                dict(omega0=-1.0), dict(kerr=math.nan)])
def test_params_validation(kw):
    base = dict(omega0=1e10, kerr=-1e8, kappa_ex=1e6, kappa_in=1e6, gamma_p=0.0)
    base.update(kw)
    with pytest.raises(ValueError):
        SystemParams(**base)


def test_derived_rates():
    p = benchmark_params()
    assert p.kappa == pytest.approx(TWO_PI * 1.2e6)
    assert p.kappa_loss == pytest.approx(TWO_PI * 1.0e6)
    assert p.kappa_in_star == pytest.approx(TWO_PI * 0.7e6)


def test_moment_index_roundtrip():
    idx = MomentIndex(4)
    assert idx.dim == 25
    for k in range(idx.dim):
        assert idx.flat(*idx.unflat(k)) == k
    with pytest.raises(IndexError):
        idx.flat(5, 0)


def test_frequency_grid():
    g = FrequencyGrid.centered(TWO_PI * 1e9, TWO_PI * 1e6, 11)
    assert len(g) == 11
    assert g.step() == pytest.approx(TWO_PI * 0.2e6)
    assert FrequencyGrid.from_hz(g.hz).points == pytest.approx(g.points)
    with pytest.raises(ValueError):
        FrequencyGrid(np.array([1.0, 1.0, 2.0]))


def test_config_parse_units_and_roundtrip():
    text = """
    # resonator
    omega0_ghz = 10.0
    kerr_mhz = -20
    kappa_ex_khz = 500
    kappa_in_hz = 5e5
    gamma_p_mhz = 0.1
    f_over_sqrt_kex = 5
    n_max = 16
    """
    cfg = parse_config_text(text)
    p = params_from_config(cfg)
    ref = benchmark_params()
    for name in ("omega0", "kerr", "kappa_ex", "kappa_in", "gamma_p"):
        assert getattr(p, name) == pytest.approx(getattr(ref, name), rel=1e-15)
    d = drive_from_config(cfg, p)
    again = parse_config_text(format_config(p, d, n_max=16))
    p2 = params_from_config(again)
    for name in ("omega0", "kerr", "kappa_ex", "kappa_in", "gamma_p"):
        assert getattr(p2, name) == pytest.approx(getattr(p, name), rel=1e-15)
    d2 = drive_from_config(again, p2)
    assert d2.omega_d == pytest.approx(d.omega_d, rel=1e-15)
    assert d2.amplitude_f == pytest.approx(d.amplitude_f, rel=1e-14)
    assert again["n_max"] == 16


@pytest.mark.parametrize("text", ["omega0_ghz 10", "bogus = 1", "kerr_mhz = abc",
                                  "kerr_mhz = 1\nkerr_hz = 2", "n_max = 1.5", "kerr_mhz = nan",
                                  "kerr_mhz ="])
def test_config_errors(text):
    """Malformed or ambiguous config text is rejected."""
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_config_missing_and_conflicting_keys():
    with pytest.raises(ConfigError):
        params_from_config(parse_config_text("omega0_ghz = 10"))
    cfg = parse_config_text("drive_power_dbm = -120\nf_over_sqrt_kex = 1")
    with pytest.raises(ConfigError):
        drive_from_config(cfg, benchmark_params())


def test_exact_config_roundtrip_is_bitwise(rng):
    for _ in range(20):
        p = SystemParams(*(rng.uniform(1, 2, 5) * [6e10, -1e8, 3e6, 3e6, 1e6]))
        d = DriveField(p.omega0 * rng.uniform(0.99, 1.01), complex(*rng.standard_normal(2)) * 1e4)
        cfg = parse_config_text(format_config(p, d, exact=True))
        assert params_from_config(cfg) == p
        assert drive_from_config(cfg, p) == d


def test_three_way_drive_exclusivity():
    cfg = parse_config_text("f_over_sqrt_kex = 1\ndrive_amplitude_re = 2.0")
    with pytest.raises(ConfigError):
        drive_from_config(cfg, benchmark_params())


def test_drive_from_power_and_normalized():
    p = benchmark_params()
    d = DriveField.from_normalized(3.0, p)
    assert d.omega_d == p.omega0
    assert abs(d.amplitude_f) == pytest.approx(3.0 * math.sqrt(p.kappa_ex))
    assert d.photon_rate == pytest.approx(9.0 * p.kappa_ex)
    with pytest.raises(ValueError):
        DriveField(-1.0, 1.0)

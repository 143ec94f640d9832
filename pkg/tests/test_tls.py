import math

import numpy as np
import pytest
from scipy.signal import find_peaks

from kerrfluor.model import TWO_PI, FrequencyGrid, SystemParams, benchmark_params
from kerrfluor.spectrum import incoherent_spectrum
from kerrfluor.tls import (mollow_sideband_offset, tls_coherent_power, tls_incoherent_spectrum,
                           tls_steady_state)

from conftest import drive_at


def radiative(kappa_in=0.5e6):
    return SystemParams(TWO_PI * 10e9, -TWO_PI * 200e6, TWO_PI * 0.5e6, TWO_PI * kappa_in, 0.0)


def test_undriven_steady_state(bench):
    ss = tls_steady_state(bench, drive_at(bench, 0.0))
    assert ss.sigma_s == 0 and ss.excitation_s == 0
    s = tls_incoherent_spectrum(bench, drive_at(bench, 0.0),
                                FrequencyGrid.centered(bench.omega0, 1e8, 51))
    assert np.all(s.values == 0)
    assert tls_coherent_power(bench, drive_at(bench, 0.0)) == 0


def test_saturation(bench):
    d = drive_at(bench, 1e4)
    ss = tls_steady_state(bench, d)
    assert ss.excitation_s == pytest.approx(0.5, rel=1e-6)
    assert tls_coherent_power(bench, d) == pytest.approx(abs(d.amplitude_f) ** 2, rel=1e-6)


def test_excitation_closed_form_without_dephasing():
    p = radiative()
    for f in (0.3, 2.0, 7.0):
        d = drive_at(p, f)
        k = p.kappa_ex + p.kappa_in
        ref = p.kappa_ex * abs(d.amplitude_f) ** 2 / (2 * p.kappa_ex * abs(d.amplitude_f) ** 2
                                                     + k * k / 4)
        assert tls_steady_state(p, d).excitation_s == pytest.approx(ref, rel=1e-14)


def test_weak_drive_lossless_reflection():
    p = radiative(kappa_in=0.0)
    d = drive_at(p, 1e-4)
    assert tls_coherent_power(p, d) == pytest.approx(abs(d.amplitude_f) ** 2, rel=1e-6)


def test_mollow_limit():
    p = radiative()
    d = drive_at(p, 100.0)
    rabi = mollow_sideband_offset(p, d)
    assert rabi == pytest.approx(2 * math.sqrt(p.kappa_ex) * abs(d.amplitude_f))
    assert rabi >= 100 * p.kappa
    g = FrequencyGrid.centered(p.omega0, 1.5 * rabi, 20001)
    s = tls_incoherent_spectrum(p, d, g).values
    pk, _ = find_peaks(s, height=0.05 * s.max())
    assert len(pk) == 3
    offsets = g.points[pk] - d.omega_d
    assert abs(offsets[0] + rabi) <= g.step()
    assert abs(offsets[2] - rabi) <= g.step()
    assert s[pk[1]] / s[pk[0]] == pytest.approx(3.0, rel=0.01)
    assert s[pk[1]] / s[pk[2]] == pytest.approx(3.0, rel=0.01)


def test_matches_kerr_engine_in_strong_nonlinearity():
    p = benchmark_params(kerr_mhz=-200.0)
    g = FrequencyGrid.centered(p.omega0, TWO_PI * 60e6, 1001)
    for f in (1.0, 5.0, 10.0):
        d = drive_at(p, f)
        a = tls_incoherent_spectrum(p, d, g).values
        b = incoherent_spectrum(p, d, g).values
        assert np.abs(a - b).max() <= 0.05 * a.max()
        pa, _ = find_peaks(a, height=0.05 * a.max())
        pb, _ = find_peaks(b, height=0.05 * b.max())
        assert len(pa) == len(pb)
        assert np.abs(g.points[pa] - g.points[pb]).max() <= g.step()


def test_total_rate_matches_integral(bench):
    p = benchmark_params(kerr_mhz=-200.0)
    d = drive_at(p, 3.0)
    g = FrequencyGrid.centered(p.omega0, 200 * p.kappa, 8001)
    s = tls_incoherent_spectrum(p, d, g)
    ss = tls_steady_state(p, d)
    assert s.integral() == pytest.approx(p.kappa_ex * ss.connected_excitation, rel=0.01)

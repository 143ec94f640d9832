import math

import numpy as np
import pytest

from kerrfluor.errors import FitError, TruncationError
from kerrfluor.model import TWO_PI, DriveField, SystemParams, device_params
from kerrfluor.reflection import (ReflectionTrace, calibrate_attenuation, fit_linear_reflection,
                                  linear_reflection, nonlinear_reflection, power_sweep,
                                  synthetic_trace)

W0 = TWO_PI * 10.3653e9
KEX = TWO_PI * 0.260e6
KIN = TWO_PI * 0.053e6


def probe_grid(points=2001, span_mhz=2.0):
    return W0 + TWO_PI * np.linspace(-span_mhz, span_mhz, points) * 1e6


def test_linear_limits():
    assert linear_reflection(W0 + 1e4 * KEX, W0, KEX, KIN) == pytest.approx(1.0, abs=1e-3)
    assert linear_reflection(W0, W0, KEX, KIN).real == pytest.approx(1 - 2 * 0.260 / 0.313, rel=1e-12)
    assert linear_reflection(W0, W0, KEX, KIN).real == pytest.approx(-0.661, abs=5e-4)
    assert abs(linear_reflection(W0, W0, KEX, KEX)) <= 1e-15
    g = linear_reflection(probe_grid(), W0, KEX, KIN)
    assert np.abs(g).max() <= 1 + 1e-12
    assert g.real.min() < -0.6


def test_linear_rejects_negative_rates():
    with pytest.raises(ValueError):
        linear_reflection(W0, W0, -1.0, KIN)


@pytest.mark.parametrize("detuning_khz", [0.0, 80.0, -150.0])
def test_weak_probe_matches_linear_model(detuning_khz):
    p = device_params()
    wp = p.omega0 + TWO_PI * detuning_khz * 1e3
    probe = DriveField.from_normalized(1e-4, p, wp)
    ref = linear_reflection(wp, p.omega0, p.kappa_ex, p.kappa_in_star)
    assert abs(nonlinear_reflection(p, probe) - ref) <= 1e-6


def test_linear_resonator_is_power_independent():
    p = SystemParams(W0, 0.0, KEX, KIN, 0.0)
    ref = (KIN - KEX) / (KIN + KEX)
    for f in (1e-3, 1.0, 20.0):
        g = nonlinear_reflection(p, DriveField.from_normalized(f, p))
        assert g == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_dip_shallows_with_power():
    p = device_params()
    g = np.abs(power_sweep(p, np.linspace(-150.0, -120.0, 7)))
    assert np.all(np.diff(g) > 0)
    assert g[-1] < 1.0
    assert g[0] < g[-1]


def test_nonlinear_errors():
    p = device_params()
    with pytest.raises(ValueError):
        nonlinear_reflection(p, DriveField(p.omega0, 0.0))
    with pytest.raises(TruncationError):
        nonlinear_reflection(p, DriveField.from_power(-100.0, p.omega0), n_max=4)


def test_attenuation_calibration_recovers_offset():
    p = device_params()
    att = -63.4
    src = np.linspace(-85.0, -60.0, 6)
    measured = np.abs(power_sweep(p, src + att))
    est = calibrate_attenuation(p, src, measured, (-75.0, -50.0))
    assert est == pytest.approx(att, abs=0.05)


def test_noiseless_fit_is_exact():
    w = probe_grid(801)
    fit = fit_linear_reflection(synthetic_trace(w, W0, KEX, KIN))
    assert fit.omega0 == pytest.approx(W0, rel=1e-12)
    assert fit.kappa_ex == pytest.approx(KEX, rel=1e-6)
    assert fit.kappa_in_star == pytest.approx(KIN, rel=1e-6)


def test_fit_removes_cable_background():
    w = probe_grid(1201)
    bg = 0.4 * np.exp(1j * 0.7)
    tau = 2.5e-7
    ref = float(np.mean(w))
    g = bg * np.exp(1j * tau * (w - ref)) * linear_reflection(w, W0, KEX, KIN)
    fit = fit_linear_reflection(ReflectionTrace(w, g))
    assert fit.kappa_ex == pytest.approx(KEX, rel=1e-6)
    assert fit.kappa_in_star == pytest.approx(KIN, rel=1e-6)
    assert fit.delay == pytest.approx(tau, rel=1e-6)
    assert abs(fit.background - bg) <= 1e-8
    assert np.abs(fit.model(w) - g).max() <= 1e-8


def test_noisy_fit_small_monte_carlo():
    rng = np.random.default_rng(7)
    w = probe_grid()
    for _ in range(10):
        fit = fit_linear_reflection(synthetic_trace(w, W0, KEX, KIN, 0.01, rng))
        assert abs(fit.omega0 - W0) <= 0.01 * W0
        assert fit.kappa_ex == pytest.approx(KEX, rel=0.01)
        assert fit.kappa_in_star == pytest.approx(KIN, rel=0.01)
        assert fit.stderr["kappa_in_star"] < 0.01 * KIN


def test_fit_rejects_featureless_trace():
    w = probe_grid(401)
    far = W0 + TWO_PI * 50e6
    with pytest.raises(FitError):
        fit_linear_reflection(synthetic_trace(w, far, KEX, KIN, 0.01, np.random.default_rng(1)))


def test_trace_csv_roundtrip(tmp_path):
    t = synthetic_trace(probe_grid(101), W0, KEX, KIN)
    t.to_csv(tmp_path / "r.csv")
    back = ReflectionTrace.from_csv(tmp_path / "r.csv")
    assert np.array_equal(back.gamma, t.gamma)
    assert back.omega == pytest.approx(t.omega, rel=1e-15)
    with pytest.raises(ValueError):
        ReflectionTrace(np.array([2.0, 1.0]), np.array([1.0, 1.0]))

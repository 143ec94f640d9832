import numpy as np
import pytest

from kerrfluor.cli import config_from_header, run
from kerrfluor.csvio import float_column, read_table
from kerrfluor.model import TWO_PI, drive_from_config, load_config, params_from_config


def test_zero_drive_spectrum(tmp_path, capsys):
    assert run(["spectrum", "--f-over-sqrt-kex", "0", "--out", str(tmp_path),
                "--grid-points", "101"]) == 0
    cols, meta = read_table(tmp_path / "spectrum.csv")
    assert np.all(float_column(cols, "flux_density") == 0)
    assert float(meta["coherent_weight"]) == 0


def test_header_reruns_bit_identically(tmp_path):
    args = ["spectrum", "--f-over-sqrt-kex", "4", "--grid-points", "201", "--rbw-hz", "400e3"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    _, meta = read_table(tmp_path / "a" / "spectrum.csv")
    cfg_text = "\n".join(f"{k[4:]} = {v}" for k, v in meta.items() if k.startswith("cfg."))
    (tmp_path / "re.cfg").write_text(cfg_text + "\n")
    assert run(["spectrum", "--config", str(tmp_path / "re.cfg"),
                "--out", str(tmp_path / "b")]) == 0
    assert ((tmp_path / "a" / "spectrum.csv").read_bytes()
            == (tmp_path / "b" / "spectrum.csv").read_bytes())


def test_config_roundtrip_through_header(tmp_path):
    (tmp_path / "in.cfg").write_text(
        "omega0_ghz = 7.5\nkerr_mhz = -35\nkappa_ex_mhz = 0.4\nkappa_in_mhz = 0.2\n"
        "gamma_p_mhz = 0.05\nf_over_sqrt_kex = 2.5\nn_max = 14\ngrid_points = 151\n"
        "grid_span_mhz = 30\nseed = 9\n")
    assert run(["spectrum", "--config", str(tmp_path / "in.cfg"), "--out", str(tmp_path)]) == 0
    _, meta = read_table(tmp_path / "spectrum.csv")
    cfg = config_from_header(meta)
    orig = load_config(tmp_path / "in.cfg")
    p_orig, p_back = params_from_config(orig), params_from_config(cfg)
    assert p_back == p_orig
    assert drive_from_config(cfg, p_back) == drive_from_config(orig, p_orig)
    for k in ("n_max", "grid_points", "grid_span_mhz", "seed"):
        assert cfg[k] == orig[k]


@pytest.mark.parametrize("argv,code,module", [
    (["spectrum", "--config", "/nonexistent.cfg"], 2, "model"),
    (["spectrum", "--f-over-sqrt-kex", "30", "--nmax", "5"], 3, "spectrum"),
    (["spectrum", "--rbw-hz", "1", "--f-over-sqrt-kex", "1", "--grid-points", "11"], 2, "spectrum"),
])
def test_error_exit_codes(tmp_path, capsys, argv, code, module):
    assert run(argv + ["--out", str(tmp_path)]) == code
    assert f"error in {module}" in capsys.readouterr().err


def test_malformed_config(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("kerr_mhz = -20\nwhatever = 3\n")
    assert run(["spectrum", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_argparse_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as e:
        run(["spectrum", "--no-such-flag"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        run(["spectrum", "--power-dbm", "-120", "--f-over-sqrt-kex", "1"])
    assert e.value.code == 2


def test_fit_failure_exit_4(tmp_path, capsys):
    f = np.linspace(10.0e9, 10.001e9, 201)
    from kerrfluor.csvio import write_table
    write_table(tmp_path / "flat.csv", {"freq_hz": f, "re_gamma": np.ones(201),
                                        "im_gamma": np.zeros(201)})
    assert run(["reflection", "--input", str(tmp_path / "flat.csv"), "--out", str(tmp_path)]) == 4
    assert "error in reflection" in capsys.readouterr().err


def test_dressed_table(tmp_path):
    assert run(["dressed", "--sweep", "0:4:5", "--out", str(tmp_path)]) == 0
    cols, meta = read_table(tmp_path / "dressed.csv")
    assert list(cols) == ["f_over_sqrt_kex", "quantity", "value"]
    assert "freq_1_0_mhz" in cols["quantity"] and "me_0_1" in cols["quantity"]
    assert meta["sweep"] == "0:4:5"


def test_populations_and_peaks(tmp_path):
    assert run(["populations", "--f-over-sqrt-kex", "5", "--out", str(tmp_path)]) == 0
    cols, _ = read_table(tmp_path / "populations.csv")
    row = dict(zip(cols["quantity"], map(float, cols["value"])))
    assert row["trace"] == pytest.approx(1.0, abs=1e-4)
    assert run(["peaks", "--f-over-sqrt-kex", "5", "--out", str(tmp_path)]) == 0
    cols, _ = read_table(tmp_path / "peaks.csv")
    assert "est_1_0" in cols["quantity"] and "center" in cols["quantity"]


def test_reflection_trace_and_fit(tmp_path):
    assert run(["reflection", "--out", str(tmp_path / "a"), "--power-sweep=-150,-140"]) == 0
    assert run(["reflection", "--input", str(tmp_path / "a" / "reflection.csv"),
                "--out", str(tmp_path / "b")]) == 0
    text = (tmp_path / "b" / "reflection_fit.txt").read_text()
    assert "kappa_ex_hz = 260000.0" in text or "kappa_ex_hz = 2600" in text
    cols, _ = read_table(tmp_path / "a" / "power_sweep.csv")
    assert len(cols["abs_gamma"]) == 2


def test_tls_spectrum(tmp_path):
    assert run(["tls-spectrum", "--f-over-sqrt-kex", "3", "--grid-points", "51",
                "--out", str(tmp_path)]) == 0
    _, meta = read_table(tmp_path / "tls_spectrum.csv")
    assert meta["model"] == "tls"


def test_figure_fig2c(tmp_path):
    assert run(["figure", "fig2c", "--out", str(tmp_path), "--grid-points", "201",
                "--sweep", "1,5,10"]) == 0
    files = sorted(p.name for p in (tmp_path / "fig2c").iterdir())
    assert files == ["spectrum_f1.csv", "spectrum_f10.csv", "spectrum_f5.csv"]
    _, meta = read_table(tmp_path / "fig2c" / "spectrum_f5.csv")
    p = params_from_config(config_from_header(meta))
    assert p.kerr == pytest.approx(TWO_PI * -20e6, rel=1e-15)
    assert p.omega0 == pytest.approx(TWO_PI * 10e9, rel=1e-15)
    assert p.kappa_ex == pytest.approx(TWO_PI * 0.5e6, rel=1e-15)
    assert p.kappa_in == pytest.approx(TWO_PI * 0.5e6, rel=1e-15)


def test_fit_synthetic_is_deterministic(tmp_path):
    argv = ["fit", "--power-dbm=-112.8", "--synthetic-noise", "0.05", "--strategy", "parzen",
            "--trials", "8", "--seed", "5", "--grid-points", "801"]
    assert run(argv + ["--out", str(tmp_path / "a")]) == 0
    assert run(argv + ["--out", str(tmp_path / "b")]) == 0
    for name in ("fit_report.txt", "fit_history.csv", "fit_overlay.csv", "synthetic_data.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_oracle_check_passes(tmp_path, capsys):
    assert run(["oracle-check", "--out", str(tmp_path), "--grid-points", "201"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 10

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kerrfluor.errors import SingularSystemError
from kerrfluor.model import TWO_PI, DriveField, MomentIndex, SystemParams, benchmark_params
from kerrfluor.moments import (MomentTable, _dense_solve, build_moment_operator, check_truncation,
                               hierarchy_matrix, solve_steady_moments, symmetry_error)

from conftest import drive_at

# Lindblad steady-state moments on a 30-level Fock space for the benchmark set,
# F / sqrt(kappa_ex) -> (alpha_01, alpha_11, alpha_22, alpha_02).
FROZEN = {
    1.0: (0.028585473677998862 - 0.31350062608410006j, 0.31350062608410006,
          0.0008575642103399662, -0.00043819557445147684 - 0.015576876443825275j),
    5.0: (0.2172715910039719 - 0.10358552432124041j, 0.5179276216062023,
          0.03259073865059578, 0.02280380215953545 - 0.02494857812160345j),
    10.0: (0.40918191756079403 - 0.06041714487299352j, 0.6041714487299353,
           0.12275457526823823, 0.0879940924739337 - 0.02701077293226793j),
}


@pytest.mark.parametrize("f", sorted(FROZEN))
def test_frozen_lindblad_moments(bench, f):
    tab = solve_steady_moments(bench, drive_at(bench, f), 20)
    a01, a11, a22, a02 = FROZEN[f]
    for got, ref in ((tab[0, 1], a01), (tab[1, 1], a11), (tab[2, 2], a22), (tab[0, 2], a02)):
        assert abs(got - ref) <= 1e-8 * abs(ref)


@pytest.mark.parametrize("n_max", [1, 5, 20])
def test_vacuum_without_drive(bench, n_max):
    tab = solve_steady_moments(bench, drive_at(bench, 0.0), n_max)
    expected = np.zeros((n_max + 1, n_max + 1))
    expected[0, 0] = 1.0
    assert np.array_equal(tab.values, expected)


def test_undriven_operator_is_triangular_in_grading(bench):
    op = build_moment_operator(bench, drive_at(bench, 0.0), 8).tocoo()
    idx = MomentIndex(8)
    grade = np.array([sum(idx.unflat(k)) for k in range(idx.dim)])
    off = op.row != op.col
    # couplings only reach strictly higher grades: triangular when sorted by grade
    assert np.all(grade[op.col[off]] > grade[op.row[off]])


def test_sparsity_at_most_four_offdiagonal_per_row(bench):
    op = hierarchy_matrix(bench, drive_at(bench, 3.0), 12).tocsr()
    counts = np.diff(op.indptr) - (op.diagonal() != 0)
    assert counts.max() <= 4


def _linear_closed_form(params, drive, n_max):
    # independent of the package helper: coherent amplitude on resonance
    abar = -1j * math.sqrt(params.kappa_ex) * drive.amplitude_f / (params.kappa_loss / 2.0)
    m = np.arange(n_max + 1)
    return np.conj(abar) ** m[:, None] * abar ** m[None, :]


@pytest.mark.parametrize("f", [0.3, 1.0, 2.0])
def test_linear_resonator_is_coherent_state(f):
    p = SystemParams(TWO_PI * 10e9, 0.0, TWO_PI * 0.5e6, TWO_PI * 0.5e6, 0.0)
    d = drive_at(p, f)
    tab = solve_steady_moments(p, d, 20)
    ref = _linear_closed_form(p, d, 20)
    mm, nn = np.meshgrid(np.arange(21), np.arange(21), indexing="ij")
    low = mm + nn <= 20
    rel = np.abs(tab.values - ref)[low] / np.abs(ref)[low]
    assert rel.max() <= 1e-10
    # higher grades: absolute error small against the largest entry
    assert np.abs(tab.values - ref).max() <= 1e-10 * np.abs(ref).max()


@pytest.mark.parametrize("phi", [0.3, 1.7, -2.2])
def test_gauge_covariance(bench, phi):
    d = drive_at(bench, 4.0)
    a = solve_steady_moments(bench, d, 16)
    b = solve_steady_moments(bench, d.with_amplitude(d.amplitude_f * np.exp(1j * phi)), 16)
    m, n = np.meshgrid(np.arange(17), np.arange(17), indexing="ij")
    rotated = a.values * np.exp(1j * (n - m) * phi)
    assert abs(b[1, 1] - a[1, 1]) <= 1e-12 * abs(a[1, 1])
    assert np.abs(b.values - rotated)[m + n <= 6].max() <= 1e-10 * np.abs(a.values).max()


@settings(max_examples=25, deadline=None)
@given(kerr=st.floats(-40, 40), kex=st.floats(0.1, 2.0), kin=st.floats(0.0, 2.0),
       gp=st.floats(0.0, 0.5), f=st.floats(0.0, 4.0), det=st.floats(-5, 5))
def test_hermitian_symmetry_and_physicality(kerr, kex, kin, gp, f, det):
    p = SystemParams(TWO_PI * 5e9, TWO_PI * kerr * 1e6, TWO_PI * kex * 1e6, TWO_PI * kin * 1e6,
                     TWO_PI * gp * 1e6)
    d = drive_at(p, f, p.omega0 + TWO_PI * det * 1e6)
    tab = solve_steady_moments(p, d, 12)
    assert tab.residual <= 1e-10
    assert symmetry_error(tab.values) <= 1e-9
    assert tab.photon_number >= -1e-12
    # photon-number balance: kappa_loss <a^dag a> = -2 sqrt(kex) Im(F* <a>)
    lhs = p.kappa_loss * tab[1, 1].real
    rhs = -2.0 * math.sqrt(p.kappa_ex) * (np.conj(d.amplitude_f) * tab[0, 1]).imag
    assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-12)
    assert tab.connected_photon_number >= -1e-9 * max(1.0, tab.photon_number)


def test_truncation_examples(bench):
    assert check_truncation(bench, drive_at(bench, 0.0), 1).converged
    assert check_truncation(bench, drive_at(bench, 1.0), 10).converged
    strong = check_truncation(bench, drive_at(bench, 30.0), 5)
    assert not strong.converged
    assert strong.recommended_n_max > 5
    assert check_truncation(bench, drive_at(bench, 30.0), strong.recommended_n_max).converged


def test_check_flag_recorded(bench, caplog):
    tab = solve_steady_moments(bench, drive_at(bench, 30.0), 5, check=True)
    assert tab.converged is False
    assert "not converged" in caplog.text
    assert solve_steady_moments(bench, drive_at(bench, 2.0), 20, check=True).converged is True


def test_sparse_path_matches_dense(bench):
    d = drive_at(bench, 6.0)
    dense = solve_steady_moments(bench, d, 36)
    sparse = solve_steady_moments(bench, d, 44)
    for mn in ((0, 1), (1, 1), (2, 2), (1, 3)):
        assert abs(sparse[mn] - dense[mn]) <= 1e-10 * max(abs(dense[mn]), 1e-3)


def test_table_access_and_csv(tmp_path, bench):
    tab = solve_steady_moments(bench, drive_at(bench, 2.0), 6)
    assert tab[7, 0] == 0 and tab[0, 9] == 0
    assert tab.mean_field == tab[0, 1]
    path = tmp_path / "m.csv"
    tab.to_csv(path, {"seed": 1})
    back = MomentTable.from_csv(path)
    assert back.n_max == 6
    assert np.array_equal(back.values, tab.values)
    with pytest.raises(ValueError):
        tab.values[0, 0] = 2.0


def test_rejects_bad_truncation(bench):
    with pytest.raises(ValueError):
        build_moment_operator(bench, drive_at(bench, 1.0), 0)


def test_singular_system_reports_condition():
    a = np.array([[1.0, 2.0], [2.0, 4.0]], dtype=complex)
    with pytest.raises(SingularSystemError) as err:
        _dense_solve(a, np.array([1.0, 0.0], dtype=complex))
    assert err.value.condition == math.inf or err.value.condition > 1e12

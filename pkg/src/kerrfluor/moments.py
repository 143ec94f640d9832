"""Steady-state normally ordered moments <a^dag^m a^n> from the truncated hierarchy.

In the frame rotating at the drive frequency the moments
alpha_{m,n} = <a^dag^m a^n>_s satisfy, for every (m, n) != (0, 0),

    eps'_{m,n} alpha_{m,n} + i K (m - n) alpha_{m+1,n+1}
        - i sqrt(kappa_ex) [n F alpha_{m,n-1} - m F* alpha_{m-1,n}] = 0,

closed by alpha_{0,0} = 1.  Couplings to indices above ``n_max`` are dropped.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .csvio import float_column, read_table, write_table
from .errors import SingularSystemError
from .model import DriveField, MomentIndex, SystemParams, epsilon_detuned_grid

log = logging.getLogger(__name__)

DEFAULT_N_MAX = 20
SPARSE_ABOVE = 40
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class MomentTable:
    """Solved moments ``values[m, n] = <a^dag^m a^n>_s`` for 0 <= m, n <= n_max.

    ``converged`` is None until a truncation check has been run.
    """

    n_max: int
    values: np.ndarray
    residual: float = 0.0
    symmetry_error: float = 0.0
    converged: bool | None = None
    condition: float = 1.0

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.shape != (self.n_max + 1, self.n_max + 1):
            raise ValueError("values must be (n_max+1, n_max+1)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __getitem__(self, mn: tuple[int, int]) -> complex:
        m, n = mn
        if m > self.n_max or n > self.n_max:
            return 0j
        return complex(self.values[m, n])

    @property
    def mean_field(self) -> complex:
        """<a>_s in the rotating frame."""
        return self[0, 1]

    @property
    def photon_number(self) -> float:
        return self[1, 1].real

    @property
    def connected_photon_number(self) -> float:
        """<a^dag a> - |<a>|^2, the fluctuation part of the photon number."""
        return self[1, 1].real - abs(self[0, 1]) ** 2

    def with_convergence(self, converged: bool) -> "MomentTable":
        return MomentTable(self.n_max, self.values, self.residual,
                           self.symmetry_error, converged, self.condition)

    def to_csv(self, path: str | Path, header: dict | None = None) -> None:
        m, n = np.divmod(np.arange((self.n_max + 1) ** 2), self.n_max + 1)
        flat = self.values.reshape(-1)
        write_table(path, {"m": m, "n": n, "re": flat.real, "im": flat.imag}, header)

    @classmethod
    def from_csv(cls, path: str | Path) -> "MomentTable":
        cols, _ = read_table(path)
        m = float_column(cols, "m", path).astype(int)
        n = float_column(cols, "n", path).astype(int)
        n_max = int(max(m.max(), n.max()))
        vals = np.zeros((n_max + 1, n_max + 1), complex)
        vals[m, n] = float_column(cols, "re", path) + 1j * float_column(cols, "im", path)
        return cls(n_max, vals)


def hierarchy_matrix(params: SystemParams, drive: DriveField, n_max: int) -> sp.csr_matrix:
    """Generator of the moment hierarchy in flat (m, n) order, no constraint row.

    Row (m, n) holds eps'_{m,n} on the diagonal, i K (m-n) at (m+1, n+1),
    -i sqrt(kappa_ex) n F at (m, n-1) and +i sqrt(kappa_ex) m F* at (m-1, n).
    Row (0, 0) is identically zero.
    """
    idx = MomentIndex(n_max)
    m, n = idx.grids()
    flat = np.arange(idx.dim)
    f = drive.amplitude_f
    g = math.sqrt(params.kappa_ex)

    rows = [flat]
    cols = [flat]
    data = [epsilon_detuned_grid(idx, params, drive.omega_d)]

    sel = (m < n_max) & (n < n_max) & (m != n)
    rows.append(flat[sel])
    cols.append(flat[sel] + n_max + 2)
    data.append(1j * params.kerr * (m[sel] - n[sel]))

    if f != 0:
        sel = n >= 1
        rows.append(flat[sel])
        cols.append(flat[sel] - 1)
        data.append(-1j * g * n[sel] * f)
        sel = m >= 1
        rows.append(flat[sel])
        cols.append(flat[sel] - (n_max + 1))
        data.append(1j * g * m[sel] * np.conj(f))

    mat = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(idx.dim, idx.dim)).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


def build_moment_operator(params: SystemParams, drive: DriveField,
                          n_max: int = DEFAULT_N_MAX) -> sp.csr_matrix:
    """Square steady-state operator with the (0, 0) row replaced by alpha_00 = 1.

    Pair with :func:`moment_rhs` (unit vector at flat index 0).
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    mat = hierarchy_matrix(params, drive, n_max).tolil()
    mat[0, :] = 0
    mat[0, 0] = 1.0
    return mat.tocsr()


def moment_rhs(n_max: int) -> np.ndarray:
    b = np.zeros((n_max + 1) ** 2, complex)
    b[0] = 1.0
    return b


def _equilibrated_lu(a: np.ndarray):
    r = 1.0 / np.abs(a).max(axis=1)
    a = a * r[:, None]
    lu, piv, info = sla.lapack.zgetrf(a)
    if info > 0:
        raise SingularSystemError("moment operator is exactly singular", math.inf)
    return lu, piv, r, np.abs(a).sum(axis=0).max()


def _graded_scale(x: np.ndarray) -> np.ndarray:
    """Column scale from a first-pass solution; floors keep it invertible."""
    mag = np.abs(x)
    return np.maximum(mag, 1e-200 * max(mag.max(), 1e-300))


def _dense_solve(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Two-pass LU solve; returns (x, column scale, condition estimate).

    The second pass works in the unknowns y = x / scale, which are all of
    order one, so small moments keep full relative accuracy next to large ones.
    """
    lu, piv, r, _ = _equilibrated_lu(a)
    x0, _ = sla.lapack.zgetrs(lu, piv, b * r)
    c = _graded_scale(x0)
    lu, piv, r, anorm = _equilibrated_lu(a * c[None, :])
    rcond, _ = sla.lapack.zgecon(lu, anorm, norm="1")
    y, _ = sla.lapack.zgetrs(lu, piv, b * r)
    return y * c, c, 1.0 / max(rcond, 1e-300)


def _sparse_solve(a: sp.csr_matrix, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    try:
        x0 = spla.splu(a.tocsc()).solve(b)
        c = _graded_scale(x0)
        y = spla.splu((a @ sp.diags(c)).tocsc()).solve(b)
    except RuntimeError as exc:
        raise SingularSystemError(f"sparse LU failed: {exc}", math.inf) from exc
    return y * c, c, math.nan


def solve_steady_moments(params: SystemParams, drive: DriveField,
                         n_max: int = DEFAULT_N_MAX, check: bool = False,
                         tol: float = 1e-8) -> MomentTable:
    """Solve the truncated hierarchy for the steady-state moments.

    Parameters
    ----------
    params, drive : SystemParams, DriveField
    n_max : int
        Truncation order; the grid is (n_max + 1)**2 unknowns.
    check : bool
        Also run :func:`check_truncation` and record the outcome in
        ``MomentTable.converged``.
    tol : float
        Tolerance for the truncation check.

    Raises
    ------
    SingularSystemError
        If the operator is singular, or the relative residual exceeds 1e-10;
        the error carries the condition estimate.

    Notes
    -----
    The hierarchy is graded: for a nearly coherent state alpha_{m,n} scales
    like |abar|**(m+n), which spans many decades at n_max = 20.  A first LU
    pass supplies that magnitude profile; the system is then re-solved with
    columns scaled by it.  The residual and condition estimate refer to the
    scaled system.
    """
    op = build_moment_operator(params, drive, n_max)
    b = moment_rhs(n_max)
    if n_max > SPARSE_ABOVE:
        x, scale, cond = _sparse_solve(op, b)
    else:
        x, scale, cond = _dense_solve(op.toarray(), b)

    if not np.all(np.isfinite(x)):
        raise SingularSystemError("moment solve produced non-finite values", cond)
    resid = _relative_residual(op @ sp.diags(scale), x / scale, b)
    if resid > RESIDUAL_TOL:
        raise SingularSystemError(f"moment solve residual {resid:.2e} exceeds {RESIDUAL_TOL:.0e}",
                                  cond)

    vals = x.reshape(n_max + 1, n_max + 1)
    sym = symmetry_error(vals)
    if sym > 1e-9:
        log.warning("moment table violates conjugate symmetry by %.2e", sym)
    table = MomentTable(n_max, vals, float(resid), sym, None, cond)
    if check:
        report = check_truncation(params, drive, n_max, tol, base=table)
        table = table.with_convergence(report.converged)
        if not report.converged:
            log.warning("moments not converged at n_max=%d (change %.2e); try n_max=%d",
                        n_max, report.max_change, report.recommended_n_max)
    return table


def symmetry_error(vals: np.ndarray) -> float:
    """max |a_mn - conj(a_nm)| / max(1, |a_mn|) over the grid."""
    diff = np.abs(vals - vals.conj().T)
    return float(np.max(diff / np.maximum(1.0, np.abs(vals))))


def _relative_residual(op, x: np.ndarray, b: np.ndarray) -> float:
    """Normwise backward error ||Ax - b|| / (||A|| ||x|| + ||b||) in the inf-norm."""
    r = np.abs(op @ x - b).max()
    return float(r / (abs(op).sum(axis=1).max() * np.abs(x).max() + np.abs(b).max()))


@dataclass(frozen=True)
class TruncationReport:
    converged: bool
    max_change: float
    n_max: int
    recommended_n_max: int


def _low_order_change(a: MomentTable, b: MomentTable) -> float:
    change = 0.0
    for mn in ((0, 1), (1, 1)):
        ref = max(abs(b[mn]), 1e-300)
        change = max(change, abs(a[mn] - b[mn]) / ref if abs(b[mn]) > 1e-300 else abs(a[mn]))
    return change


def check_truncation(params: SystemParams, drive: DriveField, n_max: int = DEFAULT_N_MAX,
                     tol: float = 1e-8, base: MomentTable | None = None,
                     search_limit: int = 60) -> TruncationReport:
    """Compare alpha_{0,1}, alpha_{1,1} at n_max against n_max + 4.

    When the check fails, keeps stepping by 4 (up to ``search_limit``) to
    suggest a truncation that does converge.
    """
    base = base if base is not None else solve_steady_moments(params, drive, n_max)
    upper = solve_steady_moments(params, drive, n_max + 4)
    change = _low_order_change(base, upper)
    converged = change <= tol
    recommended = n_max
    if not converged:
        recommended = search_limit
        lo, nm = upper, n_max + 4
        while nm + 4 <= search_limit:
            hi = solve_steady_moments(params, drive, nm + 4)
            if _low_order_change(lo, hi) <= tol:
                recommended = nm
                break
            lo, nm = hi, nm + 4
    return TruncationReport(converged, change, n_max, recommended)


def coherent_state_moments(params: SystemParams, drive: DriveField, n_max: int) -> np.ndarray:
    """Closed-form moments of the linear (K = 0, gamma_p = 0) resonator.

    The steady state is the coherent state with
    abar = -i sqrt(kappa_ex) F / (i (omega0 - omega_d) + kappa/2).
    """
    abar = (-1j * math.sqrt(params.kappa_ex) * drive.amplitude_f
            / (1j * (params.omega0 - drive.omega_d) + params.kappa_loss / 2.0))
    k = np.arange(n_max + 1)
    return np.conj(abar) ** k[:, None] * abar ** k[None, :]

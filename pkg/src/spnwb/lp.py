"""Dense two-phase simplex with Bland's anti-cycling rule.

Small, deterministic and dependency-free: the planning problems solved in
this package have a few dozen variables at most, so reproducibility matters
far more than speed.  Free variables are handled by splitting into positive
and negative parts; inequality rows get slacks; phase 1 uses artificials on
every row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-9


class LPError(RuntimeError):
    pass


class Infeasible(LPError):
    pass


class Unbounded(LPError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    objective: float


def _pivot(T: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and abs(T[r, col]) > 0.0:
            T[r] -= T[r, col] * T[row]
    basis[row] = col


def _bland_step(T: np.ndarray, basis: np.ndarray, ncols: int) -> bool:
    """One simplex iteration on the tableau; returns False at optimality."""
    cost = T[-1, :ncols]
    entering = -1
    for j in range(ncols):
        if cost[j] < -PIVOT_TOL:
            entering = j
            break
    if entering < 0:
        return False
    ratios = []
    for r in range(T.shape[0] - 1):
        if T[r, entering] > PIVOT_TOL:
            ratios.append((T[r, -1] / T[r, entering], basis[r], r))
    if not ratios:
        raise Unbounded("objective unbounded below")
    # smallest ratio, ties broken by smallest basic-variable index (Bland)
    ratios.sort(key=lambda t: (t[0], t[1]))
    _pivot(T, basis, ratios[0][2], entering)
    return True


def solve_lp(
    c,
    a_eq=None,
    b_eq=None,
    a_ub=None,
    b_ub=None,
    free=None,
    maximize: bool = False,
) -> LPResult:
    """Solve min (or max) c.x s.t. a_eq x = b_eq, a_ub x <= b_ub.

    Variables are nonnegative unless flagged in the boolean mask ``free``.
    Raises Infeasible / Unbounded.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    free = np.zeros(n, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    if maximize:
        c = -c

    a_eq = np.zeros((0, n)) if a_eq is None else np.atleast_2d(np.asarray(a_eq, float))
    b_eq = np.zeros(0) if b_eq is None else np.atleast_1d(np.asarray(b_eq, float))
    a_ub = np.zeros((0, n)) if a_ub is None else np.atleast_2d(np.asarray(a_ub, float))
    b_ub = np.zeros(0) if b_ub is None else np.atleast_1d(np.asarray(b_ub, float))

    # Column layout: split columns for the original variables, then slacks.
    col_of_pos = np.zeros(n, dtype=int)
    col_of_neg = np.full(n, -1, dtype=int)
    ncols = 0
    for j in range(n):
        col_of_pos[j] = ncols
        ncols += 1
        if free[j]:
            col_of_neg[j] = ncols
            ncols += 1
    n_slack = a_ub.shape[0]
    n_struct = ncols + n_slack

    m = a_eq.shape[0] + a_ub.shape[0]
    A = np.zeros((m, n_struct))
    b = np.concatenate([b_eq, b_ub])
    rows = np.vstack([a_eq, a_ub]) if m else np.zeros((0, n))
    for j in range(n):
        A[:, col_of_pos[j]] = rows[:, j]
        if col_of_neg[j] >= 0:
            A[:, col_of_neg[j]] = -rows[:, j]
    for s in range(n_slack):
        A[a_eq.shape[0] + s, ncols + s] = 1.0

    flip = b < 0.0
    A[flip] *= -1.0
    b = np.abs(b)

    # Phase 1 tableau with one artificial per row.
    T = np.zeros((m + 1, n_struct + m + 1))
    T[:m, :n_struct] = A
    T[:m, n_struct : n_struct + m] = np.eye(m)
    T[:m, -1] = b
    basis = np.arange(n_struct, n_struct + m)
    T[-1, :n_struct] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()

    while _bland_step(T, basis, n_struct):
        pass
    if T[-1, -1] < -1e-7:
        raise Infeasible(f"phase 1 residual {-T[-1, -1]:.3e}")

    # Drive any artificial still basic (at zero) out of the basis.
    keep_rows = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] >= n_struct:
            pivot_col = -1
            for j in range(n_struct):
                if abs(T[r, j]) > PIVOT_TOL:
                    pivot_col = j
                    break
            if pivot_col >= 0:
                _pivot(T, basis, r, pivot_col)
            else:
                keep_rows[r] = False  # redundant constraint
    if not keep_rows.all():
        T = np.vstack([T[:m][keep_rows], T[-1:]])
        basis = basis[keep_rows]
        m = int(keep_rows.sum())

    # Phase 2: real objective priced out against the current basis.
    obj = np.zeros(n_struct + 1)
    for j in range(n):
        obj[col_of_pos[j]] = c[j]
        if col_of_neg[j] >= 0:
            obj[col_of_neg[j]] = -c[j]
    T2 = np.hstack([T[:m, :n_struct], T[:m, -1:]])
    z = obj.copy()
    for r in range(m):
        if z[basis[r]] != 0.0:
            z -= z[basis[r]] * T2[r]
    T2 = np.vstack([T2, z])

    while _bland_step(T2, basis, n_struct):
        pass

    xs = np.zeros(n_struct)
    for r in range(m):
        xs[basis[r]] = T2[r, -1]
    x = np.empty(n)
    for j in range(n):
        x[j] = xs[col_of_pos[j]]
        if col_of_neg[j] >= 0:
            x[j] -= xs[col_of_neg[j]]
    objective = float(c @ x)
    return LPResult(x, -objective if maximize else objective)

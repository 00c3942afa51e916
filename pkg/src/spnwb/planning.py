"""Static planning LP, its dual, and the resource-pooling machinery.

The primal chooses activity levels x that balance flow through every buffer
while input processors run flat out, minimizing the busiest service
processor's utilization rho (the traffic intensity).  The dual produces
per-buffer workload weights y and relative processor capacities z; the
network is completely pooled when the dual optimum is unique and
nonnegative, and then y defines the scalar workload process that all the
heavy-traffic analysis rides on.

The dual is solved directly as its own LP rather than read off primal
multipliers, so degenerate primal bases cannot corrupt y.  Uniqueness is
certified by optimal-face coordinate-range LPs: every coordinate is pushed
to its min and max subject to the objective staying optimal.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .lp import Infeasible, solve_lp
from .network import ActivitySpec, NetworkSpec

FEAS_TOL = 1e-8      # constraint residuals of reported solutions
DUALITY_TOL = 1e-8   # primal/dual objective gap
UNIQ_TOL = 1e-7      # optimal-face width below which a coordinate is unique
CHECK_TOL = 1e-7     # residual tolerance in the dual characterization report


class BadAlpha(ValueError):
    pass


class BadInput(ValueError):
    pass


class NotCritical(ValueError):
    pass


class BadTheta(ValueError):
    pass


@dataclass
class PlanningSolution:
    rho: float
    x: np.ndarray
    unique_primal: bool
    x_gap: np.ndarray  # optimal-face width of each activity level


@dataclass
class DualSolution:
    y: np.ndarray              # workload weight per buffer
    z: np.ndarray              # relative capacity per processor
    objective: float
    pooled: bool | None = None
    y_gap: np.ndarray | None = None
    z_gap: np.ndarray | None = None


@dataclass(frozen=True)
class CollapseDirection:
    zeta: np.ndarray
    alpha: np.ndarray


def _primal_arrays(R: np.ndarray, spec: NetworkSpec):
    """Constraint blocks of the static planning LP over (x, rho)."""
    I, J = R.shape
    A = spec.consumption.astype(float)
    n = J + 1
    a_eq = np.zeros((I + len(spec.input_processors), n))
    a_eq[:I, :J] = R
    for r, k in enumerate(spec.input_processors):
        a_eq[I + r, :J] = A[k]
    b_eq = np.concatenate([np.zeros(I), np.ones(len(spec.input_processors))])
    a_ub = np.zeros((len(spec.service_processors), n))
    for r, k in enumerate(spec.service_processors):
        a_ub[r, :J] = A[k]
        a_ub[r, J] = -1.0
    b_ub = np.zeros(len(spec.service_processors))
    free = np.zeros(n, dtype=bool)
    free[J] = True  # rho; nonnegativity follows from the service rows
    return a_eq, b_eq, a_ub, b_ub, free


def solve_static_planning(R: np.ndarray, spec: NetworkSpec) -> PlanningSolution:
    """Optimal (rho, x) of the static planning problem, with uniqueness gaps."""
    J = spec.J
    a_eq, b_eq, a_ub, b_ub, free = _primal_arrays(R, spec)
    c = np.zeros(J + 1)
    c[J] = 1.0
    res = solve_lp(c, a_eq, b_eq, a_ub, b_ub, free)
    rho, x = res.objective, res.x[:J].copy()

    # Width of the optimal face in each coordinate: re-optimize +/- each x_j
    # with rho pinned at its optimum.
    a_eq_f = np.vstack([a_eq, c])
    b_eq_f = np.concatenate([b_eq, [rho]])
    gaps = np.empty(J)
    for j in range(J):
        w = np.zeros(J + 1)
        w[j] = 1.0
        lo = solve_lp(w, a_eq_f, b_eq_f, a_ub, b_ub, free).objective
        hi = solve_lp(w, a_eq_f, b_eq_f, a_ub, b_ub, free, maximize=True).objective
        gaps[j] = hi - lo
    return PlanningSolution(rho, x, bool(np.all(gaps <= UNIQ_TOL)), gaps)


def _dual_arrays(R: np.ndarray, spec: NetworkSpec):
    """Constraint blocks of the dual LP over (y, z)."""
    I, J = R.shape
    K = spec.K
    A = spec.consumption.astype(float)
    n = I + K
    rows = []
    for j in spec.input_activities:
        row = np.zeros(n)
        row[:I] = R[:, j]
        for k in spec.input_processors:
            row[I + k] = A[k, j]
        rows.append(row)
    for j in spec.service_activities:
        row = np.zeros(n)
        row[:I] = R[:, j]
        for k in spec.service_processors:
            row[I + k] = -A[k, j]
        rows.append(row)
    a_ub = np.array(rows)
    b_ub = np.zeros(len(rows))
    a_eq = np.zeros((1, n))
    for k in spec.service_processors:
        a_eq[0, I + k] = 1.0
    b_eq = np.ones(1)
    free = np.zeros(n, dtype=bool)
    free[:I] = True
    for k in spec.input_processors:
        free[I + k] = True
    obj = np.zeros(n)
    for k in spec.input_processors:
        obj[I + k] = 1.0
    return obj, a_eq, b_eq, a_ub, b_ub, free


def solve_dual_planning(R: np.ndarray, spec: NetworkSpec) -> DualSolution:
    """Optimal (y, z) of the dual planning problem."""
    I = spec.I
    obj, a_eq, b_eq, a_ub, b_ub, free = _dual_arrays(R, spec)
    res = solve_lp(obj, a_eq, b_eq, a_ub, b_ub, free, maximize=True)
    return DualSolution(res.x[:I].copy(), res.x[I:].copy(), res.objective)


def check_complete_resource_pooling(R: np.ndarray, spec: NetworkSpec) -> DualSolution:
    """Dual solution plus the pooling certificate.

    pooled is true when every coordinate of (y, z) has optimal-face range
    at most UNIQ_TOL and the unique solution is componentwise nonnegative.
    """
    sol = solve_dual_planning(R, spec)
    I, K = spec.I, spec.K
    obj, a_eq, b_eq, a_ub, b_ub, free = _dual_arrays(R, spec)
    a_eq_f = np.vstack([a_eq, obj])
    b_eq_f = np.concatenate([b_eq, [sol.objective]])
    gaps = np.empty(I + K)
    for v in range(I + K):
        w = np.zeros(I + K)
        w[v] = 1.0
        lo = solve_lp(w, a_eq_f, b_eq_f, a_ub, b_ub, free).objective
        hi = solve_lp(w, a_eq_f, b_eq_f, a_ub, b_ub, free, maximize=True).objective
        gaps[v] = hi - lo
    unique = bool(np.all(gaps <= UNIQ_TOL))
    nonneg = bool(np.min(sol.y, initial=0.0) >= -FEAS_TOL
                  and np.min(sol.z, initial=0.0) >= -FEAS_TOL)
    sol.pooled = unique and nonneg
    sol.y_gap = gaps[:I]
    sol.z_gap = gaps[I:]
    return sol


def verify_dual_characterization(
    y: np.ndarray,
    z: np.ndarray,
    rho: float,
    R: np.ndarray,
    spec: NetworkSpec,
    extreme_allocations,
) -> dict:
    """Check the three max-over-allocations identities satisfied at a dual
    optimum: the input part equals -rho, the service part equals 1, and the
    full objective equals 1 - rho.  Maxima over the allocation polytope are
    taken over its extreme points (the objective is linear).
    """
    y = np.asarray(y, dtype=float)
    yR = y @ R
    in_j = list(spec.input_activities)
    sv_j = list(spec.service_activities)
    a1 = a2 = a19 = -np.inf
    for vert in extreme_allocations:
        a = vert.levels
        a1 = max(a1, float(sum(yR[j] * a[j] for j in in_j)))
        a2 = max(a2, float(sum(yR[j] * a[j] for j in sv_j)))
        a19 = max(a19, float(yR @ a))
    residuals = {
        "A1": abs(a1 - (-rho)),
        "A2": abs(a2 - 1.0),
        "A19": abs(a19 - (1.0 - rho)),
    }
    return {
        "A1": a1,
        "A2": a2,
        "A19": a19,
        "residuals": residuals,
        "pass": all(r <= CHECK_TOL for r in residuals.values()),
    }


def collapse_direction(y, alpha) -> CollapseDirection:
    """Fixed direction along which buffer levels track the scalar workload."""
    y = np.asarray(y, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0.0):
        raise BadAlpha(f"alpha must be strictly positive, got {alpha}")
    denom = float(np.sum(y * y / alpha))
    if denom == 0.0:
        raise BadInput("y must be nonzero")
    return CollapseDirection((y / alpha) / denom, alpha)


def epsilon_optimal_alpha(c, y, eps: float) -> np.ndarray:
    """Pressure weights whose collapse direction is eps-optimal for the
    linear holding cost c: the cheapest-per-unit-workload buffer gets a tiny
    weight so nearly all mass collapses onto it, giving
    c . zeta <= (1 + eps) * min_i c_i / y_i.
    """
    c = np.asarray(c, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(c <= 0.0) or eps <= 0.0 or np.any(y < 0.0) or not np.any(y > 0.0):
        raise BadInput("need c > 0, eps > 0 and y >= 0 with some y_i > 0")
    dim = c.size
    ratios = np.where(y > 0.0, c / np.where(y > 0.0, y, 1.0), np.inf)
    iota = int(np.argmin(ratios))  # argmin takes the smallest index on ties
    alpha = np.ones(dim)
    alpha[iota] = c[iota] * y[iota] * eps / (dim * float(np.max(np.abs(c * y))))
    return alpha


def scale_input_rates(spec: NetworkSpec, factor: float) -> NetworkSpec:
    """Copy of the network with every input activity's rate scaled."""
    acts = tuple(
        replace(a, rate=a.rate * factor) if a.is_input else a
        for a in spec.activities
    )
    return NetworkSpec(spec.buffer_count, spec.processors, acts,
                       spec.consumption, spec.constituency)


def heavy_traffic_sequence(limit_spec: NetworkSpec, theta: float, rs) -> list[NetworkSpec]:
    """Networks approaching the critically loaded limit at rate theta / r.

    Input rates are scaled by (1 + theta / r); service rates stay fixed so
    the service columns of R are constant along the sequence.  Requires the
    limit network to be critical (rho = 1) with a unique processing plan.
    """
    from .network import input_output_matrix

    rs = list(rs)
    if theta > 0.0:
        raise BadTheta(f"theta must be <= 0, got {theta}")
    if rs and 1.0 + theta / min(rs) <= 0.0:
        raise BadTheta(f"theta = {theta} drives input rates nonpositive at r = {min(rs)}")
    plan = solve_static_planning(input_output_matrix(limit_spec), limit_spec)
    if abs(plan.rho - 1.0) > FEAS_TOL:
        raise NotCritical(f"limit network has rho = {plan.rho!r}, expected 1")
    if not plan.unique_primal:
        raise NotCritical("limit network's processing plan is not unique")
    return [scale_input_rates(limit_spec, 1.0 + theta / r) for r in rs]


def analyze_network(spec: NetworkSpec, alpha=None) -> dict:
    """Full first-order analysis used by the `analyze` report."""
    from .network import enumerate_extreme_allocations, input_output_matrix

    R = input_output_matrix(spec)
    plan = solve_static_planning(R, spec)
    dual = check_complete_resource_pooling(R, spec)
    verts = enumerate_extreme_allocations(spec)
    checks = verify_dual_characterization(dual.y, dual.z, plan.rho, R, spec, verts)
    alpha = np.ones(spec.I) if alpha is None else np.asarray(alpha, dtype=float)
    if np.any(dual.y != 0.0):
        zeta = collapse_direction(dual.y, alpha).zeta
    else:
        zeta = np.zeros(spec.I)
    return {
        "rho": plan.rho,
        "x": plan.x.tolist(),
        "unique_primal": plan.unique_primal,
        "y": dual.y.tolist(),
        "z": {p.id: dual.z[p.index] for p in spec.processors},
        "dual_objective": dual.objective,
        "pooled": dual.pooled,
        "uniqueness_gap": {
            "y": dual.y_gap.tolist(),
            "z": {p.id: dual.z_gap[p.index] for p in spec.processors},
        },
        "alpha": alpha.tolist(),
        "zeta": zeta.tolist(),
        "checks": checks,
    }

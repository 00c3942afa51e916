"""Diffusion-scaled experiments: state-space collapse, workload limits,
cost functionals and the reflected-Brownian comparison target.

Simulated trajectories are compressed in time by r^2 and in space by r;
under the max-pressure rule the scaled workload should approach a reflected
Brownian motion whose drift and variance are computable from first-order
network data, and the scaled buffer vector should collapse onto a fixed
direction.  Everything here is measurement machinery for those claims, plus
a seeded replication harness whose output is independent of worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .network import NetworkSpec, enumerate_extreme_allocations, input_output_matrix
from .planning import (
    NotCritical,
    check_complete_resource_pooling,
    heavy_traffic_sequence,
    solve_static_planning,
)
from .simulate import (
    ShortTrajectory,
    SimConfig,
    Trajectory,
    compute_Y_path,
    compute_workload_path,
    simulate,
)

LOWER_BOUND_TOL = 1e-9
FLAT_Y_TOL = 1e-6


class BadStart(ValueError):
    pass


class BadH(ValueError):
    pass


@dataclass
class ScaledPath:
    r: float
    t: np.ndarray        # grid on [0, T]
    Zhat: np.ndarray     # (G, I)
    What: np.ndarray
    Yhat: np.ndarray
    Xhat: np.ndarray
    y: np.ndarray        # workload weights of the r-th network
    rho: float


@dataclass
class BrownianParams:
    drift: float
    variance: float
    upsilon: dict  # (activity, source buffer) -> I x I covariance block


def diffusion_scale(traj: Trajectory, r: float, y_r, rho_r: float,
                    R_r: np.ndarray, T: float) -> ScaledPath:
    """Scale a trajectory on [0, r^2 T] to the diffusion clock."""
    span = r * r * T
    if traj.truncated or traj.horizon + 1e-9 < span:
        raise ShortTrajectory(f"trajectory covers {traj.final_t}, need {span}")
    y_r = np.asarray(y_r, dtype=float)
    mask = traj.grid_t <= span + 1e-9
    ts = traj.grid_t[mask]
    Z = traj.grid_Z[mask]
    Y, X = compute_Y_path(traj, y_r, rho_r, R_r)
    W = compute_workload_path(traj, y_r)
    return ScaledPath(
        r=r,
        t=ts / (r * r),
        Zhat=Z / r,
        What=W[mask] / r,
        Yhat=Y[mask] / r,
        Xhat=X[mask] / r,
        y=y_r,
        rho=rho_r,
    )


def ssc_metric(scaled: ScaledPath, zeta, T: float | None = None) -> float:
    """Sup over the grid of the max-norm gap between the scaled buffer
    vector and its collapsed image zeta * What."""
    zeta = np.asarray(zeta, dtype=float)
    mask = slice(None) if T is None else scaled.t <= T + 1e-12
    dev = scaled.Zhat[mask] - scaled.What[mask, None] * zeta[None, :]
    return float(np.abs(dev).max())


def reflection_map(f) -> np.ndarray:
    """One-dimensional reflection: f(t) - inf_{s<=t} (f(s) ^ 0)."""
    f = np.asarray(f, dtype=float)
    if f.size == 0:
        return f.copy()
    if f[0] < 0.0:
        raise BadStart(f"path must start nonnegative, got {f[0]}")
    return f - np.minimum.accumulate(np.minimum(f, 0.0))


def lower_bound_check(scaled: ScaledPath) -> dict:
    """Pathwise check that the scaled workload dominates the reflection of
    its free part; the gap profile shows how tight the bound runs."""
    psi = reflection_map(scaled.Xhat)
    gap = scaled.What - psi
    violation = float(max(0.0, -(gap.min())))
    return {
        "pass": violation <= LOWER_BOUND_TOL,
        "max_violation": violation,
        "gap": gap,
    }


def brownian_params(spec: NetworkSpec, R: np.ndarray, x_star, y_star,
                    theta: float) -> BrownianParams:
    """Drift and variance of the limiting free Brownian motion.

    The variance combines routing noise (multinomial covariance blocks per
    activity and source buffer) and completion-count noise, both weighted by
    the nominal plan.  Each completion of activity j shifts the workload by
    the weighted column sum (y . R_j) / rate_j, so its counting noise enters
    through the square of that sum; activities that move jobs between
    equal-weight buffers contribute nothing, which the empirical variance
    of the free part confirms.
    """
    plan = solve_static_planning(R, spec)
    if abs(plan.rho - 1.0) > 1e-8:
        raise NotCritical(f"variance formula needs a critical network, rho = {plan.rho}")
    x_star = np.asarray(x_star, dtype=float)
    y = np.asarray(y_star, dtype=float)
    I = spec.I

    upsilon: dict = {}
    routing_term = np.zeros((I, I))
    for act in spec.activities:
        for src, row in act.routing.items():
            p = row[:I]
            block = -np.outer(p, p)
            np.fill_diagonal(block, p * (1.0 - p))
            upsilon[(act.index, src)] = block
            routing_term += x_star[act.index] * act.rate * block

    service_term = 0.0
    yR = y @ R
    for act in spec.activities:
        j = act.index
        # completions arrive at rate rate_j per unit of activity time with
        # counting-noise variance rate_j sigma_j^2; each shifts W by yR_j/rate_j
        service_term += float(
            yR[j] ** 2 * x_star[j] * act.law.variance / act.rate
        )
    variance = float(y @ routing_term @ y) + service_term
    return BrownianParams(drift=theta, variance=variance, upsilon=upsilon)


def simulate_rbm(params: BrownianParams, horizon: float, dt: float, seed: int,
                 n_paths: int, return_paths: bool = False,
                 bridge_correction: bool = True, chunk_steps: int = 256):
    """Reflected Brownian motion started at the origin.

    Returns terminal samples W(horizon) by default; with return_paths the
    full path matrix (n_paths x steps+1) and its time grid come back too.

    With bridge_correction (default) each step uses the conditional law of
    the within-step drawdown, so grid-point marginals are exact for any dt;
    without it the path is the plain running-min reflection of the
    discretized walk, which carries an O(sqrt(dt)) downward bias in the
    reflection term.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    steps = int(round(horizon / dt))
    rng = np.random.default_rng(seed)
    var_dt = max(params.variance, 0.0) * dt
    mu, sd = params.drift * dt, math.sqrt(var_dt)

    def bridge_max(inc: np.ndarray) -> np.ndarray:
        # max of a Brownian bridge from 0 to inc over one step
        u = 1.0 - rng.random(inc.shape)
        return 0.5 * (inc + np.sqrt(inc * inc - 2.0 * var_dt * np.log(u)))

    if return_paths:
        inc = mu + sd * rng.standard_normal((n_paths, steps))
        if bridge_correction and var_dt > 0.0:
            W = np.zeros((n_paths, steps + 1))
            for k in range(steps):
                W[:, k + 1] = np.maximum(W[:, k] + inc[:, k], bridge_max(inc[:, k]))
        else:
            free = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(inc, axis=1)],
                                  axis=1)
            neg = np.minimum.accumulate(np.minimum(free, 0.0), axis=1)
            W = free - neg
        return np.linspace(0.0, horizon, steps + 1), W

    if bridge_correction and var_dt > 0.0:
        W = np.zeros(n_paths)
        done = 0
        while done < steps:
            m = min(chunk_steps, steps - done)
            inc = mu + sd * rng.standard_normal((n_paths, m))
            for k in range(m):
                W = np.maximum(W + inc[:, k], bridge_max(inc[:, k]))
            done += m
        return W

    X = np.zeros(n_paths)
    running_min = np.zeros(n_paths)
    done = 0
    while done < steps:
        m = min(chunk_steps, steps - done)
        inc = mu + sd * rng.standard_normal((n_paths, m))
        block = X[:, None] + np.cumsum(inc, axis=1)
        running_min = np.minimum(running_min, block.min(axis=1))
        X = block[:, -1]
        done += m
    return X - np.minimum(running_min, 0.0)


@dataclass
class QuadraticCost:
    g: np.ndarray            # lower envelope at the given workloads
    q: np.ndarray            # minimizing buffer levels, one row per workload
    H: np.ndarray | None = None  # realized cost path when a ScaledPath was given


def quadratic_cost(target, h, y) -> QuadraticCost:
    """Quadratic holding cost and its closed-form workload envelope.

    Minimizing sum h_i q_i^2 over q >= 0 with y . q = w gives
    q_i = (y_i / h_i) w / sum(y^2 / h) and value w^2 / sum(y^2 / h).
    """
    h = np.asarray(h, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(h <= 0.0):
        raise BadH("holding cost coefficients must be positive")
    denom = float(np.sum(y * y / h))
    H = None
    if isinstance(target, ScaledPath):
        w = target.What
        H = (target.Zhat**2) @ h
    else:
        w = np.atleast_1d(np.asarray(target, dtype=float))
    g = w * w / denom
    q = np.outer(w, y / h) / denom
    return QuadraticCost(g=g, q=q, H=H)


def linear_cost(scaled: ScaledPath, c) -> dict:
    """Linear holding cost path plus its policy-free workload bound."""
    c = np.asarray(c, dtype=float)
    if np.any(c <= 0.0):
        raise ValueError("cost coefficients must be positive")
    C = scaled.Zhat @ c
    with np.errstate(divide="ignore"):
        ratios = np.where(scaled.y > 0.0, c / np.where(scaled.y > 0.0, scaled.y, 1.0), np.inf)
    bound = float(ratios.min()) * scaled.What
    return {
        "C": C,
        "bound": bound,
        "pass": bool(np.all(C >= bound - LOWER_BOUND_TOL)),
    }


def flat_Y_diagnostic(scaled: ScaledPath, zeta, eps0: float, threshold: float) -> dict:
    """On intervals where the path is collapsed and the workload stays above
    the threshold, the idleness-like component must not increase."""
    zeta = np.asarray(zeta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(scaled.What[:, None] > 0.0,
                         scaled.Zhat / np.where(scaled.What[:, None] > 0.0,
                                                scaled.What[:, None], 1.0),
                         np.inf)
    collapsed = np.max(np.abs(ratio - zeta[None, :]), axis=1) <= eps0
    qualifying = (scaled.What >= threshold) & collapsed
    intervals = []
    start = None
    for idx, flag in enumerate(qualifying):
        if flag and start is None:
            start = idx
        elif not flag and start is not None:
            intervals.append((start, idx - 1))
            start = None
    if start is not None:
        intervals.append((start, len(qualifying) - 1))
    report = []
    for lo, hi in intervals:
        inc = float(scaled.Yhat[hi] - scaled.Yhat[lo])
        report.append({
            "t_start": float(scaled.t[lo]),
            "t_end": float(scaled.t[hi]),
            "Y_increment": inc,
        })
    return {
        "intervals": report,
        "pass": all(r["Y_increment"] <= FLAT_Y_TOL for r in report),
    }


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.abs(fa - fb).max())


# ---------------------------------------------------------------------------
# Replication harness.

@dataclass
class HeavyTrafficInstance:
    r: float
    spec: NetworkSpec
    R: np.ndarray
    rho: float
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray


def build_instances(limit_spec: NetworkSpec, theta: float, rs) -> tuple[dict, list[HeavyTrafficInstance]]:
    """LP data for the limit network and each network in the r-sequence."""
    R = input_output_matrix(limit_spec)
    plan = solve_static_planning(R, limit_spec)
    dual = check_complete_resource_pooling(R, limit_spec)
    limit = {
        "spec": limit_spec, "R": R, "rho": plan.rho, "x": plan.x,
        "y": dual.y, "z": dual.z, "pooled": dual.pooled,
    }
    out = []
    for r, spec_r in zip(rs, heavy_traffic_sequence(limit_spec, theta, rs)):
        R_r = input_output_matrix(spec_r)
        plan_r = solve_static_planning(R_r, spec_r)
        dual_r = check_complete_resource_pooling(R_r, spec_r)
        out.append(HeavyTrafficInstance(r, spec_r, R_r, plan_r.rho, plan_r.x,
                                        dual_r.y, dual_r.z))
    return limit, out


@dataclass
class ReplicationPlan:
    """Everything one worker needs to run and summarize one replication."""

    instance: HeavyTrafficInstance
    policy: object
    T: float
    base_seed: int
    zeta: np.ndarray
    x_star: np.ndarray
    h: np.ndarray | None = None
    c: np.ndarray | None = None
    eps0: float = 0.1
    threshold: float = 0.5
    grid_points: int = 512


@dataclass
class ReplicationSummary:
    rep: int
    what_T: float
    xhat_T: float
    yhat_T: float
    ssc: float
    eff: float
    lb_gap: float        # max violation of the reflection lower bound
    hhat_T: float | None
    chat_T: float | None
    flat_pass: bool
    # quadratic-cost gap diagnostics, filled when h is given and h = alpha:
    # sup_t of Hhat - g(What), and whether the collapse-driven pointwise
    # bound max|Zhat - zeta What| * sum h (Zhat + zeta What) held throughout
    hgap_sup: float | None = None
    hgap_bounded: bool = True


def run_one_replication(plan: ReplicationPlan, rep: int) -> ReplicationSummary:
    inst = plan.instance
    r = inst.r
    config = SimConfig(horizon=r * r * plan.T, seed=plan.base_seed, replication=rep,
                       grid_points=plan.grid_points, record_events=False)
    traj = simulate(inst.spec, plan.policy, config, R=inst.R)
    scaled = diffusion_scale(traj, r, inst.y, inst.rho, inst.R, plan.T)
    from .simulate import efficiency_metric

    lb = lower_bound_check(scaled)
    flat = flat_Y_diagnostic(scaled, plan.zeta, plan.eps0, plan.threshold)
    hhat = chat = hgap_sup = None
    hgap_bounded = True
    if plan.h is not None:
        h = np.asarray(plan.h, dtype=float)
        hhat = float((scaled.Zhat[-1] ** 2) @ h)
        H = (scaled.Zhat**2) @ h
        # with h = alpha, g(What) = sum h (zeta What)^2, so the gap is
        # controlled pointwise by the collapse deviation
        zw = np.outer(scaled.What, plan.zeta)
        dev = np.abs(scaled.Zhat - zw).max(axis=1)
        bound = dev * ((scaled.Zhat + zw) @ h)
        hgap = H - (zw**2) @ h
        hgap_sup = float(np.abs(hgap).max())
        hgap_bounded = bool(np.all(hgap <= bound + 1e-9))
    if plan.c is not None:
        chat = float(scaled.Zhat[-1] @ np.asarray(plan.c, dtype=float))
    return ReplicationSummary(
        rep=rep,
        what_T=float(scaled.What[-1]),
        xhat_T=float(scaled.Xhat[-1]),
        yhat_T=float(scaled.Yhat[-1]),
        ssc=ssc_metric(scaled, plan.zeta),
        eff=efficiency_metric(traj, plan.x_star, r, plan.T),
        lb_gap=lb["max_violation"],
        hhat_T=hhat,
        chat_T=chat,
        flat_pass=flat["pass"],
        hgap_sup=hgap_sup,
        hgap_bounded=hgap_bounded,
    )


def _worker(args) -> ReplicationSummary:
    plan, rep = args
    return run_one_replication(plan, rep)


def run_replications(plan: ReplicationPlan, reps: int, jobs: int = 1) -> list[ReplicationSummary]:
    """Replications 0..reps-1, deterministically ordered, fanned out over
    processes when jobs > 1 (results are identical for any jobs)."""
    tasks = [(plan, rep) for rep in range(reps)]
    if jobs <= 1 or reps <= 1:
        return [run_one_replication(plan, rep) for _, rep in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        chunk = max(1, reps // (4 * jobs))
        return list(pool.map(_worker, tasks, chunksize=chunk))


def mean_stderr(values) -> tuple[float, float]:
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))

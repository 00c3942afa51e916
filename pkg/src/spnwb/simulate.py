"""Event-driven simulation of a processing network under a policy.

Buffer levels change only at activity completions, so re-evaluating the
policy at completion epochs reproduces the continuous-review rule exactly;
between events every engaged activity's remaining requirement depletes at
its allocation level and cumulative activity times grow linearly.  All
randomness flows through named substreams keyed by (seed, replication,
activity, purpose) from a counter-based generator, so the primitive
sequences of one activity are identical across policies (common random
numbers) and replications can be fanned out in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .network import (
    EXIT,
    EXTERNAL,
    ActivitySpec,
    ExtremeAllocation,
    NetworkSpec,
    ServiceLaw,
    enumerate_extreme_allocations,
    input_output_matrix,
)
from .policy import (
    LEVEL_TOL,
    PolicyParams,
    SchedulingState,
    baseline_policy,
    max_pressure_allocation,
)

EVENT_TIE_TOL = 1e-12  # relative window for simultaneous completions

PURPOSE_SERVICE = 0
PURPOSE_ROUTING = 1
PURPOSE_POLICY = 2


class NegativeBuffer(RuntimeError):
    """Internal consistency failure; must never fire."""


class DistUnsupported(ValueError):
    pass


class ShortTrajectory(ValueError):
    pass


def substream(base_seed: int, replication: int, *path: int) -> np.random.Generator:
    """Independent named stream from a splittable counter-based generator."""
    ss = np.random.SeedSequence(entropy=int(base_seed),
                                spawn_key=(int(replication), *map(int, path)))
    return np.random.Generator(np.random.Philox(ss))


def draw_service_requirement(activity: ActivitySpec, stream: np.random.Generator) -> float:
    """One processing duration: a unit-mean draw scaled by the activity rate."""
    law = activity.law
    if law.kind not in ("exponential", "deterministic", "uniform", "pareto"):
        raise DistUnsupported(law.kind)
    return law.sample(stream) / activity.rate


# Policy descriptions; bound to a network inside the simulator.  Plain
# dataclasses so replication fan-out can pickle them.

@dataclass(frozen=True)
class MaxPressure:
    alpha: tuple[float, ...]

    name = "maxpressure"


@dataclass(frozen=True)
class RandomPolicy:
    name = "random"


@dataclass(frozen=True)
class PriorityPolicy:
    order: tuple[int, ...]

    name = "priority"


def policy_label(policy) -> str:
    return getattr(policy, "name", policy.__class__.__name__.lower())


@dataclass
class SimConfig:
    horizon: float
    seed: int = 0
    replication: int = 0
    initial_levels: Sequence[int] | None = None
    grid_points: int = 512
    record_events: bool = True
    max_events: int = 10_000_000

    def __post_init__(self):
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")
        if self.initial_levels is not None and any(
            z < 0 or int(z) != z for z in self.initial_levels
        ):
            raise ValueError("initial levels must be nonnegative integers")


@dataclass
class EventRecord:
    time: float
    activity: int
    routings: tuple[tuple[Any, int], ...]  # (source buffer or EXTERNAL, destination idx; I = exit)
    z_after: tuple[int, ...]
    alloc_index: int


@dataclass
class Trajectory:
    spec: NetworkSpec
    horizon: float
    grid_t: np.ndarray
    grid_Z: np.ndarray      # (G, I)
    grid_T: np.ndarray      # (G, J)
    grid_alloc: np.ndarray  # (G,)
    completions: np.ndarray  # (J,) final counts
    final_t: float
    truncated: bool = False
    events: list[EventRecord] | None = None
    event_t: np.ndarray | None = None
    event_Z: np.ndarray | None = None
    event_T: np.ndarray | None = None
    initial_levels: np.ndarray | None = None


def _bind_policy(policy, spec, R, vertices, config):
    if isinstance(policy, MaxPressure):
        params = PolicyParams(np.asarray(policy.alpha, dtype=float))

        def choose(state):
            return max_pressure_allocation(params, state, R, vertices, spec)

        return choose
    if isinstance(policy, RandomPolicy):
        rng = substream(config.seed, config.replication, PURPOSE_POLICY)

        def choose(state):
            return baseline_policy("random-feasible", state, vertices, spec, rng=rng)

        return choose
    if isinstance(policy, PriorityPolicy):
        order = tuple(policy.order)

        def choose(state):
            return baseline_policy("static-priority", state, vertices, spec, order=order)

        return choose
    raise TypeError(f"unknown policy {policy!r}")


def simulate(
    spec: NetworkSpec,
    policy,
    config: SimConfig,
    R: np.ndarray | None = None,
    vertices: Sequence[ExtremeAllocation] | None = None,
) -> Trajectory:
    """Run the network on [0, horizon] and return the recorded trajectory."""
    if R is None:
        R = input_output_matrix(spec)
    if vertices is None:
        vertices = enumerate_extreme_allocations(spec)
    I, J = spec.I, spec.J
    horizon = float(config.horizon)

    svc_streams = [substream(config.seed, config.replication, j, PURPOSE_SERVICE)
                   for j in range(J)]
    route_streams = {}
    route_cum = {}
    for act in spec.activities:
        for src, row in act.routing.items():
            code = I if src == EXTERNAL else int(src)
            route_streams[(act.index, code)] = substream(
                config.seed, config.replication, act.index, PURPOSE_ROUTING, code
            )
            cum = np.cumsum(row)
            cum[-1] = 1.0
            route_cum[(act.index, code)] = cum

    Z = np.zeros(I, dtype=np.int64)
    if config.initial_levels is not None:
        Z[:] = np.asarray(config.initial_levels, dtype=np.int64)
    claimed = np.zeros(I, dtype=np.int64)
    in_progress = np.zeros(J, dtype=bool)
    remaining = np.zeros(J)
    T = np.zeros(J)
    S = np.zeros(J, dtype=np.int64)
    state = SchedulingState(Z, claimed, in_progress)
    chooser = _bind_policy(policy, spec, R, vertices, config)

    grid_t = np.linspace(0.0, horizon, config.grid_points + 1)
    G = len(grid_t)
    grid_Z = np.zeros((G, I))
    grid_T = np.zeros((G, J))
    grid_alloc = np.full(G, -1, dtype=np.int64)
    g = 0

    events: list[EventRecord] = []
    ev_t: list[float] = []
    ev_Z: list[np.ndarray] = []
    ev_T: list[np.ndarray] = []

    t = 0.0
    seg_start = 0.0
    a = np.zeros(J)
    alloc_idx = -1
    service_set = spec.service_activities

    def evaluate_policy():
        nonlocal a, alloc_idx
        chosen = chooser(state)
        a = chosen.levels
        alloc_idx = chosen.index
        for j in range(J):
            if a[j] > LEVEL_TOL and not in_progress[j]:
                remaining[j] = draw_service_requirement(spec.activities[j], svc_streams[j])
                in_progress[j] = True
                if j in service_set:
                    for i in spec.activities[j].constituency:
                        claimed[i] += 1
                        if claimed[i] > Z[i]:
                            raise NegativeBuffer(f"buffer {i} over-claimed at t={t}")

    def record_grid_until(limit: float):
        nonlocal g
        while g < G and grid_t[g] < limit:
            grid_Z[g] = Z
            grid_T[g] = T + a * (grid_t[g] - seg_start)
            grid_alloc[g] = alloc_idx
            g += 1

    def route(j: int, src_code: int) -> int:
        u = route_streams[(j, src_code)].random()
        return int(np.searchsorted(route_cum[(j, src_code)], u, side="right"))

    evaluate_policy()
    n_events = 0
    truncated = False
    while True:
        dt = np.inf
        for j in range(J):
            if in_progress[j] and a[j] > LEVEL_TOL:
                d = remaining[j] / a[j]
                if d < dt:
                    dt = d
        if not np.isfinite(dt):
            # nothing engaged can complete; only possible if every engaged
            # activity is frozen, which the input equalities rule out
            raise NegativeBuffer("no engaged activity can complete")
        t_next = t + dt
        if t_next > horizon + EVENT_TIE_TOL:
            break
        record_grid_until(t_next)
        tol = EVENT_TIE_TOL * max(1.0, dt)
        completers = [j for j in range(J)
                      if in_progress[j] and a[j] > LEVEL_TOL
                      and remaining[j] / a[j] <= dt + tol]
        T += a * dt
        for j in range(J):
            if in_progress[j] and a[j] > LEVEL_TOL:
                remaining[j] -= a[j] * dt
        t = t_next
        seg_start = t

        batch: list[tuple[int, tuple]] = []
        for j in completers:  # ascending activity index by construction
            S[j] += 1
            in_progress[j] = False
            remaining[j] = 0.0
            act = spec.activities[j]
            routings = []
            if act.is_input:
                dst = route(j, I)
                if dst < I:
                    Z[dst] += 1
                routings.append((EXTERNAL, dst))
            else:
                for i in act.constituency:
                    Z[i] -= 1
                    claimed[i] -= 1
                    if Z[i] < 0 or claimed[i] < 0:
                        raise NegativeBuffer(f"buffer {i} negative at t={t}")
                    dst = route(j, i)
                    if dst < I:
                        Z[dst] += 1
                    routings.append((i, dst))
            batch.append((j, tuple(routings)))
            n_events += 1

        evaluate_policy()
        if config.record_events and n_events <= config.max_events:
            for j, routings in batch:
                events.append(EventRecord(t, j, routings, tuple(int(z) for z in Z),
                                          alloc_idx))
                ev_t.append(t)
                ev_Z.append(Z.astype(float).copy())
                ev_T.append(T.copy())
        if n_events >= config.max_events:
            truncated = t < horizon
            break

    final_t = min(t if truncated else horizon, horizon)
    if not truncated:
        # grid points from the last event through the horizon, inclusive
        while g < G:
            grid_Z[g] = Z
            grid_T[g] = T + a * (grid_t[g] - t)
            grid_alloc[g] = alloc_idx
            g += 1
    else:
        record_grid_until(final_t)
        grid_t = grid_t[:g]
        grid_Z, grid_T, grid_alloc = grid_Z[:g], grid_T[:g], grid_alloc[:g]

    traj = Trajectory(
        spec=spec,
        horizon=horizon,
        grid_t=grid_t,
        grid_Z=grid_Z,
        grid_T=grid_T,
        grid_alloc=grid_alloc,
        completions=S,
        final_t=final_t,
        truncated=truncated,
        initial_levels=(np.asarray(config.initial_levels, dtype=np.int64).copy()
                        if config.initial_levels is not None else np.zeros(I, dtype=np.int64)),
    )
    if config.record_events:
        traj.events = events
        traj.event_t = np.array(ev_t)
        traj.event_Z = np.array(ev_Z) if ev_Z else np.zeros((0, I))
        traj.event_T = np.array(ev_T) if ev_T else np.zeros((0, J))
    return traj


def compute_workload_path(traj: Trajectory, y, which: str = "grid") -> np.ndarray:
    """W(t) = y . Z(t), piecewise constant between events."""
    y = np.asarray(y, dtype=float)
    Zs = traj.grid_Z if which == "grid" else traj.event_Z
    return Zs @ y


def compute_Y_path(traj: Trajectory, y, rho: float, R: np.ndarray,
                   which: str = "grid") -> tuple[np.ndarray, np.ndarray]:
    """Idleness-like deviation Y(t) = (1 - rho) t - y . R T(t), and the
    free part X(t) = W(t) - Y(t), on the requested sample points."""
    y = np.asarray(y, dtype=float)
    if which == "grid":
        ts, Ts = traj.grid_t, traj.grid_T
    else:
        ts, Ts = traj.event_t, traj.event_T
    yR = y @ R
    Y = (1.0 - rho) * ts - Ts @ yR
    X = compute_workload_path(traj, y, which) - Y
    return Y, X


def efficiency_metric(traj: Trajectory, x_star, r: float, T_end: float) -> float:
    """Largest deviation of scaled activity times from the nominal plan:
    sup over grid t <= T_end of max_j |T_j(r^2 t)/r^2 - x*_j t|."""
    span = r * r * T_end
    if traj.truncated or traj.horizon + 1e-9 < span:
        raise ShortTrajectory(f"trajectory covers {traj.final_t}, need {span}")
    x_star = np.asarray(x_star, dtype=float)
    mask = traj.grid_t <= span + 1e-9
    ts = traj.grid_t[mask] / (r * r)
    Ts = traj.grid_T[mask] / (r * r)
    dev = np.abs(Ts - ts[:, None] * x_star[None, :])
    return float(dev.max())

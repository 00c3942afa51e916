"""Scheduling policies over the extreme allocations.

The max-pressure rule scores each feasible extreme allocation by the
weighted net drain rate it would apply to the current buffer levels and
picks the highest, breaking ties by the deterministic enumeration index.
Baseline policies (seeded random choice, static priority) share the same
feasibility machinery so experiments can swap policies under common random
numbers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .network import ExtremeAllocation, NetworkSpec

LEVEL_TOL = 1e-12  # a_j below this counts as "activity not engaged"


class UnknownKind(ValueError):
    pass


@dataclass(frozen=True)
class PolicyParams:
    alpha: np.ndarray  # positive pressure weight per buffer

    def __post_init__(self):
        if np.any(np.asarray(self.alpha) <= 0.0):
            raise ValueError("alpha must be strictly positive")


@dataclass
class SchedulingState:
    """Snapshot of what the policy may look at.

    claimed[i] counts jobs in buffer i currently held by in-progress
    (active or frozen) activities; in_progress[j] marks activities holding
    a partially processed requirement.
    """

    levels: np.ndarray       # Z, integer buffer levels
    claimed: np.ndarray      # jobs held by in-progress activities, per buffer
    in_progress: np.ndarray  # bool per activity


def network_pressure(alpha, levels, R: np.ndarray, a) -> float:
    """Weighted net drain rate (alpha x Z) . R a of allocation a at Z."""
    alpha = np.asarray(alpha, dtype=float)
    z = np.asarray(levels, dtype=float)
    return float((alpha * z) @ (R @ np.asarray(a, dtype=float)))


def feasible_extreme_allocations(
    state: SchedulingState,
    vertices: Sequence[ExtremeAllocation],
    spec: NetworkSpec,
) -> list[ExtremeAllocation]:
    """Vertices that can actually be employed at this state.

    An engaged service activity either resumes its frozen requirement or
    must claim one fresh head-of-line job per constituent buffer; jointly,
    the fresh starters engaged by the vertex may not claim more jobs from a
    buffer than it holds unclaimed.  Input activities draw on the outside
    world and are always feasible.
    """
    unclaimed = state.levels - state.claimed
    service = spec.service_activities
    B = spec.constituency
    out = []
    for vert in vertices:
        a = vert.levels
        need = np.zeros(spec.I, dtype=np.int64)
        ok = True
        for j in service:
            if a[j] > LEVEL_TOL and not state.in_progress[j]:
                need += B[j]
        if np.any(need > unclaimed):
            ok = False
        if ok:
            out.append(vert)
    return out


def max_pressure_allocation(
    params: PolicyParams,
    state: SchedulingState,
    R: np.ndarray,
    vertices: Sequence[ExtremeAllocation],
    spec: NetworkSpec,
) -> ExtremeAllocation:
    """Feasible vertex with maximal pressure, smallest index on ties.

    Ties are detected within a window relative to the pressure magnitude so
    that rescaling alpha (which rescales every pressure identically up to
    rounding) never flips the chosen index.
    """
    feas = feasible_extreme_allocations(state, vertices, spec)
    weighted = params.alpha * state.levels
    pressures = [float(weighted @ (R @ vert.levels)) for vert in feas]
    assert pressures, "the all-input vertex is always feasible"
    p_star = max(pressures)
    tol = 1e-9 * max(abs(p) for p in pressures)
    for vert, p in zip(feas, pressures):
        if p >= p_star - tol:
            return vert
    raise AssertionError("unreachable")


def baseline_policy(
    kind: str,
    state: SchedulingState,
    vertices: Sequence[ExtremeAllocation],
    spec: NetworkSpec,
    rng: np.random.Generator | None = None,
    order: Sequence[int] | None = None,
) -> ExtremeAllocation:
    """Comparison policies: seeded uniform choice or fixed vertex priority."""
    feas = feasible_extreme_allocations(state, vertices, spec)
    if kind == "random-feasible":
        if rng is None:
            raise ValueError("random-feasible needs the caller's rng stream")
        return feas[int(rng.integers(len(feas)))]
    if kind == "static-priority":
        if order is None:
            raise ValueError("static-priority needs a vertex order")
        feas_idx = {v.index for v in feas}
        for idx in order:
            if idx in feas_idx:
                return vertices[idx]
        # fall through to any feasible vertex if the order is partial
        return feas[0]
    raise UnknownKind(f"unknown baseline policy {kind!r}")

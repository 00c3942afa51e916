"""Static network description, validation, and first-order data.

A processing network has I buffers (plus the outside world as a virtual
source), J activities and K processors.  An activity consumes one job from
each buffer in its constituency and occupies a fixed set of processors while
it runs; input activities draw from the outside world and generate arrivals,
service activities drain internal buffers.  Everything downstream (planning
LPs, policies, simulation, fluid model) is driven by the validated spec, the
net-drain matrix R and the extreme points of the allocation polytope built
here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Any, Sequence

import numpy as np

PROB_TOL = 1e-12      # routing rows must sum to 1 within this
VERTEX_TOL = 1e-9     # feasibility / dedup tolerance for polytope vertices
EXTERNAL = "external"
EXIT = "exit"

SERVICE_LAWS = ("exponential", "deterministic", "uniform", "pareto")
MIN_PARETO_SHAPE = 2.5  # keeps 2+eps moments with margin


class NetworkError(ValueError):
    """Invalid network description."""


class MixedActivity(NetworkError):
    """Activity serves both the outside world and an internal buffer."""


class MixedProcessor(NetworkError):
    """Processor is shared between input and service activities."""


class BadRouting(NetworkError):
    """Routing row malformed or does not sum to one."""


class NoInputActivity(NetworkError):
    pass


class BadLaw(NetworkError):
    """Service-time law outside the supported family."""


class TooLarge(NetworkError):
    """Vertex enumeration guard exceeded."""


class EmptyPolytope(NetworkError):
    """No allocation satisfies the input-processor equalities."""


@dataclass(frozen=True)
class ServiceLaw:
    """Unit-mean processing-requirement law for one activity.

    The draw u has mean 1 by construction; actual durations are u / rate.
    """

    kind: str
    width: float = 0.0   # uniform half-width, must be < 1
    shape: float = 0.0   # pareto tail index, must exceed MIN_PARETO_SHAPE

    def __post_init__(self):
        if self.kind not in SERVICE_LAWS:
            raise BadLaw(f"unknown service law {self.kind!r}")
        if self.kind == "uniform" and not 0.0 <= self.width < 1.0:
            raise BadLaw(f"uniform width must be in [0, 1), got {self.width}")
        if self.kind == "pareto" and not self.shape > MIN_PARETO_SHAPE:
            raise BadLaw(
                f"pareto shape must exceed {MIN_PARETO_SHAPE}, got {self.shape}"
            )

    @property
    def variance(self) -> float:
        """Variance of the unit-mean draw (squared coefficient of variation)."""
        if self.kind == "exponential":
            return 1.0
        if self.kind == "deterministic":
            return 0.0
        if self.kind == "uniform":
            return self.width**2 / 3.0
        # classical Pareto scaled to mean 1: x_m = (b-1)/b
        b = self.shape
        return 1.0 / (b * (b - 2.0))

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "deterministic":
            return 1.0
        if self.kind == "exponential":
            return rng.exponential(1.0)
        if self.kind == "uniform":
            return rng.uniform(1.0 - self.width, 1.0 + self.width)
        b = self.shape
        return (b - 1.0) / b * (1.0 + rng.pareto(b))


@dataclass(frozen=True)
class ProcessorSpec:
    id: str
    index: int
    kind: str  # "input" | "service"


@dataclass(frozen=True, eq=False)
class ActivitySpec:
    """One processing mode.

    ``routing[src]`` is a length I+1 probability vector over destinations:
    entries 0..I-1 are internal buffers, the last entry is the exit mass.
    Input activities have the single source EXTERNAL; service activities
    have one source row per constituent buffer index.
    """

    id: str
    index: int
    is_input: bool
    processors: tuple[int, ...]
    constituency: tuple[int, ...]  # internal buffer indices, empty for input
    rate: float
    law: ServiceLaw
    routing: dict[Any, np.ndarray]


@dataclass(eq=False)
class NetworkSpec:
    """Validated network, immutable after construction."""

    buffer_count: int
    processors: tuple[ProcessorSpec, ...]
    activities: tuple[ActivitySpec, ...]
    consumption: np.ndarray   # A, K x J binary
    constituency: np.ndarray  # B, J x I binary

    @property
    def I(self) -> int:
        return self.buffer_count

    @property
    def J(self) -> int:
        return len(self.activities)

    @property
    def K(self) -> int:
        return len(self.processors)

    @property
    def input_activities(self) -> tuple[int, ...]:
        return tuple(a.index for a in self.activities if a.is_input)

    @property
    def service_activities(self) -> tuple[int, ...]:
        return tuple(a.index for a in self.activities if not a.is_input)

    @property
    def input_processors(self) -> tuple[int, ...]:
        return tuple(p.index for p in self.processors if p.kind == "input")

    @property
    def service_processors(self) -> tuple[int, ...]:
        return tuple(p.index for p in self.processors if p.kind == "service")


@dataclass(frozen=True, eq=False)
class ExtremeAllocation:
    """Vertex of the allocation polytope, with its tie-break index."""

    levels: np.ndarray
    index: int


def _parse_law(dist: Any) -> ServiceLaw:
    if not isinstance(dist, dict) or "type" not in dist:
        raise BadLaw(f"service_dist must be {{type, params}}, got {dist!r}")
    params = dist.get("params", {}) or {}
    kind = dist["type"]
    if kind == "uniform":
        return ServiceLaw("uniform", width=float(params.get("c", params.get("width", 0.0))))
    if kind == "pareto":
        return ServiceLaw("pareto", shape=float(params.get("shape", 0.0)))
    return ServiceLaw(kind)


def _buffer_index(ref: Any, buffer_count: int, context: str) -> int:
    """Map an external buffer id (1..I) to the internal index (0..I-1)."""
    if not isinstance(ref, int) or isinstance(ref, bool):
        raise NetworkError(f"{context}: buffer id must be an integer, got {ref!r}")
    if not 1 <= ref <= buffer_count:
        raise NetworkError(f"{context}: buffer id {ref} out of range 1..{buffer_count}")
    return ref - 1


def _parse_routing_row(entries: Any, buffer_count: int, context: str) -> np.ndarray:
    row = np.zeros(buffer_count + 1)
    if not isinstance(entries, (list, tuple)):
        raise BadRouting(f"{context}: routing row must be a list of {{to, p}}")
    for entry in entries:
        try:
            dest, p = entry["to"], float(entry["p"])
        except (TypeError, KeyError) as exc:
            raise BadRouting(f"{context}: malformed routing entry {entry!r}") from exc
        if not -PROB_TOL <= p <= 1.0 + PROB_TOL:
            raise BadRouting(f"{context}: probability {p} outside [0, 1]")
        if dest == EXIT:
            row[buffer_count] += p
        else:
            row[_buffer_index(dest, buffer_count, context)] += p
    if abs(row.sum() - 1.0) > PROB_TOL:
        raise BadRouting(f"{context}: routing row sums to {row.sum()!r}, expected 1")
    return row


def validate_network(raw: dict) -> NetworkSpec:
    """Parse and validate a raw network description.

    Raises MixedActivity, MixedProcessor, BadRouting, NoInputActivity,
    BadLaw or NetworkError on the violations described in the format docs.
    """
    if not isinstance(raw, dict):
        raise NetworkError("network description must be a mapping")
    try:
        buffer_count = int(raw["buffers"])
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkError("missing or invalid 'buffers' count") from exc
    if buffer_count < 1:
        raise NetworkError("buffer count must be a positive integer")

    processors: list[ProcessorSpec] = []
    proc_index: dict[str, int] = {}
    for k, p in enumerate(raw.get("processors", [])):
        pid, kind = str(p["id"]), p["kind"]
        if kind not in ("input", "service"):
            raise NetworkError(f"processor {pid}: kind must be input or service")
        if pid in proc_index:
            raise NetworkError(f"duplicate processor id {pid}")
        proc_index[pid] = k
        processors.append(ProcessorSpec(pid, k, kind))
    if not processors:
        raise NetworkError("at least one processor is required")

    activities: list[ActivitySpec] = []
    seen_ids: set[str] = set()
    for j, a in enumerate(raw.get("activities", [])):
        aid = str(a.get("id", f"activity-{j}"))
        if aid in seen_ids:
            raise NetworkError(f"duplicate activity id {aid}")
        seen_ids.add(aid)

        cons = a.get("constituency")
        if cons == EXTERNAL:
            is_input, constituency = True, ()
        elif isinstance(cons, (list, tuple)):
            if len(cons) == 0:
                raise NetworkError(f"activity {aid}: constituency is empty")
            if any(c in (EXTERNAL, 0) for c in cons):
                raise MixedActivity(
                    f"activity {aid} serves the outside world and internal buffers"
                )
            is_input = False
            constituency = tuple(
                sorted(_buffer_index(c, buffer_count, f"activity {aid}") for c in cons)
            )
            if len(set(constituency)) != len(constituency):
                raise NetworkError(f"activity {aid}: duplicate constituency buffer")
        else:
            raise NetworkError(f"activity {aid}: constituency must be a list or 'external'")

        kind = a.get("kind")
        if kind is not None and kind not in ("input", "service"):
            raise NetworkError(f"activity {aid}: kind must be input or service")
        if kind == "input" and not is_input or kind == "service" and is_input:
            raise MixedActivity(f"activity {aid}: kind {kind!r} contradicts constituency")

        rate = float(a.get("rate", 0.0))
        if not rate > 0.0 or not math.isfinite(rate):
            raise NetworkError(f"activity {aid}: rate must be positive and finite")

        used = a.get("processors", [])
        if not used:
            raise NetworkError(f"activity {aid}: must use at least one processor")
        proc_idx = []
        for pid in used:
            if str(pid) not in proc_index:
                raise NetworkError(f"activity {aid}: unknown processor {pid!r}")
            k = proc_index[str(pid)]
            expected = "input" if is_input else "service"
            if processors[k].kind != expected:
                raise MixedProcessor(
                    f"processor {pid} would process both input and service activities"
                )
            proc_idx.append(k)
        proc_idx = tuple(sorted(set(proc_idx)))

        law = _parse_law(a.get("service_dist", {"type": "exponential"}))

        raw_routing = a.get("routing", {})
        routing: dict[Any, np.ndarray] = {}
        if is_input:
            if set(raw_routing) != {EXTERNAL}:
                raise BadRouting(f"activity {aid}: input routing needs the single source 'external'")
            routing[EXTERNAL] = _parse_routing_row(
                raw_routing[EXTERNAL], buffer_count, f"activity {aid}"
            )
        else:
            srcs = set()
            for key, entries in raw_routing.items():
                src = _buffer_index(int(key), buffer_count, f"activity {aid}")
                srcs.add(src)
                routing[src] = _parse_routing_row(entries, buffer_count, f"activity {aid}")
            if srcs != set(constituency):
                raise BadRouting(
                    f"activity {aid}: routing sources {sorted(srcs)} do not match "
                    f"constituency {list(constituency)}"
                )

        activities.append(
            ActivitySpec(aid, j, is_input, proc_idx, constituency, rate, law, routing)
        )

    if not activities:
        raise NetworkError("at least one activity is required")
    if not any(a.is_input for a in activities):
        raise NoInputActivity("network has no input activity")

    K, J = len(processors), len(activities)
    consumption = np.zeros((K, J), dtype=np.int8)
    constituency_mat = np.zeros((J, buffer_count), dtype=np.int8)
    for a in activities:
        for k in a.processors:
            consumption[k, a.index] = 1
        for i in a.constituency:
            constituency_mat[a.index, i] = 1

    return NetworkSpec(buffer_count, tuple(processors), tuple(activities),
                       consumption, constituency_mat)


def load_network(path) -> NetworkSpec:
    """Load and validate a network spec file (single JSON document)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise NetworkError(f"parse error: {exc}") from exc
    return validate_network(raw)


def input_output_matrix(spec: NetworkSpec) -> np.ndarray:
    """Net drain rate of each buffer per unit of each activity.

    R[i, j] = rate_j * (B[j, i] - sum over sources i' of P^j[i', i]); a
    negative entry means activity j is a net producer into buffer i.
    """
    R = np.zeros((spec.I, spec.J))
    for a in spec.activities:
        inflow = np.zeros(spec.I)
        for row in a.routing.values():
            inflow += row[: spec.I]
        R[:, a.index] = a.rate * (spec.constituency[a.index].astype(float) - inflow)
    return R


def _dedup_append(vertices: list[np.ndarray], candidate: np.ndarray) -> bool:
    for v in vertices:
        if np.max(np.abs(v - candidate)) <= VERTEX_TOL:
            return False
    vertices.append(candidate)
    return True


def enumerate_extreme_allocations(
    spec: NetworkSpec, max_dim: int = 24, max_bases: int = 5_000_000
) -> list[ExtremeAllocation]:
    """All vertices of the allocation polytope, in deterministic order.

    The polytope is {a >= 0 : A a <= 1, with equality on input-processor
    rows}.  Vertices are found by enumerating active-constraint bases; the
    inequality constraints are ordered nonnegativity-first (by activity),
    then service rows (by processor), and bases are visited lexicographically,
    which fixes the tie-break order used by the scheduling policy.
    """
    J, K = spec.J, spec.K
    if J + K > max_dim:
        raise TooLarge(f"J + K = {J + K} exceeds the enumeration guard {max_dim}")

    A = spec.consumption.astype(float)
    eq_rows = A[list(spec.input_processors)]
    svc_rows = A[list(spec.service_processors)]

    # Gradient rows of the inequality constraints in tie-break order.
    ineq_grads = [np.eye(J)[j] for j in range(J)]          # a_j >= 0
    ineq_grads += [svc_rows[s] for s in range(len(svc_rows))]  # service capacity
    n_ineq = len(ineq_grads)

    rank_eq = np.linalg.matrix_rank(eq_rows, tol=1e-10) if len(eq_rows) else 0
    d = J - rank_eq
    if d < 0:
        raise EmptyPolytope("input equalities are overdetermined")
    if math.comb(n_ineq, d) > max_bases:
        raise TooLarge(f"{math.comb(n_ineq, d)} candidate bases exceed {max_bases}")

    def feasible(a: np.ndarray) -> bool:
        if np.min(a) < -VERTEX_TOL:
            return False
        if len(eq_rows) and np.max(np.abs(eq_rows @ a - 1.0)) > VERTEX_TOL:
            return False
        if len(svc_rows) and np.max(svc_rows @ a - 1.0) > VERTEX_TOL:
            return False
        return True

    found: list[np.ndarray] = []
    for combo in combinations(range(n_ineq), d):
        rows = [eq_rows[r] for r in range(len(eq_rows))] + [ineq_grads[c] for c in combo]
        grads = np.array(rows) if rows else np.zeros((0, J))
        if np.linalg.matrix_rank(grads, tol=1e-10) < J:
            continue
        rhs = np.concatenate(
            [np.ones(len(eq_rows)), [0.0 if c < J else 1.0 for c in combo]]
        )
        a, residual, *_ = np.linalg.lstsq(grads, rhs, rcond=None)
        if np.max(np.abs(grads @ a - rhs)) > VERTEX_TOL:
            continue  # chosen constraints are inconsistent at rank J
        if feasible(a):
            _dedup_append(found, a)

    if not found:
        raise EmptyPolytope("no allocation satisfies the input-processor equalities")
    return [ExtremeAllocation(np.where(np.abs(v) < VERTEX_TOL, 0.0, v), i)
            for i, v in enumerate(found)]


def allocation_residual(spec: NetworkSpec, a: np.ndarray) -> float:
    """Largest violation of the allocation-polytope constraints at a."""
    A = spec.consumption.astype(float)
    worst = max(0.0, float(np.max(-a, initial=0.0)))
    usage = A @ a
    for k in spec.input_processors:
        worst = max(worst, abs(usage[k] - 1.0))
    for k in spec.service_processors:
        worst = max(worst, usage[k] - 1.0)
    return worst

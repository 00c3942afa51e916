"""Deterministic fluid dynamics under the max-pressure rule.

Between breakpoints the fluid state moves with a constant velocity drawn
from the pressure-maximizing face of the drain-rate polytope V = {R a}.
When the face is a single vertex this is plain vertex-following; when the
trajectory reaches a switching surface the dynamics slides, and the correct
(and unique, in the subgradient-flow sense) velocity is the minimum-norm
point of the face in the alpha-weighted metric, restricted to not drain
empty buffers.  That selection is computed exactly with Wolfe's min-norm
point algorithm over the face's vertex set, so sliding segments (including
the post-collapse stationary regime of a critical network) are resolved in
closed form instead of chattering.

Also here: the Lyapunov certificate of the collapse, the sampled estimate
of the neighborhood radius delta that drives the decay rate, the resulting
collapse-time bound, and the extreme-allocation-available (EAA) check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .lp import solve_lp
from .network import ExtremeAllocation, NetworkSpec, enumerate_extreme_allocations
from .planning import check_complete_resource_pooling, collapse_direction

FACE_TOL = 1e-9        # pressure gap below which a vertex joins the argmax face
ZERO_LEVEL = 1e-12     # fluid level treated as an empty buffer
CLAMP_TOL = 1e-14      # breakpoint hygiene clamp
VELOCITY_TOL = 1e-11   # velocity below this is a stationary segment
MIN_SEGMENT = 1e-12
SLOPE_TOL = 1e-9


class EAAViolated(RuntimeError):
    """No pressure-maximizing extreme allocation drains only filled buffers."""


class ChatterGuard(RuntimeError):
    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


class NotPooled(ValueError):
    pass


class BadDelta(ValueError):
    pass


@dataclass
class FluidSegment:
    t0: float
    t1: float
    allocation: np.ndarray   # dT/dt, a point of the allocation polytope
    velocity: np.ndarray     # net drain rate R . allocation
    support: tuple[int, ...]  # extreme-allocation indices carrying the mix


@dataclass
class FluidTrajectory:
    times: np.ndarray        # breakpoints, increasing, last = horizon
    levels: np.ndarray       # (B, I) fluid levels at breakpoints
    activity: np.ndarray     # (B, J) cumulative activity times
    workload: np.ndarray     # y* . levels
    lyapunov: np.ndarray     # collapse Lyapunov value at breakpoints
    segments: list[FluidSegment]
    euler_fallback: bool = False

    def levels_at(self, t) -> np.ndarray:
        """Piecewise-linear interpolation (exact between breakpoints)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((t.size, self.levels.shape[1]))
        for col in range(self.levels.shape[1]):
            out[:, col] = np.interp(t, self.times, self.levels[:, col])
        return out if out.shape[0] > 1 else out[0]


def lyapunov_value(zbar, alpha, zeta, y_star) -> float:
    """Weighted squared distance from the collapsed state zeta * (y . z)."""
    zbar = np.asarray(zbar, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    dev = zbar - np.asarray(zeta, float) * float(np.asarray(y_star, float) @ zbar)
    return float((alpha * dev) @ dev)


# ---------------------------------------------------------------------------
# Exact min-norm point machinery for sliding segments.

def _min_norm_point(points: np.ndarray, tol: float = 1e-13):
    """Wolfe's algorithm: weights w over the rows of `points` such that
    x = w @ points is the minimum-Euclidean-norm point of their hull."""
    n = points.shape[0]
    norms = np.einsum("ij,ij->i", points, points)
    start = int(np.argmin(norms))
    corral = [start]
    w = np.array([1.0])
    x = points[start].copy()
    scale = max(1.0, float(norms.max()))
    for _ in range(200 * max(1, n)):
        dots = points @ x
        cand = int(np.argmin(dots))
        if dots[cand] >= x @ x - tol * scale:
            break
        if cand not in corral:
            corral.append(cand)
            w = np.append(w, 0.0)
        # minor cycle: affine minimization over the corral
        for _ in range(200 * max(1, n)):
            P = points[corral]
            k = len(corral)
            M = np.zeros((k + 1, k + 1))
            M[:k, :k] = 2.0 * (P @ P.T)
            M[:k, k] = 1.0
            M[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            lam = np.linalg.lstsq(M, rhs, rcond=None)[0][:k]
            if np.all(lam > tol):
                w = lam
                x = lam @ P
                break
            # step to the boundary of the simplex toward the affine minimizer
            diffs = w - lam
            with np.errstate(divide="ignore", invalid="ignore"):
                steps = np.where(diffs > tol, w / diffs, np.inf)
            theta = float(np.min(steps))
            if not np.isfinite(theta) or theta <= 0.0:
                break
            w = (1.0 - theta) * w + theta * lam
            w[w < tol] = 0.0
            keep = w > 0.0
            corral = [c for c, k_ in zip(corral, keep) if k_]
            w = w[keep]
            x = w @ points[corral]
        else:
            break
    full = np.zeros(n)
    full[corral] = w
    return full, x


def _beta_polytope_vertices(n: int, rows: np.ndarray, max_bases: int = 200_000):
    """Vertices of {beta in the simplex : rows @ beta <= 0}.

    rows stacks the drain rates of the currently empty buffers.  Bases are
    enumerated lexicographically over (nonnegativity, boundary) constraints.
    """
    grads = [np.eye(n)[m] for m in range(n)] + [-rows[r] for r in range(len(rows))]
    d = n - 1  # the simplex equality uses one degree of freedom
    if math.comb(len(grads), d) > max_bases:
        return None
    ones = np.ones((1, n))
    verts: list[np.ndarray] = []
    for combo in combinations(range(len(grads)), d):
        Gm = np.vstack([ones] + [grads[c] for c in combo])
        if np.linalg.matrix_rank(Gm, tol=1e-10) < n:
            continue
        rhs = np.zeros(n)
        rhs[0] = 1.0
        beta = np.linalg.lstsq(Gm, rhs, rcond=None)[0]
        if np.max(np.abs(Gm @ beta - rhs)) > 1e-9:
            continue
        if np.min(beta) < -1e-9 or (len(rows) and np.max(rows @ beta) > 1e-9):
            continue
        beta = np.clip(beta, 0.0, None)
        beta /= beta.sum()
        if not any(np.max(np.abs(beta - v)) <= 1e-9 for v in verts):
            verts.append(beta)
    return verts


def _sliding_velocity(G_face: np.ndarray, alpha: np.ndarray, zero_rows: np.ndarray):
    """Minimum alpha-norm drain rate over the face, not draining empty buffers.

    G_face has one column per face vertex (columns are drain-rate vectors);
    zero_rows indexes buffers currently at level zero.  Returns (beta, v) or
    None when the constrained face is empty.
    """
    m = G_face.shape[1]
    D = np.sqrt(alpha)
    if len(zero_rows) == 0:
        pts = (D[:, None] * G_face).T  # one point per vertex
        beta, u = _min_norm_point(pts)
        return beta, u / D
    rows = G_face[zero_rows]
    verts = _beta_polytope_vertices(m, rows)
    if verts is None:
        return None  # too big; caller falls back
    if not verts:
        return "infeasible"
    pts = np.array([D * (G_face @ b) for b in verts])
    wts, u = _min_norm_point(pts)
    beta = np.zeros(m)
    for wt, b in zip(wts, verts):
        beta += wt * b
    return beta, u / D


def _stationary_mix(G_face: np.ndarray) -> np.ndarray | None:
    """Exact zero-velocity mix over the face via LP, if one exists."""
    m = G_face.shape[1]
    dim = G_face.shape[0]
    # min t  s.t.  -t <= (G beta)_i <= t,  beta in simplex
    n = m + 1
    c = np.zeros(n)
    c[m] = 1.0
    a_ub = np.zeros((2 * dim, n))
    a_ub[:dim, :m] = G_face
    a_ub[:dim, m] = -1.0
    a_ub[dim:, :m] = -G_face
    a_ub[dim:, m] = -1.0
    a_eq = np.zeros((1, n))
    a_eq[0, :m] = 1.0
    res = solve_lp(c, a_eq, np.ones(1), a_ub, np.zeros(2 * dim))
    if res.objective <= 1e-12:
        return res.x[:m]
    return None


# ---------------------------------------------------------------------------

def check_EAA(spec: NetworkSpec, R: np.ndarray, vertices, q):
    """Does some pressure-maximizing extreme allocation touch only nonempty
    buffers at weights q?  Returns (ok, witness levels or the argmax set)."""
    q = np.asarray(q, dtype=float)
    drains = [v.levels @ R.T for v in vertices]  # R a per vertex
    scores = np.array([d @ q for d in drains])
    best = scores.max()
    argmax = [v for v, s in zip(vertices, scores) if s >= best - FACE_TOL]
    B = spec.constituency
    for v in argmax:
        touched = (B.T @ (v.levels > ZERO_LEVEL)).astype(bool)
        if np.all(q[touched] > 0.0):
            return True, v.levels
    return False, [v.levels for v in argmax]


def check_EAA_sampled(spec, R, vertices, y_star, samples: int = 50, seed: int = 0):
    """EAA check at y* and at seeded random nonnegative weight vectors."""
    rng = np.random.default_rng(seed)
    results = [check_EAA(spec, R, vertices, y_star)[0]]
    for _ in range(samples):
        q = rng.uniform(0.0, 1.0, size=spec.I)
        results.append(check_EAA(spec, R, vertices, q)[0])
    return all(results)


def integrate_fluid(
    spec: NetworkSpec,
    R: np.ndarray,
    alpha,
    y_star,
    z0,
    horizon: float,
    vertices=None,
    max_segments: int = 1_000_000,
    min_segment: float = MIN_SEGMENT,
    euler_fallback: bool = True,
    euler_step: float = 1e-4,
) -> FluidTrajectory:
    """Integrate the pressure-maximizing fluid dynamics from z0 to horizon."""
    alpha = np.asarray(alpha, dtype=float)
    y_star = np.asarray(y_star, dtype=float)
    zbar = np.asarray(z0, dtype=float).copy()
    if np.any(zbar < 0.0):
        raise ValueError("initial fluid levels must be nonnegative")
    if vertices is None:
        vertices = enumerate_extreme_allocations(spec)
    levels_mat = np.array([v.levels for v in vertices])       # (E, J)
    G = (R @ levels_mat.T)                                    # (I, E) drain rates
    zeta = collapse_direction(y_star, alpha).zeta
    B = spec.constituency

    times = [0.0]
    zs = [zbar.copy()]
    tbar = np.zeros(spec.J)
    tbars = [tbar.copy()]
    segments: list[FluidSegment] = []
    t = 0.0
    tiny_run = 0
    fell_back = False

    def touched_ok(col: int) -> bool:
        touched = (B.T @ (levels_mat[col] > ZERO_LEVEL)).astype(bool)
        return bool(np.all(zbar[touched] > ZERO_LEVEL))

    while t < horizon - 1e-15:
        if len(segments) >= max_segments:
            raise ChatterGuard(f"{max_segments} segments exceeded", state=zbar.copy())
        weighted = alpha * zbar
        pressures = weighted @ G
        p_star = float(pressures.max())
        scale = max(1.0, float(np.max(np.abs(pressures))))
        face = np.flatnonzero(pressures >= p_star - FACE_TOL * scale)
        if not any(touched_ok(c) for c in face):
            raise EAAViolated(
                f"no argmax allocation drains only filled buffers at z={zbar}, t={t}"
            )
        zero_rows = np.flatnonzero(zbar <= ZERO_LEVEL)
        Gf = G[:, face]

        beta_face = None
        stat = _stationary_mix(Gf)
        if stat is not None:
            beta_face, v = stat, np.zeros(spec.I)
        else:
            sol = _sliding_velocity(Gf, alpha, zero_rows)
            if sol == "infeasible":
                raise EAAViolated(
                    f"argmax face cannot avoid draining empty buffers at z={zbar}"
                )
            if sol is None:
                fell_back = True
                break
            beta_face, v = sol

        alloc = levels_mat[face].T @ beta_face
        support = tuple(int(face[m]) for m in np.flatnonzero(beta_face > 1e-10))

        if np.max(np.abs(v)) <= VELOCITY_TOL:
            # stationary: nothing changes until the horizon
            seg_len = horizon - t
            segments.append(FluidSegment(t, horizon, alloc, np.zeros(spec.I), support))
            tbar = tbar + seg_len * alloc
            t = horizon
            times.append(t)
            zs.append(zbar.copy())
            tbars.append(tbar.copy())
            break

        # pressure decay rates; support members must agree for a valid slide
        w_all = G.T @ (alpha * v)
        w_support = w_all[list(support)]
        if w_support.size and (w_support.max() - w_support.min()) > SLOPE_TOL * scale:
            fell_back = True
            break

        s_end = horizon - t
        hit = None
        for i in range(spec.I):
            if v[i] > VELOCITY_TOL and zbar[i] > ZERO_LEVEL:
                s_i = zbar[i] / v[i]
                if s_i < s_end:
                    s_end, hit = s_i, i
        lam = float(w_support.max()) if w_support.size else 0.0
        for m in range(G.shape[1]):
            if m in face:
                continue
            sigma = lam - w_all[m]
            if sigma > SLOPE_TOL:
                gap = max(p_star - pressures[m], 0.0)
                s_m = gap / sigma
                if s_m < s_end:
                    s_end = s_m
                    hit = None  # a pressure tie, not a boundary hit, ends the segment
        if s_end < min_segment:
            tiny_run += 1
            if tiny_run >= 4:
                fell_back = True
                break
        else:
            tiny_run = 0

        zbar = zbar - s_end * v
        zbar[np.abs(zbar) < CLAMP_TOL] = 0.0
        zbar = np.maximum(zbar, 0.0)
        if hit is not None:
            zbar[hit] = 0.0
        tbar = tbar + s_end * alloc
        segments.append(FluidSegment(t, t + s_end, alloc, v, support))
        t = t + s_end
        times.append(t)
        zs.append(zbar.copy())
        tbars.append(tbar.copy())

    if fell_back:
        if not euler_fallback:
            raise ChatterGuard("sliding resolution failed", state=zbar.copy())
        # crude guarded fallback: vertex-following Euler steps
        while t < horizon - 1e-15:
            h = min(euler_step, horizon - t)
            weighted = alpha * zbar
            pressures = weighted @ G
            p_star = float(pressures.max())
            face = np.flatnonzero(pressures >= p_star - FACE_TOL)
            pick = next((c for c in face if touched_ok(c)), face[0])
            v = G[:, pick]
            zbar = np.maximum(zbar - h * v, 0.0)
            tbar = tbar + h * levels_mat[pick]
            t += h
            segments.append(FluidSegment(t - h, t, levels_mat[pick].copy(), v, (int(pick),)))
            times.append(t)
            zs.append(zbar.copy())
            tbars.append(tbar.copy())

    zs_arr = np.array(zs)
    traj = FluidTrajectory(
        times=np.array(times),
        levels=zs_arr,
        activity=np.array(tbars),
        workload=zs_arr @ y_star,
        lyapunov=np.array([lyapunov_value(z, alpha, zeta, y_star) for z in zs_arr]),
        segments=segments,
        euler_fallback=fell_back,
    )
    return traj


def estimate_delta(spec: NetworkSpec, R: np.ndarray, vertices, y_star,
                   samples: int = 1000, seed: int = 0):
    """Sampled radius of the drain-rate polytope around the origin inside the
    hyperplane orthogonal to y*.

    For each sampled unit direction u in that hyperplane (both signs per
    draw), solves max {s >= 0 : s u = R a for some allocation a}; the
    estimate is the minimum over the sample, an upper bound on the true
    radius.  Returns (delta, report).
    """
    dual = check_complete_resource_pooling(R, spec)
    if not dual.pooled:
        raise NotPooled("delta is only defined under complete resource pooling")
    y = np.asarray(y_star, dtype=float)
    I = spec.I
    if I == 1:
        return math.inf, {"unconstrained": True, "direction": None, "samples": 0}

    q, _ = np.linalg.qr(np.column_stack([y, np.eye(I)]))
    basis = q[:, 1:I]  # orthonormal basis of the hyperplane y . v = 0
    G = R @ np.array([v.levels for v in vertices]).T  # (I, E)
    E = G.shape[1]

    def max_stretch(u: np.ndarray) -> float:
        # variables (beta, s): max s  s.t.  G beta - s u = 0, sum beta = 1
        n = E + 1
        c = np.zeros(n)
        c[E] = 1.0
        a_eq = np.zeros((I + 1, n))
        a_eq[:I, :E] = G
        a_eq[:I, E] = -u
        a_eq[I, :E] = 1.0
        b_eq = np.zeros(I + 1)
        b_eq[I] = 1.0
        return solve_lp(c, a_eq, b_eq, maximize=True).objective

    rng = np.random.default_rng(seed)
    best = math.inf
    best_dir = None
    for _ in range(samples):
        coords = rng.standard_normal(I - 1)
        norm = np.linalg.norm(coords)
        if norm < 1e-12:
            continue
        u = basis @ (coords / norm)
        for sign in (1.0, -1.0):
            s = max_stretch(sign * u)
            if s < best:
                best, best_dir = s, sign * u
    return best, {"unconstrained": False, "direction": best_dir, "samples": samples}


def tau0_bound(alpha, dim: int, delta: float) -> float:
    """Latest collapse time for unit-bounded initial fluid levels."""
    alpha = np.asarray(alpha, dtype=float)
    if math.isinf(delta):
        return 0.0
    if not delta > 0.0 or not math.isfinite(delta):
        raise BadDelta(f"delta must be positive, got {delta}")
    return float(math.sqrt(dim * alpha.max()) / (delta * math.sqrt(alpha.min())))


def integrate_fixed_allocation(spec, R, allocation, z0, horizon: float):
    """Debug mode: constant allocation until a buffer would go negative."""
    a = np.asarray(allocation, dtype=float)
    zbar = np.asarray(z0, dtype=float).copy()
    v = R @ a
    s_end = horizon
    for i in range(spec.I):
        if v[i] > 0.0 and zbar[i] / v[i] < s_end:
            s_end = zbar[i] / v[i]
    z1 = np.maximum(zbar - s_end * v, 0.0)
    times = np.array([0.0, s_end])
    zs = np.vstack([zbar, z1])
    return times, zs

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from netgen import pooled_networks, random_network
from spnwb import sample_networks as nets
from spnwb.lp import solve_lp
from spnwb.network import enumerate_extreme_allocations, input_output_matrix, validate_network
from spnwb.planning import (
    BadAlpha,
    BadInput,
    BadTheta,
    NotCritical,
    check_complete_resource_pooling,
    collapse_direction,
    epsilon_optimal_alpha,
    heavy_traffic_sequence,
    solve_dual_planning,
    solve_static_planning,
    verify_dual_characterization,
    _dual_arrays,
)


def test_n1_planning(n1):
    assert n1.plan.rho == pytest.approx(0.9, abs=1e-9)
    assert np.allclose(n1.plan.x, [1.0, 0.9], atol=1e-9)
    assert n1.plan.unique_primal


def test_n2_planning(n2):
    assert n2.plan.rho == pytest.approx(0.5, abs=1e-9)
    assert np.allclose(n2.plan.x, [1.0, 0.25, 0.5], atol=1e-9)
    assert n2.plan.unique_primal


def test_negligible_input_rate():
    # the zero-input degenerate case, taken at the smallest admissible rate
    raw = nets.single_queue(lam=1e-9)
    spec = validate_network(raw)
    plan = solve_static_planning(input_output_matrix(spec), spec)
    assert plan.rho == pytest.approx(0.0, abs=1e-8)
    assert np.allclose(plan.x, [1.0, 0.0], atol=1e-8)


def test_duals_and_strong_duality(n1, n2):
    assert np.allclose(n1.dual.y, [1.0], atol=1e-8)
    assert np.allclose(n1.dual.z, [0.9, 1.0], atol=1e-8)
    assert abs(n1.dual.objective - n1.plan.rho) <= 1e-8
    assert np.allclose(n2.dual.y, [1.0, 1.0], atol=1e-8)
    assert np.allclose(n2.dual.z, [0.5, 0.0, 1.0], atol=1e-8)
    assert abs(n2.dual.objective - n2.plan.rho) <= 1e-8


def test_planning_solution_invariants(n2):
    A = n2.spec.consumption.astype(float)
    assert np.max(np.abs(n2.R @ n2.plan.x)) <= 1e-8
    for k in n2.spec.input_processors:
        assert A[k] @ n2.plan.x == pytest.approx(1.0, abs=1e-8)
    for k in n2.spec.service_processors:
        assert A[k] @ n2.plan.x <= n2.plan.rho + 1e-8
    assert np.min(n2.plan.x) >= -1e-10


def test_pooling_detector(n1, n2, parallel_pair):
    assert n1.dual.pooled and n2.dual.pooled
    assert np.max(n1.dual.y_gap) <= 1e-7 and np.max(n2.dual.y_gap) <= 1e-7
    assert not parallel_pair.dual.pooled
    # the dual optimum is a segment: workload weights trade off copy vs copy
    assert np.max(parallel_pair.dual.y_gap) > 1e-3
    # strong duality still pins the objective at the traffic intensity
    assert parallel_pair.dual.objective == pytest.approx(parallel_pair.rho, abs=1e-8)
    assert parallel_pair.rho == pytest.approx(0.9, abs=1e-8)


def test_dual_characterization_fixtures(n1, n2):
    rep = verify_dual_characterization(n1.y, n1.dual.z, n1.rho, n1.R, n1.spec, n1.vertices)
    assert rep["pass"]
    assert rep["A1"] == pytest.approx(-0.9)
    assert rep["A2"] == pytest.approx(1.0)
    assert rep["A19"] == pytest.approx(0.1)
    rep = verify_dual_characterization(n2.y, n2.dual.z, n2.rho, n2.R, n2.spec, n2.vertices)
    assert rep["pass"]
    assert (rep["A1"], rep["A2"], rep["A19"]) == pytest.approx((-0.5, 1.0, 0.5))


def test_dual_characterization_rejects_scaled_candidate(n1):
    rep = verify_dual_characterization(np.array([2.0]), n1.dual.z, n1.rho, n1.R,
                                       n1.spec, n1.vertices)
    assert not rep["pass"]
    assert rep["A2"] == pytest.approx(2.0)


def test_perturbing_y_breaks_characterization(n2):
    # any direction that preserves the service normalization must break the
    # full-objective identity when the network is pooled
    rng = np.random.default_rng(5)
    for _ in range(20):
        d = rng.normal(size=n2.spec.I)
        y = n2.y + 0.05 * d
        rep = verify_dual_characterization(y, n2.dual.z, n2.rho, n2.R, n2.spec, n2.vertices)
        if rep["residuals"]["A2"] <= 1e-12:  # direction kept A2 = 1 exactly
            assert rep["residuals"]["A19"] > 1e-9
        a2 = rep["A2"]
        if a2 > 1e-9:
            rep2 = verify_dual_characterization(y / a2, n2.dual.z, n2.rho, n2.R,
                                                n2.spec, n2.vertices)
            assert rep2["residuals"]["A2"] <= 1e-9
            if np.max(np.abs(y / a2 - n2.y)) > 1e-7:
                assert rep2["residuals"]["A19"] > 1e-9


def test_mangasarian_cross_check(n1, n2):
    # perturbing the dual objective with a small uniform weight on y (and
    # y >= 0) must return the same optimum when the dual optimum is unique
    for net in (n1, n2):
        I, K = net.spec.I, net.spec.K
        obj, a_eq, b_eq, a_ub, b_ub, free = _dual_arrays(net.R, net.spec)
        free = free.copy()
        free[:I] = False  # the perturbed program adds y >= 0
        b = 1e-6
        perturbed = obj.copy()
        perturbed[:I] += b
        res = solve_lp(perturbed, a_eq, b_eq, a_ub, b_ub, free, maximize=True)
        assert np.allclose(res.x[:I], net.dual.y, atol=1e-6)
        assert np.allclose(res.x[I:], net.dual.z, atol=1e-6)


def test_collapse_direction_examples():
    assert collapse_direction([1.0], [1.0]).zeta.tolist() == [1.0]
    assert np.allclose(collapse_direction([1.0, 1.0], [1.0, 1.0]).zeta, [0.5, 0.5])
    assert np.allclose(collapse_direction([1.0, 1.0], [2.0, 2.0]).zeta, [0.5, 0.5])
    with pytest.raises(BadAlpha):
        collapse_direction([1.0], [0.0])


@given(st.lists(st.sampled_from([0.0]) | st.floats(1e-3, 5.0), min_size=2, max_size=4),
       st.lists(st.floats(0.01, 10.0), min_size=4, max_size=4),
       st.floats(0.1, 9.0))
def test_collapse_direction_properties(ys, alphas, scale):
    y = np.asarray(ys)
    if not np.any(y > 0):
        y[0] = 1.0
    alpha = np.asarray(alphas[: y.size])
    zeta = collapse_direction(y, alpha).zeta
    assert y @ zeta == pytest.approx(1.0, abs=1e-10)
    zeta_scaled = collapse_direction(y, scale * alpha).zeta
    assert np.allclose(zeta, zeta_scaled, atol=1e-9)
    assert np.all((zeta == 0) == (y == 0))


def test_epsilon_optimal_alpha_examples():
    alpha = epsilon_optimal_alpha([1.0, 2.0], [1.0, 1.0], 0.1)
    assert np.allclose(alpha, [0.025, 1.0])
    alpha = epsilon_optimal_alpha([1.0, 1.0], [1.0, 0.0], 0.5)
    assert np.allclose(alpha, [0.25, 1.0])
    with pytest.raises(BadInput):
        epsilon_optimal_alpha([1.0, -1.0], [1.0, 1.0], 0.1)
    with pytest.raises(BadInput):
        epsilon_optimal_alpha([1.0], [0.0], 0.1)


def test_epsilon_optimal_alpha_guarantee():
    rng = np.random.default_rng(11)
    for _ in range(100):
        dim = int(rng.integers(1, 5))
        c = rng.uniform(0.1, 5.0, size=dim)
        y = rng.uniform(0.0, 3.0, size=dim)
        if not np.any(y > 0):
            y[0] = 1.0
        eps = float(rng.uniform(0.01, 2.0))
        alpha = epsilon_optimal_alpha(c, y, eps)
        zeta = collapse_direction(y, alpha).zeta
        target = np.min(c[y > 0] / y[y > 0])
        assert c @ zeta <= (1 + eps) * target * (1 + 1e-12)


def test_heavy_traffic_sequence():
    limit = nets.n1_critical()
    seq = heavy_traffic_sequence(limit, -1.0, [10, 100])
    lam10 = seq[0].activities[0].rate
    assert lam10 == pytest.approx(0.9)
    plan10 = solve_static_planning(input_output_matrix(seq[0]), seq[0])
    assert plan10.rho == pytest.approx(0.9, abs=1e-8)
    assert seq[1].activities[0].rate == pytest.approx(0.99)
    plan100 = solve_static_planning(input_output_matrix(seq[1]), seq[1])
    assert plan100.rho == pytest.approx(0.99, abs=1e-8)
    # service rates unchanged
    assert seq[0].activities[1].rate == limit.activities[1].rate


def test_heavy_traffic_theta_zero():
    limit = nets.n2_critical()
    (spec_r,) = heavy_traffic_sequence(limit, 0.0, [7])
    plan = solve_static_planning(input_output_matrix(spec_r), spec_r)
    assert plan.rho == pytest.approx(1.0, abs=1e-8)


def test_heavy_traffic_errors():
    with pytest.raises(NotCritical):
        heavy_traffic_sequence(nets.n1(), -1.0, [10])
    with pytest.raises(BadTheta):
        heavy_traffic_sequence(nets.n1_critical(), 0.5, [10])
    with pytest.raises(BadTheta):
        heavy_traffic_sequence(nets.n1_critical(), -20.0, [10])


def test_dual_convergence_along_sequence(n1_crit, n2_crit):
    # the r-th duals approach the limit dual monotonically in r
    for net in (n1_crit, n2_crit):
        y_errs, z_errs = [], []
        for spec_r in heavy_traffic_sequence(net.spec, -1.0, [10, 20, 40, 80]):
            R_r = input_output_matrix(spec_r)
            dual_r = solve_dual_planning(R_r, spec_r)
            y_errs.append(np.max(np.abs(dual_r.y - net.dual.y)))
            z_errs.append(np.max(np.abs(dual_r.z - net.dual.z)))
        assert all(a >= b - 1e-12 for a, b in zip(y_errs, y_errs[1:]))
        assert all(a >= b - 1e-12 for a, b in zip(z_errs, z_errs[1:]))


def test_prelimit_argmax_attains_one_minus_rho(n2_crit):
    # at each r, the best drain rate over the vertex set equals 1 - rho^r,
    # attained inside the limit network's argmax set
    limit_scores = np.array([n2_crit.y @ (n2_crit.R @ v.levels) for v in n2_crit.vertices])
    limit_argmax = {v.index for v, s in zip(n2_crit.vertices, limit_scores)
                    if s >= limit_scores.max() - 1e-9}
    for spec_r in heavy_traffic_sequence(n2_crit.spec, -1.0, [20, 40, 80]):
        R_r = input_output_matrix(spec_r)
        plan_r = solve_static_planning(R_r, spec_r)
        dual_r = solve_dual_planning(R_r, spec_r)
        verts = enumerate_extreme_allocations(spec_r)
        scores = np.array([dual_r.y @ (R_r @ v.levels) for v in verts])
        assert scores.max() == pytest.approx(1.0 - plan_r.rho, abs=1e-7)
        best = {v.index for v, s in zip(verts, scores) if s >= scores.max() - 1e-7}
        assert best & limit_argmax


def test_strong_duality_fuzz():
    rng = np.random.default_rng(2718)
    solved = 0
    for _ in range(60):
        spec = validate_network(random_network(rng))
        R = input_output_matrix(spec)
        plan = solve_static_planning(R, spec)
        dual = solve_dual_planning(R, spec)
        assert abs(plan.rho - dual.objective) <= 1e-8
        assert np.max(np.abs(R @ plan.x)) <= 1e-8
        solved += 1
    assert solved >= 50


def test_fuzz_pooled_characterization():
    specs = pooled_networks(12, seed=99)
    assert len(specs) >= 10
    for spec in specs:
        R = input_output_matrix(spec)
        plan = solve_static_planning(R, spec)
        dual = check_complete_resource_pooling(R, spec)
        verts = enumerate_extreme_allocations(spec)
        rep = verify_dual_characterization(dual.y, dual.z, plan.rho, R, spec, verts)
        assert rep["pass"], rep

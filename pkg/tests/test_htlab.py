import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spnwb import sample_networks as nets
from spnwb.htlab import (
    BadH,
    BadStart,
    BrownianParams,
    ReplicationPlan,
    ScaledPath,
    brownian_params,
    build_instances,
    diffusion_scale,
    flat_Y_diagnostic,
    ks_distance,
    linear_cost,
    lower_bound_check,
    mean_stderr,
    quadratic_cost,
    reflection_map,
    run_one_replication,
    run_replications,
    simulate_rbm,
    ssc_metric,
)
from spnwb.network import input_output_matrix, validate_network
from spnwb.planning import NotCritical, collapse_direction, solve_dual_planning, solve_static_planning
from spnwb.simulate import MaxPressure, ShortTrajectory, SimConfig, simulate


def make_scaled(t, Zhat, y, rho=1.0, Yhat=None):
    Zhat = np.asarray(Zhat, dtype=float)
    y = np.asarray(y, dtype=float)
    What = Zhat @ y
    Yhat = np.zeros_like(What) if Yhat is None else np.asarray(Yhat, float)
    return ScaledPath(r=1.0, t=np.asarray(t, float), Zhat=Zhat, What=What,
                      Yhat=Yhat, Xhat=What - Yhat, y=y, rho=rho)


def test_diffusion_scale_identity_and_consistency(n2):
    traj = simulate(n2.spec, MaxPressure((1.0, 1.0)),
                    SimConfig(horizon=50.0, seed=1, grid_points=64))
    scaled = diffusion_scale(traj, 1.0, n2.y, n2.rho, n2.R, 50.0)
    assert np.allclose(scaled.t, traj.grid_t)
    assert np.allclose(scaled.Zhat, traj.grid_Z)
    assert np.allclose(scaled.What, scaled.y @ scaled.Zhat.T)
    assert np.allclose(scaled.What, scaled.Xhat + scaled.Yhat, atol=1e-9)
    assert scaled.Yhat[0] == 0.0
    assert np.all(np.diff(scaled.Yhat) >= -1e-9)


def test_diffusion_scale_zero_traffic():
    # no arrivals before the horizon: Z stays zero and only the idleness
    # term grows, at rate r (1 - rho) + r lambda y per scaled time unit
    spec = validate_network(nets.single_queue(0.01, 1.0, "deterministic"))
    R = input_output_matrix(spec)
    plan = solve_static_planning(R, spec)
    dual = solve_dual_planning(R, spec)
    r = 3.0
    traj = simulate(spec, MaxPressure((1.0,)), SimConfig(horizon=9.0, seed=0, grid_points=16))
    assert len(traj.events) == 0
    scaled = diffusion_scale(traj, r, dual.y, plan.rho, R, 1.0)
    assert np.all(scaled.Zhat == 0.0)
    lam = spec.activities[0].rate
    slope = r * ((1.0 - plan.rho) + lam * dual.y[0])
    assert np.allclose(scaled.Yhat, slope * scaled.t, atol=1e-12)


def test_diffusion_scale_short_trajectory(n2):
    traj = simulate(n2.spec, MaxPressure((1.0, 1.0)), SimConfig(horizon=10.0, seed=1))
    with pytest.raises(ShortTrajectory):
        diffusion_scale(traj, 4.0, n2.y, n2.rho, n2.R, 1.0)


def test_ssc_metric_examples():
    zeta = np.array([0.5, 0.5])
    y = np.array([1.0, 1.0])
    t = [0.0, 1.0]
    collapsed = make_scaled(t, [[0.5, 0.5], [1.0, 1.0]], y)
    assert ssc_metric(collapsed, zeta) == 0.0
    path = make_scaled(t, [[1.0, 0.0], [1.0, 0.0]], y)
    assert ssc_metric(path, zeta) == pytest.approx(0.5)


@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_ssc_metric_lipschitz(flat):
    zeta = np.array([0.5, 0.5])
    y = np.array([1.0, 1.0])
    base = np.abs(np.array(flat).reshape(2, 2))
    bump = base + 0.25
    a = make_scaled([0.0, 1.0], base, y)
    b = dataclasses.replace(a, Zhat=bump)  # same What, shifted levels
    da = ssc_metric(a, zeta)
    db = ssc_metric(b, zeta)
    assert abs(da - db) <= np.max(np.abs(bump - base)) + 1e-12


def test_brownian_params_values(n1_crit, n2_crit):
    p1 = brownian_params(n1_crit.spec, n1_crit.R, n1_crit.plan.x, n1_crit.y, -1.0)
    assert p1.drift == -1.0
    assert p1.variance == pytest.approx(2.0)
    p2 = brownian_params(n2_crit.spec, n2_crit.R, n2_crit.plan.x, n2_crit.y, -1.0)
    assert p2.variance == pytest.approx(10.0)
    # deterministic service and routing: no variance at all
    det = validate_network(nets.tandem(1.0, 2.0, 1.0, "deterministic"))
    R = input_output_matrix(det)
    plan = solve_static_planning(R, det)
    dual = solve_dual_planning(R, det)
    p0 = brownian_params(det, R, plan.x, dual.y, 0.0)
    assert p0.variance == 0.0
    for block in p0.upsilon.values():
        assert np.allclose(block, 0.0)


def test_brownian_params_requires_critical(n2):
    with pytest.raises(NotCritical):
        brownian_params(n2.spec, n2.R, n2.plan.x, n2.y, -1.0)


def test_brownian_params_permutation_invariant():
    # relabeling buffers and reordering activities must not change sigma^2
    base = nets.tandem(1.0, 2.0, 1.0)
    spec = validate_network(base)
    R = input_output_matrix(spec)
    plan = solve_static_planning(R, spec)
    dual = solve_dual_planning(R, spec)
    sigma = brownian_params(spec, R, plan.x, dual.y, -1.0).variance

    swapped = {
        "buffers": 2,
        "processors": list(reversed(base["processors"])),
        "activities": [
            # buffer ids swapped: old 1 -> 2, old 2 -> 1; activity order reversed
            {"id": "j3", "kind": "service", "processors": ["k3"], "rate": 1.0,
             "service_dist": {"type": "exponential"}, "constituency": [1],
             "routing": {"1": [{"to": "exit", "p": 1.0}]}},
            {"id": "j2", "kind": "service", "processors": ["k2"], "rate": 2.0,
             "service_dist": {"type": "exponential"}, "constituency": [2],
             "routing": {"2": [{"to": 1, "p": 1.0}]}},
            {"id": "j1", "kind": "input", "processors": ["k1"], "rate": 1.0,
             "service_dist": {"type": "exponential"}, "constituency": "external",
             "routing": {"external": [{"to": 2, "p": 1.0}]}},
        ],
    }
    spec2 = validate_network(swapped)
    R2 = input_output_matrix(spec2)
    plan2 = solve_static_planning(R2, spec2)
    dual2 = solve_dual_planning(R2, spec2)
    sigma2 = brownian_params(spec2, R2, plan2.x, dual2.y, -1.0).variance
    assert sigma2 == pytest.approx(sigma)


def test_reflection_map_examples():
    assert reflection_map([1.0, -1.0, 2.0]).tolist() == [1.0, 0.0, 3.0]
    f = np.linspace(0, 1, 5)
    assert np.array_equal(reflection_map(f), f)
    down = -np.linspace(0, 1, 5)
    down[0] = 0.0
    assert np.allclose(reflection_map(down), 0.0)
    with pytest.raises(BadStart):
        reflection_map([-0.1, 0.0])


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30))
def test_reflection_map_contracts(values):
    f = np.array([abs(values[0])] + values[1:])
    psi = reflection_map(f)
    assert np.all(psi >= -1e-12)
    assert np.all(psi >= f - 1e-12)
    assert np.all(np.diff(psi - f) >= -1e-12)
    assert np.allclose(reflection_map(psi), psi, atol=1e-12)


def test_rbm_degenerate_cases():
    assert np.allclose(simulate_rbm(BrownianParams(-2.0, 0.0, {}), 1.0, 0.01, 0, 3), 0.0)
    assert np.allclose(simulate_rbm(BrownianParams(0.5, 0.0, {}), 1.0, 0.01, 0, 3), 0.5)


def test_rbm_reflection_identity():
    w = simulate_rbm(BrownianParams(0.0, 1.0, {}), 1.0, 1e-2, 11, 20000)
    target = math.sqrt(2.0 / math.pi)
    se = w.std() / math.sqrt(w.size)
    assert abs(w.mean() - target) <= 4 * se


def test_lower_bound_check_passes(n2_crit):
    traj = simulate(n2_crit.spec, MaxPressure((1.0, 1.0)),
                    SimConfig(horizon=100.0, seed=2, grid_points=128))
    scaled = diffusion_scale(traj, 2.0, n2_crit.y, n2_crit.rho, n2_crit.R, 25.0)
    rep = lower_bound_check(scaled)
    assert rep["pass"] and rep["max_violation"] <= 1e-9


def test_lower_bound_check_flags_corruption():
    y = np.array([1.0, 1.0])
    bad = make_scaled([0.0, 0.5, 1.0],
                      [[0.5, 0.5], [0.0, 0.0], [0.5, 0.5]], y,
                      Yhat=np.array([0.0, 1.0, 0.0]))  # Y decreases: corrupted
    rep = lower_bound_check(bad)
    assert not rep["pass"]


def test_quadratic_cost_examples():
    res = quadratic_cost(2.0, [1.0, 1.0], [1.0, 1.0])
    assert res.g[0] == pytest.approx(2.0)
    assert np.allclose(res.q[0], [1.0, 1.0])
    res = quadratic_cost(0.0, [1.0, 2.0], [1.0, 1.0])
    assert res.g[0] == 0.0 and np.allclose(res.q[0], 0.0)
    with pytest.raises(BadH):
        quadratic_cost(1.0, [0.0, 1.0], [1.0, 1.0])


def test_quadratic_cost_grid_oracle():
    rng = np.random.default_rng(31)
    for _ in range(10):
        h = rng.uniform(0.2, 3.0, size=2)
        y = rng.uniform(0.2, 3.0, size=2)
        w = float(rng.uniform(0.0, 4.0))
        res = quadratic_cost(w, h, y)
        q1 = np.linspace(0.0, w / y[0], 400_001)
        q2 = (w - y[0] * q1) / y[1]
        vals = h[0] * q1**2 + h[1] * q2**2
        k = int(np.argmin(vals))
        assert res.g[0] == pytest.approx(float(vals[k]), abs=1e-6)
        assert np.allclose(res.q[0], [q1[k], q2[k]], atol=1e-4)


def test_quadratic_cost_collapsed_identity():
    h = np.array([2.0, 3.0])
    y = np.array([1.0, 1.0])
    zeta = collapse_direction(y, h).zeta
    w = np.array([0.0, 0.7, 1.9])
    path = make_scaled([0, 1, 2], np.outer(w, zeta), y)
    res = quadratic_cost(path, h, y)
    assert np.allclose(res.H, res.g, atol=1e-12)


def test_linear_cost(n2_crit):
    y = np.array([1.0, 1.0])
    path = make_scaled([0.0, 1.0], [[1.0, 1.0], [0.0, 2.0]], y)
    rep = linear_cost(path, [1.0, 2.0])
    assert rep["C"].tolist() == [3.0, 4.0]
    assert rep["pass"]
    assert np.allclose(rep["bound"], [2.0, 2.0])


def test_linear_cost_epsilon_policy_bound():
    from spnwb.planning import epsilon_optimal_alpha

    rng = np.random.default_rng(8)
    y = np.array([1.0, 1.0])
    for _ in range(20):
        c = rng.uniform(0.2, 4.0, size=2)
        eps = float(rng.uniform(0.05, 1.0))
        alpha = epsilon_optimal_alpha(c, y, eps)
        zeta = collapse_direction(y, alpha).zeta
        w = np.array([0.0, 1.0, 2.0])
        path = make_scaled([0, 1, 2], np.outer(w, zeta), y)
        rep = linear_cost(path, c)
        iota = np.argmin(c / y)
        assert np.all(rep["C"] <= (1 + eps) * (c[iota] / y[iota]) * path.What + 1e-12)


def test_flat_Y_diagnostic():
    y = np.array([1.0, 1.0])
    zeta = np.array([0.5, 0.5])
    # workload zero throughout: vacuous pass
    path = make_scaled([0, 1], [[0.0, 0.0], [0.0, 0.0]], y)
    rep = flat_Y_diagnostic(path, zeta, 0.1, 0.5)
    assert rep["pass"] and rep["intervals"] == []
    # collapsed with constant Y: pass
    path = make_scaled([0, 1, 2], [[1, 1], [1, 1], [1, 1]], y,
                       Yhat=np.array([0.3, 0.3, 0.3]))
    rep = flat_Y_diagnostic(path, zeta, 0.1, 0.5)
    assert rep["pass"] and len(rep["intervals"]) == 1
    # collapsed but Y rises inside the interval: fail
    path = make_scaled([0, 1, 2], [[1, 1], [1, 1], [1, 1]], y,
                       Yhat=np.array([0.0, 0.2, 0.4]))
    rep = flat_Y_diagnostic(path, zeta, 0.1, 0.5)
    assert not rep["pass"]


def test_ks_distance():
    a = np.arange(100.0)
    assert ks_distance(a, a) == 0.0
    assert ks_distance(np.zeros(50), np.ones(50)) == 1.0
    assert ks_distance([0.0, 1.0], [0.0, 1.0, 0.5]) == pytest.approx(1 / 6)


def test_mean_stderr():
    m, se = mean_stderr([1.0, 2.0, 3.0])
    assert m == pytest.approx(2.0)
    assert se == pytest.approx(1.0 / math.sqrt(3.0))


def test_replication_harness_deterministic_across_jobs(n2_crit):
    limit, (inst,) = build_instances(n2_crit.spec, -1.0, [8])
    zeta = collapse_direction(limit["y"], [1.0, 1.0]).zeta
    plan = ReplicationPlan(instance=inst, policy=MaxPressure((1.0, 1.0)), T=1.0,
                           base_seed=5, zeta=zeta, x_star=limit["x"],
                           h=np.ones(2), c=np.ones(2))
    serial = run_replications(plan, 6, jobs=1)
    parallel = run_replications(plan, 6, jobs=3)
    assert serial == parallel
    # replication summaries are reproducible one by one
    again = run_one_replication(plan, 3)
    assert again == serial[3]

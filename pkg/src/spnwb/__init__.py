"""Max-pressure scheduling workbench for stochastic processing networks."""

__version__ = "0.1.0"

from .network import (
    NetworkSpec,
    enumerate_extreme_allocations,
    input_output_matrix,
    load_network,
    validate_network,
)
from .planning import (
    analyze_network,
    check_complete_resource_pooling,
    collapse_direction,
    epsilon_optimal_alpha,
    heavy_traffic_sequence,
    solve_dual_planning,
    solve_static_planning,
    verify_dual_characterization,
)
from .policy import (
    PolicyParams,
    SchedulingState,
    baseline_policy,
    feasible_extreme_allocations,
    max_pressure_allocation,
    network_pressure,
)
from .simulate import (
    MaxPressure,
    PriorityPolicy,
    RandomPolicy,
    SimConfig,
    Trajectory,
    compute_Y_path,
    compute_workload_path,
    draw_service_requirement,
    efficiency_metric,
    simulate,
)
from .fluid import (
    check_EAA,
    estimate_delta,
    integrate_fluid,
    lyapunov_value,
    tau0_bound,
)
from .htlab import (
    BrownianParams,
    ScaledPath,
    brownian_params,
    diffusion_scale,
    flat_Y_diagnostic,
    ks_distance,
    linear_cost,
    lower_bound_check,
    quadratic_cost,
    reflection_map,
    simulate_rbm,
    ssc_metric,
)

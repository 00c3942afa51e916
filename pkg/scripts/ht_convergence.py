#!/usr/bin/env python3
"""Heavy-traffic convergence picture for the critical tandem.

For each r in the sequence, runs seeded max-pressure replications, then
prints the collapse metric, the scaled-workload mean against the reflected
Brownian target, and the efficiency metric.  This is the script version of
the workload-limit experiments; use the `spnwb ht` subcommand for the
file-emitting equivalent.
"""

import argparse

import numpy as np

from spnwb import sample_networks as nets
from spnwb.htlab import (
    ReplicationPlan,
    brownian_params,
    build_instances,
    ks_distance,
    mean_stderr,
    run_replications,
    simulate_rbm,
)
from spnwb.planning import collapse_direction
from spnwb.simulate import MaxPressure


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--r", default="10,20,40")
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--theta", type=float, default=-1.0)
    ap.add_argument("--seed", type=int, default=20240501)
    ap.add_argument("--jobs", type=int, default=2)
    args = ap.parse_args()

    spec = nets.n2_critical()
    rs = [int(tok) for tok in args.r.split(",")]
    limit, instances = build_instances(spec, args.theta, rs)
    alpha = np.ones(spec.I)
    zeta = collapse_direction(limit["y"], alpha).zeta

    params = brownian_params(spec, limit["R"], limit["x"], limit["y"], args.theta)
    rbm = simulate_rbm(params, 1.0, 1e-3, args.seed + 1, 50_000)
    print(f"limit: rho = {limit['rho']:.3f}, sigma^2 = {params.variance:.3f}, "
          f"E[W*(1)] = {rbm.mean():.4f}")

    for inst in instances:
        plan = ReplicationPlan(instance=inst, policy=MaxPressure(tuple(alpha)),
                               T=1.0, base_seed=args.seed, zeta=zeta,
                               x_star=limit["x"])
        sums = run_replications(plan, args.reps, jobs=args.jobs)
        what, what_se = mean_stderr(s.what_T for s in sums)
        ssc, ssc_se = mean_stderr(s.ssc for s in sums)
        eff, _ = mean_stderr(s.eff for s in sums)
        ks = ks_distance([s.what_T for s in sums], rbm)
        print(f"r = {inst.r:3d}: What(1) = {what:.4f} +- {what_se:.4f}, "
              f"ssc = {ssc:.4f} +- {ssc_se:.4f}, eff = {eff:.4f}, KS = {ks:.4f}")


if __name__ == "__main__":
    main()

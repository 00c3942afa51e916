#!/usr/bin/env python3
"""Workload and cost comparison of scheduling policies on the critical
tandem, under common random numbers.

Runs max-pressure against a static-priority baseline and a seeded random
baseline at one value of r and prints scaled workload, quadratic cost and
linear cost with standard errors.
"""

import argparse

import numpy as np

from spnwb import sample_networks as nets
from spnwb.htlab import ReplicationPlan, build_instances, mean_stderr, run_replications
from spnwb.planning import collapse_direction
from spnwb.simulate import MaxPressure, PriorityPolicy, RandomPolicy


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--r", type=int, default=20)
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--jobs", type=int, default=2)
    args = ap.parse_args()

    spec = nets.n2_critical()
    limit, (inst,) = build_instances(spec, -1.0, [args.r])
    alpha = np.ones(spec.I)
    zeta = collapse_direction(limit["y"], alpha).zeta
    h = np.ones(spec.I)
    c = np.ones(spec.I)

    policies = [
        ("maxpressure", MaxPressure(tuple(alpha))),
        ("priority", PriorityPolicy((3, 2, 1, 0))),
        ("random", RandomPolicy()),
    ]
    print(f"r = {inst.r}, rho_r = {inst.rho:.4f}, reps = {args.reps}")
    for name, policy in policies:
        plan = ReplicationPlan(instance=inst, policy=policy, T=1.0,
                               base_seed=args.seed, zeta=zeta,
                               x_star=limit["x"], h=h, c=c)
        sums = run_replications(plan, args.reps, jobs=args.jobs)
        what = mean_stderr(s.what_T for s in sums)
        hhat = mean_stderr(s.hhat_T for s in sums)
        chat = mean_stderr(s.chat_T for s in sums)
        ssc = mean_stderr(s.ssc for s in sums)
        print(f"{name:12s} What = {what[0]:.4f} +- {what[1]:.4f}   "
              f"Hhat = {hhat[0]:.4f} +- {hhat[1]:.4f}   "
              f"Chat = {chat[0]:.4f} +- {chat[1]:.4f}   ssc = {ssc[0]:.4f}")


if __name__ == "__main__":
    main()

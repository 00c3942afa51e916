"""Command-line entry point: analyze / simulate / fluid / delta / ht / compare.

Every run writes a manifest next to its outputs with the resolved spec hash,
all result-affecting parameters, the seed and the tool version; rerunning
with the same manifest contents reproduces the outputs byte for byte.  The
worker count is deliberately excluded from the manifest because results are
independent of it.

Exit codes: 0 success, 1 input error, 2 analytic warning (e.g. the network
is not completely pooled), 3 internal assertion failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .fluid import ChatterGuard, EAAViolated, NotPooled, estimate_delta, integrate_fluid, tau0_bound
from .htlab import (
    ReplicationPlan,
    brownian_params,
    build_instances,
    ks_distance,
    mean_stderr,
    run_replications,
    simulate_rbm,
)
from .network import NetworkError, enumerate_extreme_allocations, input_output_matrix, load_network
from .planning import (
    BadTheta,
    NotCritical,
    analyze_network,
    collapse_direction,
    solve_dual_planning,
    solve_static_planning,
)
from .simulate import (
    MaxPressure,
    NegativeBuffer,
    PriorityPolicy,
    RandomPolicy,
    SimConfig,
    compute_Y_path,
    compute_workload_path,
    simulate,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_WARN = 2
EXIT_INTERNAL = 3


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok != ""]


def _ints(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok != ""]


def _resolve_seed(args) -> int:
    env = os.environ.get("SPNWB_SEED")
    if env is not None:
        return int(env)
    return args.seed


def _fmt(x) -> str:
    """Deterministic shortest-roundtrip text for a float."""
    return repr(float(x))


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=2, default=_json_default) + "\n",
        encoding="utf-8",
    )


def _write_manifest(out: Path, subcommand: str, spec_path: str, seed, params: dict) -> None:
    digest = hashlib.sha256(Path(spec_path).read_bytes()).hexdigest()
    _write_json(out / "manifest.json", {
        "subcommand": subcommand,
        "spec_path": str(Path(spec_path).resolve()),
        "spec_sha256": digest,
        "seed": seed,
        "params": params,
        "version": __version__,
    })


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)  # RFC-4180 CRLF line endings
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _write_svg(path: Path, xs, series: dict, title: str) -> None:
    """Self-contained line chart, one polyline per named series."""
    width, height, pad = 640, 320, 40
    xs = np.asarray(xs, dtype=float)
    all_y = np.concatenate([np.asarray(v, float) for v in series.values()])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(all_y.min()), float(all_y.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    sx = lambda x: pad + (x - x0) / (x1 - x0) * (width - 2 * pad)
    sy = lambda y: height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{width // 2}" y="16" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="#333"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="#333"/>',
        f'<text x="{pad}" y="{height - pad + 16}" font-size="10">{x0:.4g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 16}" text-anchor="end" font-size="10">{x1:.4g}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end" font-size="10">{y0:.4g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end" font-size="10">{y1:.4g}</text>',
    ]
    for n, (name, ys) in enumerate(series.items()):
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        color = colors[n % len(colors)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.2"/>')
        parts.append(
            f'<text x="{width - pad}" y="{pad + 14 * n}" text-anchor="end" '
            f'font-size="11" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")


def _parse_policy(args, spec):
    alpha = _floats(args.alpha) if args.alpha else [1.0] * spec.I
    if len(alpha) != spec.I:
        raise NetworkError(f"--alpha needs {spec.I} entries")
    if args.policy == "maxpressure":
        return MaxPressure(tuple(alpha)), alpha
    if args.policy == "random":
        return RandomPolicy(), alpha
    if args.policy == "priority":
        if not args.order:
            raise NetworkError("--policy priority requires --order")
        return PriorityPolicy(tuple(_ints(args.order))), alpha
    raise NetworkError(f"unknown policy {args.policy!r}")


# ---------------------------------------------------------------------------
# Subcommands.

def _cmd_analyze(args) -> int:
    spec = load_network(args.spec)
    alpha = _floats(args.alpha) if args.alpha else None
    report = analyze_network(spec, alpha)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "analyze.json", report)
    _write_manifest(out, "analyze", args.spec, None, {"alpha": alpha})
    pooled = report["pooled"]
    print(f"rho={report['rho']!r} pooled={pooled} duality_gap="
          f"{abs(report['rho'] - report['dual_objective'])!r}")
    return EXIT_OK if pooled else EXIT_WARN


def _cmd_simulate(args) -> int:
    spec = load_network(args.spec)
    seed = _resolve_seed(args)
    policy, _ = _parse_policy(args, spec)
    z0 = _ints(args.z0) if args.z0 else None
    config = SimConfig(horizon=args.horizon, seed=seed, grid_points=args.grid,
                       initial_levels=z0, record_events=True)
    R = input_output_matrix(spec)
    traj = simulate(spec, policy, config, R=R)
    plan = solve_static_planning(R, spec)
    dual = solve_dual_planning(R, spec)
    W = compute_workload_path(traj, dual.y)
    Y, X = compute_Y_path(traj, dual.y, plan.rho, R)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = (["t"] + [f"Z_{i + 1}" for i in range(spec.I)] + ["W", "Y", "X", "alloc_index"])
    rows = []
    for g in range(len(traj.grid_t)):
        rows.append([_fmt(traj.grid_t[g])] + [_fmt(z) for z in traj.grid_Z[g]]
                    + [_fmt(W[g]), _fmt(Y[g]), _fmt(X[g]), int(traj.grid_alloc[g])])
    _write_csv(out / "trajectory.csv", header, rows)
    if args.events:
        with open(out / "events.jsonl", "w", encoding="utf-8") as fh:
            for ev in traj.events:
                fh.write(json.dumps({
                    "t": ev.time, "activity": spec.activities[ev.activity].id,
                    "routings": [[str(src), int(dst)] for src, dst in ev.routings],
                    "z": list(ev.z_after), "alloc_index": ev.alloc_index,
                }, sort_keys=True) + "\n")
    if args.svg:
        _write_svg(out / "trajectory.svg", traj.grid_t,
                   {f"Z_{i + 1}": traj.grid_Z[:, i] for i in range(spec.I)} | {"W": W},
                   "buffer levels and workload")
    _write_manifest(out, "simulate", args.spec, seed, {
        "policy": args.policy, "alpha": args.alpha, "order": args.order,
        "horizon": args.horizon, "grid": args.grid, "z0": args.z0,
        "events": bool(args.events),
    })
    print(f"events={len(traj.events)} final_Z={traj.grid_Z[-1].tolist()}")
    return EXIT_OK


def _cmd_fluid(args) -> int:
    spec = load_network(args.spec)
    alpha = np.array(_floats(args.alpha) if args.alpha else [1.0] * spec.I)
    z0 = np.array(_floats(args.z0) if args.z0 else [0.0] * spec.I)
    R = input_output_matrix(spec)
    dual = solve_dual_planning(R, spec)
    traj = integrate_fluid(spec, R, alpha, dual.y, z0, args.horizon)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = (["t"] + [f"Zbar_{i + 1}" for i in range(spec.I)]
              + ["W", "f", "alloc", "support"])
    rows = []
    for b in range(len(traj.times)):
        seg = traj.segments[min(b, len(traj.segments) - 1)] if traj.segments else None
        alloc = ";".join(_fmt(v) for v in seg.allocation) if seg else ""
        support = ";".join(str(s) for s in seg.support) if seg else ""
        rows.append([_fmt(traj.times[b])] + [_fmt(z) for z in traj.levels[b]]
                    + [_fmt(traj.workload[b]), _fmt(traj.lyapunov[b]), alloc, support])
    _write_csv(out / "fluid.csv", header, rows)
    if args.svg:
        _write_svg(out / "fluid.svg", traj.times,
                   {f"Zbar_{i + 1}": traj.levels[:, i] for i in range(spec.I)}
                   | {"f": traj.lyapunov},
                   "fluid levels and Lyapunov value")
    _write_manifest(out, "fluid", args.spec, None, {
        "alpha": alpha.tolist(), "z0": z0.tolist(), "horizon": args.horizon,
    })
    print(f"segments={len(traj.segments)} final_f={float(traj.lyapunov[-1])!r}"
          f" euler_fallback={traj.euler_fallback}")
    return EXIT_OK


def _cmd_delta(args) -> int:
    spec = load_network(args.spec)
    seed = _resolve_seed(args)
    alpha = np.array(_floats(args.alpha) if args.alpha else [1.0] * spec.I)
    R = input_output_matrix(spec)
    verts = enumerate_extreme_allocations(spec)
    dual = solve_dual_planning(R, spec)
    delta, info = estimate_delta(spec, R, verts, dual.y, samples=args.samples, seed=seed)
    tau0 = tau0_bound(alpha, spec.I, delta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "delta.json", {
        "delta_hat": None if delta == float("inf") else delta,
        "unconstrained": info["unconstrained"],
        "tau0": tau0,
        "direction": None if info["direction"] is None else list(info["direction"]),
        "samples": info["samples"],
        "alpha": alpha.tolist(),
    })
    _write_manifest(out, "delta", args.spec, seed, {
        "samples": args.samples, "alpha": alpha.tolist(),
    })
    print(f"delta_hat={delta!r} tau0={tau0!r}")
    return EXIT_OK


def _run_policy_batch(limit, instances, policy, alpha, args, seed, h=None, c=None):
    """Per-instance replication summaries for one policy."""
    zeta = collapse_direction(limit["y"], alpha).zeta
    batches = {}
    for inst in instances:
        plan = ReplicationPlan(
            instance=inst, policy=policy, T=args.T, base_seed=seed, zeta=zeta,
            x_star=limit["x"], h=h, c=c, eps0=args.eps0, threshold=args.threshold,
        )
        batches[inst.r] = run_replications(plan, args.reps, jobs=args.jobs)
    return zeta, batches


def _cmd_ht(args) -> int:
    spec = load_network(args.spec)
    seed = _resolve_seed(args)
    policy, alpha = _parse_policy(args, spec)
    rs = _ints(args.r)
    limit, instances = build_instances(spec, args.theta, rs)
    if not limit["pooled"]:
        print("limit network is not completely pooled", file=sys.stderr)
        return EXIT_WARN
    zeta, batches = _run_policy_batch(limit, instances, policy, np.array(alpha), args, seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = brownian_params(spec, limit["R"], limit["x"], limit["y"], args.theta)
    rbm = simulate_rbm(params, args.T, args.rbm_dt, seed + 1, args.rbm_paths)

    report = {
        "theta": args.theta,
        "T": args.T,
        "alpha": list(alpha),
        "policy": args.policy,
        "reps": args.reps,
        "brownian": {"drift": params.drift, "variance": params.variance},
        "rbm": {"paths": args.rbm_paths, "dt": args.rbm_dt,
                "mean_WT": float(np.mean(rbm))},
        "zeta": zeta.tolist(),
        "per_r": {},
    }
    for inst in instances:
        sums = batches[inst.r]
        _write_csv(out / f"r{inst.r}.csv",
                   ["replication", "ssc_metric", "What_T", "efficiency_metric",
                    "lower_bound_gap"],
                   [[s.rep, _fmt(s.ssc), _fmt(s.what_T), _fmt(s.eff), _fmt(s.lb_gap)]
                    for s in sums])
        what_mean, what_se = mean_stderr(s.what_T for s in sums)
        ssc_mean, ssc_se = mean_stderr(s.ssc for s in sums)
        eff_mean, eff_se = mean_stderr(s.eff for s in sums)
        report["per_r"][str(inst.r)] = {
            "rho_r": inst.rho,
            "What_mean": what_mean, "What_stderr": what_se,
            "ssc_mean": ssc_mean, "ssc_stderr": ssc_se,
            "eff_mean": eff_mean, "eff_stderr": eff_se,
            "ks_vs_rbm": ks_distance([s.what_T for s in sums], rbm),
            "lb_violations": sum(1 for s in sums if s.lb_gap > 1e-9),
            "flat_Y_pass_rate": float(np.mean([s.flat_pass for s in sums])),
        }
    _write_json(out / "report.json", report)
    if args.svg:
        xs = [inst.r for inst in instances]
        _write_svg(out / "ssc.svg", xs,
                   {"mean ssc": [report["per_r"][str(r)]["ssc_mean"] for r in xs]},
                   "state-space collapse metric vs r")
    _write_manifest(out, "ht", args.spec, seed, {
        "theta": args.theta, "r": rs, "reps": args.reps, "T": args.T,
        "alpha": list(alpha), "policy": args.policy, "order": args.order,
        "rbm_paths": args.rbm_paths, "rbm_dt": args.rbm_dt,
        "eps0": args.eps0, "threshold": args.threshold,
    })
    for r in rs:
        row = report["per_r"][str(r)]
        print(f"r={r} What={row['What_mean']:.4f}+-{row['What_stderr']:.4f} "
              f"ssc={row['ssc_mean']:.4f} ks={row['ks_vs_rbm']:.4f}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    spec = load_network(args.spec)
    seed = _resolve_seed(args)
    rs = _ints(args.r)
    alpha = _floats(args.alpha) if args.alpha else [1.0] * spec.I
    h = np.array(_floats(args.h)) if args.h else np.ones(spec.I)
    c = np.array(_floats(args.c)) if args.c else np.ones(spec.I)
    limit, instances = build_instances(spec, args.theta, rs)
    if not limit["pooled"]:
        print("limit network is not completely pooled", file=sys.stderr)
        return EXIT_WARN

    policies = []
    for name in args.policies.split(","):
        if name == "maxpressure":
            policies.append((name, MaxPressure(tuple(alpha))))
        elif name == "random":
            policies.append((name, RandomPolicy()))
        elif name == "priority":
            order = _ints(args.order) if args.order else list(range(len(
                enumerate_extreme_allocations(spec))))
            policies.append((name, PriorityPolicy(tuple(order))))
        else:
            raise NetworkError(f"unknown policy {name!r}")

    rows = []
    for name, policy in policies:
        _, batches = _run_policy_batch(limit, instances, policy, np.array(alpha),
                                       args, seed, h=h, c=c)
        for inst in instances:
            sums = batches[inst.r]
            what = mean_stderr(s.what_T for s in sums)
            hhat = mean_stderr(s.hhat_T for s in sums)
            chat = mean_stderr(s.chat_T for s in sums)
            ssc = mean_stderr(s.ssc for s in sums)
            eff = mean_stderr(s.eff for s in sums)
            rows.append([name, inst.r,
                         _fmt(what[0]), _fmt(what[1]), _fmt(hhat[0]), _fmt(hhat[1]),
                         _fmt(chat[0]), _fmt(chat[1]), _fmt(ssc[0]), _fmt(ssc[1]),
                         _fmt(eff[0]), _fmt(eff[1])])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "compare.csv",
               ["policy", "r", "What_mean", "What_stderr", "Hhat_mean", "Hhat_stderr",
                "Chat_mean", "Chat_stderr", "ssc_mean", "ssc_stderr",
                "eff_mean", "eff_stderr"],
               rows)
    _write_manifest(out, "compare", args.spec, seed, {
        "theta": args.theta, "r": rs, "reps": args.reps, "T": args.T,
        "alpha": alpha, "policies": args.policies, "order": args.order,
        "h": h.tolist(), "c": c.tolist(),
        "eps0": args.eps0, "threshold": args.threshold,
    })
    print(f"wrote {len(rows)} rows")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spnwb",
                                     description="max-pressure scheduling workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--spec", required=True)
        p.add_argument("--out", default="out")
        p.add_argument("--svg", action="store_true")
        if seed:
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("analyze", help="planning LPs and pooling certificate")
    common(p, seed=False)
    p.add_argument("--alpha", default=None)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("simulate", help="one trajectory under a policy")
    common(p)
    p.add_argument("--policy", default="maxpressure",
                   choices=["maxpressure", "random", "priority"])
    p.add_argument("--alpha", default=None)
    p.add_argument("--order", default=None)
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--grid", type=int, default=512)
    p.add_argument("--z0", default=None)
    p.add_argument("--events", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fluid", help="integrate the fluid dynamics")
    common(p, seed=False)
    p.add_argument("--alpha", default=None)
    p.add_argument("--z0", default=None)
    p.add_argument("--horizon", type=float, required=True)
    p.set_defaults(func=_cmd_fluid)

    p = sub.add_parser("delta", help="sampled collapse-rate radius and time bound")
    common(p)
    p.add_argument("--alpha", default=None)
    p.add_argument("--samples", type=int, default=1000)
    p.set_defaults(func=_cmd_delta)

    p = sub.add_parser("ht", help="diffusion-scaled replication experiments")
    common(p)
    p.add_argument("--theta", type=float, default=-1.0)
    p.add_argument("--r", default="10,20,40")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--alpha", default=None)
    p.add_argument("--policy", default="maxpressure",
                   choices=["maxpressure", "random", "priority"])
    p.add_argument("--order", default=None)
    p.add_argument("--rbm-paths", dest="rbm_paths", type=int, default=20000)
    p.add_argument("--rbm-dt", dest="rbm_dt", type=float, default=1e-4)
    p.add_argument("--eps0", type=float, default=0.1)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=_cmd_ht)

    p = sub.add_parser("compare", help="policies side by side under common random numbers")
    common(p)
    p.add_argument("--theta", type=float, default=-1.0)
    p.add_argument("--r", default="10,20,40")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--alpha", default=None)
    p.add_argument("--policies", default="maxpressure,priority")
    p.add_argument("--order", default=None)
    p.add_argument("--h", default=None)
    p.add_argument("--c", default=None)
    p.add_argument("--eps0", type=float, default=0.1)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NetworkError, NotCritical, BadTheta, FileNotFoundError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NotPooled, EAAViolated) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_WARN
    except (NegativeBuffer, ChatterGuard, AssertionError) as exc:
        print(f"internal error {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

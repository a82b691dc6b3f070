"""Command-line entry point ``adqueue``.

Exit status is 0 on success, 2 when the input is invalid (bad instance or
arguments) and 1 when a run fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import bounds, harness
from .instance_io import load_bundle
from .model import InstanceError, check_large_N, require_valid
from .offline import ConvergenceWarning, InfeasibleError, solve_offline, solve_offline_ctr
from .revenue import first_meeting_index, unfairness_demo

log = logging.getLogger("adqueue")


def _eps(bundle, args):
    if args.epsilon is not None:
        return args.epsilon
    if "epsilon" in bundle.defaults:
        return float(bundle.defaults["epsilon"])
    raise ValueError("--epsilon is required for this instance")


def _horizon(bundle, args):
    if args.horizon is not None:
        return args.horizon
    return int(bundle.defaults.get("cycles", 1000))


def _scenario(args, model, params):
    bundle = load_bundle(args.instance)
    params = dict(params, epsilon=_eps(bundle, args))
    return harness.Scenario.replicated(args.instance, model, params, _horizon(bundle, args),
                                       seed=args.seed, replicas=args.replicas, bundle=bundle)


def _report(result: harness.ScenarioResult, columns):
    header = result.header
    last = result.mean.shape[0] - 1
    parts = []
    for c in columns:
        if c in header:
            j = header.index(c)
            parts.append(f"{c}={result.mean[:, j].mean():.6g}")
    print(f"wrote {len(result.replica_paths)} replica file(s) and {result.aggregate_path}; "
          f"cycles={last + 1} " + " ".join(parts))


def cmd_simulate_revenue(args):
    params = {"variant": args.variant, "delta": args.delta, "pay_per_impression": args.pay_per_impression}
    sc = _scenario(args, "revenue", params)
    inst = sc.load().instance
    require_valid(inst, need="budget")
    report = check_large_N(inst)
    for msg in report.messages:
        log.warning(msg)
    res = harness.run_scenario(sc, args.out_dir, workers=args.workers)
    _report(res, ["revenue"])


def cmd_simulate_ctr(args):
    params = {"policy": args.policy, "fast_T": args.fast_T, "q_max": args.q_max, "hours": args.hours}
    sc = _scenario(args, "ctr", params)
    res = harness.run_scenario(sc, args.out_dir, workers=args.workers)
    _report(res, ["J", "norm_over", "norm_under"])


def cmd_offline(args):
    bundle = load_bundle(args.instance)
    inst = bundle.instance
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        if args.model == "revenue":
            require_valid(inst, need="budget")
            sol = solve_offline(inst, iterations=args.iterations, tol=args.tol)
        else:
            require_valid(inst, need="requirement")
            sol = solve_offline_ctr(inst, iterations=args.iterations, tol=args.tol)
    if not sol.converged:
        log.warning("dual iteration stopped with residual %.3g (tol %.3g)", sol.residual, args.tol)
    doc = sol.to_dict(inst)
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text)
        print(f"objective={sol.objective!r} residual={sol.residual:.3g} wrote {args.out}")
    else:
        print(text)


THRESHOLD_SWEEP_HEADER = ["epsilon", "T_real", "T", "throughput", "throughput_below", "throughput_above",
                          "mean_queue"]


def cmd_threshold_sweep(args):
    eps_list = [float(e) for e in args.epsilon_sweep.split(",")]
    rows = []
    for eps in eps_list:
        ch = bounds.threshold_for_epsilon(args.nu, args.p1, args.p2, eps)
        rows.append([eps, ch.T_real, ch.T_int, ch.throughput, ch.throughput_below, ch.throughput_above,
                     ch.mean_queue])
        print(f"epsilon={eps!r} T={ch.T_int} throughput={ch.throughput!r} mean_queue={ch.mean_queue!r} "
              f"bracketed={ch.brackets(1 - eps)}")
    meta = {"nu": args.nu, "p1": args.p1, "p2": args.p2}
    if len(eps_list) > 1:
        reg = bounds.log_tightness_regression(args.nu, args.p1, args.p2, eps_list)
        print(f"slope={reg.slope!r} r2={reg.r2!r}")
        meta.update(slope=reg.slope, r2=reg.r2)
    if args.out:
        harness.write_csv(args.out, THRESHOLD_SWEEP_HEADER, rows, meta)


def cmd_threshold(args):
    if args.epsilon_sweep is not None:
        cmd_threshold_sweep(args)
        return
    choice = bounds.threshold_for_epsilon(args.nu, args.p1, args.p2, args.epsilon)
    policy = bounds.ThresholdPolicy(choice.T_int, args.p1, args.p2, args.nu)
    st = bounds.threshold_policy_stationary(policy)
    print(f"T_real={choice.T_real:.6g} T={choice.T_int} throughput={st.throughput!r} "
          f"target={1 - args.epsilon!r} mean_queue={st.mean_queue!r}")
    rows = [[i, float(p)] for i, p in enumerate(st.pi)]
    if args.steps:
        freq, thr, _ = bounds.simulate_threshold_chain(policy, args.steps, seed=args.seed,
                                                       chains=args.chains)
        print(f"simulated throughput={thr!r}")
        rows = [[i, float(p), float(f)] for i, (p, f) in enumerate(zip(st.pi, freq))]
    if args.out:
        header = ["state", "pi"] + (["freq"] if args.steps else [])
        harness.write_csv(args.out, header, rows, {"T": choice.T_int, "nu": args.nu, "p1": args.p1,
                                                   "p2": args.p2, "epsilon": args.epsilon})


def cmd_lower_bound(args):
    doc = json.loads(Path(args.params).read_text()) if args.params else {}
    for key in ("epsilon", "phi", "P_plus"):
        if getattr(args, key) is not None:
            doc[key] = getattr(args, key)
    for key in ("h", "d"):
        if getattr(args, key) is not None:
            doc[key] = json.loads(getattr(args, key))
    missing = [k for k in ("epsilon", "phi") if k not in doc]
    if missing:
        raise ValueError(f"missing {', '.join(missing)} (give flags or --params)")
    params = bounds.LowerBoundParams(float(doc["epsilon"]), float(doc["phi"]), float(doc.get("P_plus", 1.0)))
    if doc.get("h") is None:
        print(f"single_queue_bound={bounds.single_queue_lower_bound(params)!r}")
        return
    h = np.array(doc["h"], dtype=float)
    d = np.array(doc["d"], dtype=float) if doc.get("d") is not None else np.ones(np.atleast_2d(h).shape[0])
    res = bounds.multi_queue_lower_bound(params, bounds.HalfspaceRegion(h, d))
    print(f"C1={res.C1!r} C2={res.C2!r} bound={res.bound!r}")


def cmd_sweep(args):
    model = args.model
    if model == "revenue":
        params = {"variant": args.variant}
    else:
        params = {"policy": args.policy, "fast_T": args.fast_T}
    bundle = load_bundle(args.instance)
    eps_list = [float(e) for e in args.eps_list.split(",")]
    params["epsilon"] = eps_list[0]
    params = {k: v for k, v in params.items() if v is not None}
    sc = harness.Scenario.replicated(args.instance, model, params, _horizon(bundle, args),
                                     seed=args.seed, replicas=1, bundle=bundle)
    out = args.out or str(Path(args.out_dir) / f"sweep_{model}.csv")
    header, data = harness.sweep_epsilon(sc, eps_list, out=out)
    for row in data:
        print(" ".join(f"{h}={v:.6g}" for h, v in zip(header, row)))
    print(f"wrote {out}")


def cmd_unfairness(args):
    demo = unfairness_demo(args.epsilon, args.horizon, seed=args.seed)
    k = first_meeting_index(demo, args.tol)
    print(f"gamma={demo.gamma.tolist()} C={demo.C.tolist()} first_meeting={k}")
    if args.out:
        rows = [[i, *demo.weights[i], *demo.Q[i]] for i in range(demo.weights.shape[0])]
        harness.write_csv(args.out, ["cycle", "w1", "w2", "Q1", "Q2"], rows,
                          {"seed": args.seed, "epsilon": args.epsilon, "variant": "underdraft",
                           "instance": "unfairness"})


def _add_instance(s):
    s.add_argument("instance", nargs="?", help="bundled instance name or JSON file")
    s.add_argument("--instance", dest="instance_opt", metavar="INSTANCE", help="same as the positional argument")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--replicas", type=int, default=1)
    common.add_argument("--out-dir", default="results")
    common.add_argument("--out", default=None, help="output file for single-file commands")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="adqueue", description="Queue-based online ad assignment.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate-revenue", parents=[common], help="budgeted revenue maximization")
    _add_instance(s)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--horizon", "--cycles", dest="horizon", type=int)
    s.add_argument("--variant", choices=("standard", "underdraft", "estimated"), default="standard")
    s.add_argument("--delta", type=float, default=0.0, help="relative CTR estimation error")
    s.add_argument("--pay-per-impression", action="store_true")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_simulate_revenue)

    s = sub.add_parser("simulate-ctr", parents=[common], help="click maximization under requirements")
    _add_instance(s)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--horizon", "--cycles", dest="horizon", type=int)
    s.add_argument("--policy", choices=("mwm", "mwm-fast", "opt"), default="mwm")
    s.add_argument("--fast-T", dest="fast_T", type=int)
    s.add_argument("--q-max", "--customize-qmax", dest="q_max", type=float,
                   help="customize requirements for this queue cap")
    s.add_argument("--hours", type=int, help="0 disables hourly rates")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_simulate_ctr)

    s = sub.add_parser("offline-baseline", parents=[common], help="offline optimum by dual subgradient")
    _add_instance(s)
    s.add_argument("--model", choices=harness.MODELS, default="revenue")
    s.add_argument("--iterations", type=int, default=100_000)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_offline)

    s = sub.add_parser("threshold-policy", parents=[common], help="threshold queue for a target epsilon")
    s.add_argument("--nu", type=float, default=0.7)
    s.add_argument("--p1", type=float, default=0.5)
    s.add_argument("--p2", type=float, default=0.25)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--epsilon-sweep", dest="epsilon_sweep", help="comma-separated epsilons")
    s.add_argument("--steps", type=int, default=0, help="also simulate this many steps per chain")
    s.add_argument("--chains", type=int, default=1000)
    s.set_defaults(func=cmd_threshold)

    s = sub.add_parser("lower-bound", parents=[common], help="overdraft lower bounds")
    s.add_argument("--params", help="JSON file with epsilon, phi, P_plus and optional h, d")
    s.add_argument("--epsilon", type=float)
    s.add_argument("--phi", type=float)
    s.add_argument("--P-plus", dest="P_plus", type=float)
    s.add_argument("--h", help="JSON matrix of halfspace rows for the multi-queue bound")
    s.add_argument("--d", help="JSON vector of halfspace offsets")
    s.set_defaults(func=cmd_lower_bound)

    s = sub.add_parser("sweep", parents=[common], help="objective gap and queues across epsilons")
    _add_instance(s)
    s.add_argument("--model", choices=harness.MODELS, default="revenue")
    s.add_argument("--eps-list", required=True, help="comma-separated epsilons")
    s.add_argument("--horizon", "--cycles", dest="horizon", type=int)
    s.add_argument("--variant", choices=("standard", "underdraft", "estimated"), default="standard")
    s.add_argument("--policy", choices=("mwm", "mwm-fast", "opt"), default="mwm")
    s.add_argument("--fast-T", dest="fast_T", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("demo-unfairness", parents=[common], help="two identical clients started apart")
    s.add_argument("--epsilon", type=float, default=0.01)
    s.add_argument("--horizon", type=int, default=100_000)
    s.add_argument("--tol", type=float, default=0.01)
    s.set_defaults(func=cmd_unfairness)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if hasattr(args, "instance_opt"):
        if args.instance and args.instance_opt and args.instance != args.instance_opt:
            print("error: give the instance once", file=sys.stderr)
            return 2
        args.instance = args.instance or args.instance_opt
        if not args.instance:
            print("error: an instance is required", file=sys.stderr)
            return 2
    if getattr(args, "replicas", 1) < 1:
        print("error: --replicas must be at least 1", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except InfeasibleError as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 1
    except InstanceError as exc:
        print(f"invalid instance: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, FileNotFoundError, bounds.InvalidChainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, OSError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

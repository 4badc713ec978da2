"""Command-line interface.

Subcommands: ``solve``, ``approx``, ``bounds``, ``generate``, ``probe`` and
``bench``. Reports are JSON (stdout or ``--out``); ``bounds`` and ``bench``
also write CSV. Exit codes: 0 success, 1 a limit was hit (a result is still
reported), 2 bad input.
"""

import argparse
import csv
import datetime
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, approx, exact, instance, relax
from .errors import FusionError

EXIT_OK, EXIT_LIMIT, EXIT_INPUT = 0, 1, 2
APPROX_METHODS = {"local": "local_search", "greedy": "greedy", "sample": "sampling",
                  "derand": "derandomized"}
BENCH_CONFIGS = {
    "grad": {"submodular_cuts": False, "optimality_cuts": False},
    "grad+submod": {"submodular_cuts": True, "optimality_cuts": False},
    "grad+submod+opt": {"submodular_cuts": True, "optimality_cuts": True},
}


class InputError(Exception):
    pass


# ------------------------------------------------------------------ helpers


def parse_generator(text):
    """``random:d=5,n=12,s=4,seed=0`` -> ``("random", {...})``."""
    kind, _, rest = text.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, sep, val = item.partition("=")
        if not sep:
            raise InputError(f"bad generator parameter {item!r}")
        params[key.strip()] = val.strip()
    return kind, params


def resolve_instance(desc, s=None):
    """Load a JSON instance file or build one from a ``random:`` descriptor."""
    if desc.startswith("random:"):
        _, p = parse_generator(desc)
        try:
            d, n, ss, seed = int(p["d"]), int(p["n"]), int(p["s"]), int(p.get("seed", 0))
        except (KeyError, ValueError) as exc:
            raise InputError(f"random spec needs integer d, n, s (and seed): {exc}") from None
        inst = instance.gen_random(d, n, ss, seed)
    else:
        inst = instance.load(desc)
    return inst if s is None else inst.with_budget(s)


def report(command, desc, config, seed, results, wall):
    return {
        "command": command,
        "instance": desc,
        "config": config,
        "seed": seed,
        "results": results,
        "timing": {
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "wall_time": wall,
        },
        "versions": {
            "fusionopt": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }


def emit(doc, path):
    text = json.dumps(doc, indent=1, sort_keys=False)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def write_csv(path, header, rows):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if path:
            fh.close()


def threads():
    try:
        return max(1, int(os.environ.get("FUSIONOPT_THREADS", "1")))
    except ValueError:
        return 1


# ----------------------------------------------------------------- commands


def _bnb_config(args):
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
    if args.gap_tol is not None:
        cfg["gap_tol"] = args.gap_tol
    if args.time_limit is not None:
        cfg["time_limit"] = args.time_limit
    if args.node_limit is not None:
        cfg["node_limit"] = args.node_limit
    if args.no_submodular_cuts:
        cfg["submodular_cuts"] = False
    if args.no_optimality_cuts:
        cfg["optimality_cuts"] = False
    try:
        return exact.BnbConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None


def _solve_payload(res):
    out = res.to_dict()
    out.pop("wall_time")
    return out


def cmd_solve(args):
    inst = resolve_instance(args.instance, args.s)
    cfg = _bnb_config(args)
    t0 = time.perf_counter()
    res = exact.solve_bnb(inst, cfg)
    doc = report("solve", args.instance, cfg.to_dict(), None, _solve_payload(res),
                 time.perf_counter() - t0)
    emit(doc, args.out)
    return EXIT_OK if res.solved else EXIT_LIMIT


def cmd_approx(args):
    inst = resolve_instance(args.instance, args.s)
    init = None
    if args.init:
        init = [int(i) for i in args.init.split(",")]
    t0 = time.perf_counter()
    rep = approx.approximate(inst, APPROX_METHODS[args.method], seed=args.seed, init=init,
                             relaxation=args.relaxation)
    doc = report("approx", args.instance,
                 {"method": args.method, "init": init, "relaxation": args.relaxation},
                 args.seed, rep.to_dict(), time.perf_counter() - t0)
    emit(doc, args.out)
    return EXIT_OK


def _s_values(args, n):
    if args.s_values:
        vals = [int(v) for v in args.s_values.split(",")]
    else:
        vals = list(range(1, n))
    bad = [v for v in vals if not 1 <= v <= n]
    if bad:
        raise InputError(f"budgets {bad} outside [1, {n}]")
    return vals


def cmd_bounds(args):
    base = resolve_instance(args.instance)
    t0 = time.perf_counter()
    rows, per_s = [], []
    for s in _s_values(args, base.n):
        inst = base.with_budget(s)
        rep = relax.relaxation_bounds(inst)
        lb = approx.local_search(inst).objective
        rows.append([s, rep["zR"], rep["zM"], rep["zMc"], lb])
        per_s.append({"s": s, "lb": lb, **relax.bound_report_json(rep)})
    write_csv(args.csv, ["s", "zR", "zM", "zMc", "lb"], [[f"{v:.10g}" if isinstance(v, float)
                                                          else v for v in r] for r in rows])
    if args.out:
        doc = report("bounds", args.instance, {"s_values": [r[0] for r in rows]}, None,
                     per_s, time.perf_counter() - t0)
        emit(doc, args.out)
    return EXIT_OK


def cmd_generate(args):
    if args.kind == "random":
        if None in (args.d, args.n, args.s):
            raise InputError("random instances need --d, --n and --s")
        inst = instance.gen_random(args.d, args.n, args.s, args.seed)
    else:
        if args.fim is None or args.s is None:
            raise InputError("pmu instances need --fim and --s")
        sigma = args.sigma_csv if args.sigma_csv else args.sigma
        if not isinstance(sigma, str) and not sigma > 0:
            raise InputError("PMU standard deviation must be positive")
        inst = instance.load_pmu(args.fim, sigma, args.s)
    instance.save(inst, args.out, csv=args.csv)
    sys.stderr.write(f"wrote {args.out}\n")
    return EXIT_OK


def probe_report(inst, iters=2000):
    """Root fixings and probing counts for one instance."""
    z_lb = approx.local_search(inst).objective
    rep = relax.relaxation_bounds(inst, max_iter=iters)
    certs = rep["certificates"]
    one, zero = set(), set()
    for cert in certs.values():
        z, o = exact.probe_fix(inst, cert, z_lb)
        zero.update(z)
        one.update(o)
    best = min((certs[f] for f in relax.FORMULATIONS), key=lambda c: c.bound)
    pr = exact.probe_pairs(inst, rep["points"][best.formulation], best, z_lb,
                           fixed_in=one, fixed_out=zero)
    return {
        "lower_bound": z_lb,
        "upper_bound": rep["best"],
        "fixed_to_one": sorted(one | set(pr.fix_one)),
        "fixed_to_zero": sorted(zero | set(pr.fix_zero)),
        "dual_fix_one": len(one),
        "dual_fix_zero": len(zero),
        "cut_counts": pr.counts,
        "restricted_solves": pr.restricted_solves,
        "disjunctions": [{"S1": sorted(d.S1), "S0": sorted(d.S0)} for d in pr.disjunctions],
    }


def cmd_probe(args):
    inst = resolve_instance(args.instance, args.s)
    t0 = time.perf_counter()
    doc = report("probe", args.instance, {}, None, probe_report(inst),
                 time.perf_counter() - t0)
    emit(doc, args.out)
    return EXIT_OK


def _bench_entry(task):
    d, n, s, seed, time_limit = task
    inst = instance.gen_random(d, n, s, seed)
    rows = {"bnb": [], "approx": [], "probe": []}
    for name, toggles in BENCH_CONFIGS.items():
        res = exact.solve_bnb(inst, exact.BnbConfig(time_limit=time_limit, **toggles))
        c = res.cut_counts
        rows["bnb"].append([seed, d, n, s, name, res.nodes_explored, f"{res.mip_gap:.3g}",
                            int(res.solved), f"{res.incumbent.objective:.10g}",
                            c["a"], c["b"], c["c"], c["d"], c["e"]])
    z_opt = res.incumbent.objective
    bounds = relax.relaxation_bounds(inst)
    row = [seed, d, n, s, f"{z_opt:.10g}"]
    for key in ("zR", "zM", "zMc"):
        row.append(f"{bounds[key] - z_opt:.6g}")
    for method in ("local_search", "greedy", "derandomized"):
        rep = approx.approximate(inst, method, seed=seed, bounds=bounds)
        row.append(f"{z_opt - rep.selection.objective:.6g}")
    rows["approx"].append(row)
    p = probe_report(inst)
    rows["probe"].append([seed, d, n, s, p["dual_fix_one"], p["dual_fix_zero"],
                          len(p["fixed_to_one"]), len(p["fixed_to_zero"])])
    return rows


BENCH_HEADERS = {
    "bnb": ["seed", "d", "n", "s", "cuts", "nodes", "mip_gap", "solved", "objective",
            "a", "b", "c", "d_count", "e"],
    "approx": ["seed", "d", "n", "s", "z_opt", "gap_zR", "gap_zM", "gap_zMc",
               "gap_local_search", "gap_greedy", "gap_derandomized"],
    "probe": ["seed", "d", "n", "s", "dual_fix_one", "dual_fix_zero", "total_fix_one",
              "total_fix_zero"],
}


def cmd_bench(args):
    rng = np.random.default_rng(args.seed)
    tasks = []
    for k in range(args.count):
        d = int(rng.integers(args.d_min, args.d_max + 1))
        s = args.s if args.s else int(rng.integers(1, args.n))
        tasks.append((d, args.n, s, args.seed + k, args.time_limit))
    t0 = time.perf_counter()
    nthreads = threads()
    if nthreads > 1:
        with ProcessPoolExecutor(max_workers=nthreads) as pool:
            results = list(pool.map(_bench_entry, tasks))
    else:
        results = [_bench_entry(t) for t in tasks]
    os.makedirs(args.out_dir, exist_ok=True)
    for table, header in BENCH_HEADERS.items():
        rows = [r for res in results for r in res[table]]
        write_csv(os.path.join(args.out_dir, f"{table}.csv"), header, rows)
    sys.stderr.write(f"bench: {len(tasks)} instances in {time.perf_counter() - t0:.1f}s, "
                     f"tables in {args.out_dir}\n")
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="fusionopt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add_instance(sp):
        sp.add_argument("instance", help="instance JSON path or random:d=..,n=..,s=..,seed=..")
        sp.add_argument("--s", type=int, help="override the budget stored in the instance")
        sp.add_argument("--out", help="write the JSON report here instead of stdout")

    sp = sub.add_parser("solve", help="branch-and-bound to optimality")
    add_instance(sp)
    sp.add_argument("--config", help="JSON file with solver settings")
    sp.add_argument("--gap-tol", type=float)
    sp.add_argument("--time-limit", type=float)
    sp.add_argument("--node-limit", type=int)
    sp.add_argument("--no-submodular-cuts", action="store_true")
    sp.add_argument("--no-optimality-cuts", action="store_true")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("approx", help="approximation algorithms")
    add_instance(sp)
    sp.add_argument("--method", choices=sorted(APPROX_METHODS), default="local")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--init", help="comma-separated initial indices for local search")
    sp.add_argument("--relaxation", choices=relax.FORMULATIONS,
                    help="relaxed point used by sample/derand")
    sp.set_defaults(func=cmd_approx)

    sp = sub.add_parser("bounds", help="relaxation bounds over a sweep of budgets")
    sp.add_argument("instance")
    sp.add_argument("--s-values", help="comma-separated budgets (default 1..n-1)")
    sp.add_argument("--csv", help="CSV path (default stdout)")
    sp.add_argument("--out", help="JSON report path")
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("generate", help="write an instance file")
    sp.add_argument("kind", choices=("random", "pmu"))
    sp.add_argument("--d", type=int)
    sp.add_argument("--n", type=int)
    sp.add_argument("--s", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--fim", help="CSV with the existing information matrix (pmu)")
    sp.add_argument("--sigma", type=float, default=0.02, help="PMU standard deviation")
    sp.add_argument("--sigma-csv", help="CSV with one standard deviation per bus")
    sp.add_argument("--csv", action="store_true", help="store matrices in sibling CSV files")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("probe", help="root variable fixing and probing report")
    add_instance(sp)
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("bench", help="run seeded corpora and write CSV tables")
    sp.add_argument("--n", type=int, default=12)
    sp.add_argument("--count", type=int, default=10)
    sp.add_argument("--d-min", type=int, default=3)
    sp.add_argument("--d-max", type=int, default=8)
    sp.add_argument("--s", type=int, help="fixed budget (default random in 1..n-1)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--time-limit", type=float)
    sp.add_argument("--out-dir", default="bench_out")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FusionError, InputError, ValueError) as exc:
        sys.stderr.write(f"fusionopt: error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

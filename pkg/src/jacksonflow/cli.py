"""Command line entry point: ``jacksonflow <command> ...``.

Exit status is 0 when every check passes, 2 when a bound or acceptance flag
fails, and 1 on a runtime or input error.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import _io
from . import fluid as fl
from . import harness as hs
from . import measures as ms
from . import network_sim as ns
from . import operators as ops
from . import skorokhod as sk
from ._validation import ValidationError
from .fields import PathField

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _read_field(path):
    if path.endswith((".pfld", ".bin")):
        with open(path, "rb") as fh:
            return PathField.from_bytes(fh.read())
    return PathField.read_csv(path)


def cmd_simulate(args):
    raw = _load_json(args.spec)
    spec = ns.NetworkSpec.from_dict(raw)
    cfg = ns.ScalingConfig(args.alpha, args.T, args.dt)
    N = spec.N
    if "Q0" in raw:
        Q0 = np.asarray(raw["Q0"], dtype=np.int64)
    else:
        Q0 = ns.initial_queues(raw.get("q0", 0.0), N, args.alpha)
    os.makedirs(args.out, exist_ok=True)
    manifest = {
        "schema_version": hs.SCHEMA_VERSION,
        "spec_sha256": spec.digest(),
        "seed": args.seed,
        "reps": args.reps,
        "alpha": args.alpha,
        "T": args.T,
        "dt": args.dt,
        "N": N,
        "Q0": Q0.tolist(),
        "runs": [],
    }
    for r in range(args.reps):
        path = ns.simulate(spec, Q0, cfg.horizon(N), args.seed, rep=r,
                           sample_times=cfg.sample_times(N), keep_log=False)
        sp = ns.fluid_scale(path, cfg)
        name = f"rep_{r:04d}.csv"
        with open(os.path.join(args.out, name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["station", "t", "Qbar", "Ibar"])
            for i in range(N):
                for j, t in enumerate(sp.times):
                    w.writerow([i, _io.fmt(t), _io.fmt(sp.Qbar[i, j]), _io.fmt(sp.Ibar[i, j])])
        manifest["runs"].append({"rep": r, "file": name, "events": path.counts.to_dict()})
    _io.write_json(os.path.join(args.out, "manifest.json"), manifest)
    print(f"wrote {args.reps} replications for N={N} to {args.out}")
    return EXIT_OK


def cmd_fluid(args):
    raw = _load_json(args.spec)
    if "kernel" not in raw:
        raise ValidationError("fluid spec needs a kernel")
    spec = fl.FluidSpec(raw.get("q0", 0.0), raw.get("lambda", 0.0), raw.get("mu", 1.0),
                        ops.make_kernel(raw["kernel"]), M=args.M, gamma=raw.get("gamma", 0.5))
    sol = fl.fluid_limit(spec, args.T, args.dt)
    comp = sol.complementarity
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_index", "t", "Qbar", "Ibar", "complementarity"])
        times = sol.Qbar.times
        for u in range(spec.M):
            c = _io.fmt(comp[u])
            for j, t in enumerate(times):
                w.writerow([u, _io.fmt(t), _io.fmt(sol.Qbar.values[u, j]), _io.fmt(sol.Ibar.values[u, j]), c])
    print(f"iterations={sol.reflection.iterations} error_bound={sol.reflection.error_bound:.3e} "
          f"max_complementarity={float(np.abs(comp).max()):.3e}")
    return EXIT_OK if sol.reflection.converged else EXIT_VIOLATION


def cmd_skorokhod(args):
    X = _read_field(args.x)
    F = ops.Kernel.from_dict(_load_json(args.kernel))
    sol = sk.reflect(X, F, tol=args.tol, max_iter=args.max_iter, gamma=args.gamma)
    os.makedirs(args.out, exist_ok=True)
    sol.Z.to_csv(os.path.join(args.out, "Z.csv"))
    sol.Y.to_csv(os.path.join(args.out, "Y.csv"))
    summary = {
        "schema_version": hs.SCHEMA_VERSION,
        "iterations": sol.iterations,
        "fixed_point_residual": sol.fixed_point_residual,
        "error_bound": sol.error_bound,
        "converged": sol.converged,
        "gamma": sol.certificate.gamma,
        "k": sol.certificate.k,
        "complementarity_residual": sol.complementarity_residual,
    }
    _io.write_json(os.path.join(args.out, "summary.json"), summary)
    print(f"iterations={sol.iterations} error_bound={sol.error_bound:.3e} converged={sol.converged}")
    return EXIT_OK if sol.converged else EXIT_VIOLATION


def cmd_measure(args):
    a = ms.AtomSet.read_csv(args.a)
    b = ms.AtomSet.read_csv(args.b)
    if args.metric != "w1":
        raise ValidationError(f"unknown metric {args.metric!r}")
    tr = ms.wasserstein1(a, b, return_coupling=True)
    print(_io.fmt(tr.cost))
    if args.coupling:
        with open(args.coupling, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["a_index", "b_index", "mass"])
            for i, j in zip(*np.nonzero(tr.coupling > 0)):
                w.writerow([int(i), int(j), _io.fmt(tr.coupling[i, j])])
    return EXIT_OK


def _print_rows(rows, keys):
    for r in rows:
        parts = [f"N={r['N']}"]
        if r.get("error"):
            parts.append(f"error={r['error']}")
        for k in keys:
            if r.get(k) is not None and not r.get("error"):
                parts.append(f"{k}={r[k]:.6g}")
        print("  ".join(parts))


def cmd_converge(args):
    cfg = hs.StudyConfig.from_dict(_load_json(args.config))
    out = args.out or cfg.out
    if args.intermediate:
        rep = hs.run_intermediate_study(cfg)
        _print_rows(rep.per_N, ["lifted_error", "op_distance", "bound"])
        if out:
            os.makedirs(out, exist_ok=True)
            _io.write_json(os.path.join(out, "summary.json"), rep.summary())
    else:
        rep = hs.run_convergence_study(cfg)
        _print_rows(rep.per_N, ["mean_error", "stderr", "w1_mean", "op_distance"])
        if out:
            rep.write(out)
    print(f"slope={rep.fit.slope:.4f}" if rep.fit.defined else "slope=undefined")
    for k, v in rep.flags.items():
        print(f"{k}: {'n/a' if v is None else ('PASS' if v else 'FAIL')}")
    return EXIT_OK if rep.passed else EXIT_VIOLATION


def cmd_verify(args):
    cfg = hs.StudyConfig.from_dict(_load_json(args.config))
    rep = hs.verify_bounds(cfg)
    _print_rows(rep.per_N, ["x_lhs", "x_rhs", "q_lhs", "q_rhs"])
    for k, v in rep.flags.items():
        print(f"{k}: {'PASS' if v else 'FAIL'}")
    return EXIT_OK if rep.passed else EXIT_VIOLATION


def build_parser():
    p = argparse.ArgumentParser(prog="jacksonflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a finite network and write fluid-scaled paths")
    s.add_argument("--spec", required=True)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--T", type=float, default=2.0)
    s.add_argument("--dt", type=float, default=0.01)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fluid", help="solve the fluid model and write Qbar, Ibar")
    f.add_argument("--spec", required=True)
    f.add_argument("--M", type=int, default=256)
    f.add_argument("--T", type=float, default=2.0)
    f.add_argument("--dt", type=float, default=0.005)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fluid)

    k = sub.add_parser("skorokhod", help="reflect a path field under a kernel")
    k.add_argument("--x", required=True)
    k.add_argument("--kernel", required=True)
    k.add_argument("--out", required=True)
    k.add_argument("--tol", type=float, default=None)
    k.add_argument("--max-iter", type=int, default=None)
    k.add_argument("--gamma", type=float, default=0.5)
    k.set_defaults(func=cmd_skorokhod)

    m = sub.add_parser("measure", help="Wasserstein-1 distance between two atom sets")
    m.add_argument("--a", required=True)
    m.add_argument("--b", required=True)
    m.add_argument("--metric", default="w1")
    m.add_argument("--coupling", default=None, help="write the optimal coupling to this CSV")
    m.set_defaults(func=cmd_measure)

    c = sub.add_parser("converge", help="run a convergence study")
    c.add_argument("--config", required=True)
    c.add_argument("--out", default=None)
    c.add_argument("--intermediate", action="store_true",
                   help="deterministic sweep of the lifted intermediate system only")
    c.set_defaults(func=cmd_converge)

    v = sub.add_parser("verify", help="check the explicit martingale bounds of a study")
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, RuntimeError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

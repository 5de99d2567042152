"""Convergence studies over the network size ``N``.

A study simulates the scaled network for each ``N``, compares it with the
fluid solution, and fits ``log(error) ~ slope * log(N)``.  Alongside the
total coupling error it records the two deterministic legs of the triangle

    simulation -> intermediate system -> lifted intermediate -> fluid,

the operator gap ``||(G^N)^T - G^T||_op`` and ``W1(nu^N, nu_bar)``.
"""

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _io
from . import fluid as fl
from . import measures as ms
from . import network_sim as ns
from . import operators as ops
from . import skorokhod as sk
from ._validation import ValidationError

__all__ = [
    "SCHEMA_VERSION",
    "StudyConfig",
    "RateFit",
    "ConvergenceReport",
    "IntermediateReport",
    "BoundsReport",
    "fit_rate",
    "run_convergence_study",
    "run_intermediate_study",
    "verify_bounds",
]

SCHEMA_VERSION = 1

DEFAULT_FUNCTIONALS = (
    {"id": "running_max_h", "params": {"a": 0.25}},
    {"id": "path_integral", "params": {}},
)


@dataclass(frozen=True)
class StudyConfig:
    kernel: dict
    lam: object = 1.0
    mu: object = 2.0
    q0: object = 1.0
    alpha: float = 1.0
    T: float = 2.0
    dt: float = 0.01
    N_list: tuple = (16, 64, 256)
    reps: int = 30
    seed: int = 0
    M: int = None
    gamma: float = 0.5
    slope_tol: float = 0.15
    functionals: tuple = DEFAULT_FUNCTIONALS
    out: str = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        N_list = tuple(int(n) for n in self.N_list)
        if not N_list or any(n < 1 for n in N_list):
            raise ValidationError("N_list must hold positive integers")
        if any(b <= a for a, b in zip(N_list, N_list[1:])):
            raise ValidationError("N_list must be strictly increasing")
        if int(self.reps) < 1:
            raise ValidationError("reps must be at least 1")
        if self.schema_version != SCHEMA_VERSION:
            raise ValidationError(f"unsupported schema_version {self.schema_version}")
        M = max(max(N_list), 256) if self.M is None else int(self.M)
        bad = [n for n in N_list if M % n]
        if bad:
            raise ValidationError(f"fluid resolution M={M} is not a multiple of N in {bad}")
        ns.ScalingConfig(self.alpha, self.T, self.dt)
        object.__setattr__(self, "N_list", N_list)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "reps", int(self.reps))
        object.__setattr__(self, "functionals", tuple(dict(f) for f in self.functionals))
        for f in self.functionals:
            if f.get("id") not in ms.FUNCTIONALS:
                raise ValidationError(f"unknown functional {f.get('id')!r}")

    @property
    def scaling(self):
        return ns.ScalingConfig(self.alpha, self.T, self.dt)

    def make_kernel(self):
        return ops.make_kernel(self.kernel)

    def to_dict(self):
        d = asdict(self)
        d["N_list"] = list(self.N_list)
        d["functionals"] = [dict(f) for f in self.functionals]
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.setdefault("schema_version", SCHEMA_VERSION)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if "kernel" not in d:
            raise ValidationError("config needs a kernel family spec")
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    residual: float
    n_used: int
    dropped: tuple = ()

    @property
    def defined(self):
        return math.isfinite(self.slope)


def fit_rate(points):
    """Least squares of ``log(error)`` on ``log(N)``.

    Nonpositive errors are dropped and listed in ``dropped``.  With fewer
    than two usable points the slope is reported as NaN.  ``residual`` is
    the sum of squared log residuals.
    """
    pts = [(float(n), float(e)) for n, e in points]
    if len(pts) < 3:
        raise ValidationError("fit_rate needs at least three points")
    use = [(n, e) for n, e in pts if e > 0 and n > 0 and math.isfinite(e)]
    dropped = tuple(n for n, e in pts if not (e > 0 and n > 0 and math.isfinite(e)))
    if len({n for n, _ in use}) < 2:
        return RateFit(math.nan, math.nan, math.nan, len(use), dropped)
    x = np.log([n for n, _ in use])
    y = np.log([e for _, e in use])
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    res = float(np.sum((y - A @ np.array([slope, intercept])) ** 2))
    return RateFit(float(slope), float(intercept), res, len(use), dropped)


@dataclass
class ConvergenceReport:
    config: StudyConfig
    per_N: list
    fit: RateFit
    w1_fit: RateFit
    flags: dict
    records: list = field(repr=False, default_factory=list)
    fluid_values: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(v for v in self.flags.values() if v is not None)

    def summary(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "fluid_functionals": self.fluid_values,
            "per_N": self.per_N,
            "fit": asdict(self.fit),
            "w1_fit": asdict(self.w1_fit),
            "flags": self.flags,
            "passed": self.passed,
        }

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        _io.write_ndjson(os.path.join(out_dir, "records.ndjson"), self.records)
        _io.write_json(os.path.join(out_dir, "summary.json"), self.summary())
        cols = ["N", "mean_error", "stderr", "op_distance", "w1_mean", "w1_stderr",
                "sim_vs_intermediate", "lift_exactness", "intermediate_vs_fluid",
                "noise_x_lhs", "noise_x_rhs", "noise_q_lhs", "noise_q_rhs"]
        with open(os.path.join(out_dir, "per_N.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in self.per_N:
                w.writerow([row["N"]] + [_cell(row.get(c)) for c in cols[1:]])


def _cell(x):
    if x is None:
        return ""
    return _io.fmt(x) if isinstance(x, (float, np.floating)) else str(x)


class _FluidContext:
    """Fluid solution plus everything reused across ``N``."""

    def __init__(self, cfg):
        self.G = cfg.make_kernel()
        self.spec = fl.FluidSpec(cfg.q0, cfg.lam, cfg.mu, self.G, M=cfg.M, gamma=cfg.gamma)
        self.sol = fl.fluid_limit(self.spec, cfg.T, cfg.dt)
        self.nu_bar = ms.AtomSet.from_field(self.sol.Qbar)
        self.fvals = {
            f["id"]: ms.functional_average(self.nu_bar, f["id"], f.get("params"))
            for f in cfg.functionals
        }


def _finite_system(cfg, ctx, N):
    netspec = ns.spec_from_kernel(ctx.G, cfg.lam, cfg.mu, N)
    Q0 = ns.initial_queues(cfg.q0, N, cfg.alpha)
    q0bar = Q0 / cfg.scaling.scale(N)
    inter = fl.intermediate_process(netspec, q0bar, cfg.T, cfg.dt, gamma=cfg.gamma)
    GNt = ops.transpose(ops.from_matrix(netspec.P))
    op_dist = ops.op_norm_distance(GNt, ctx.spec.Gt, M=cfg.M)
    lifted = fl.lift(inter.Q, cfg.dt, M=cfg.M)
    inter_vs_fluid = (lifted - ctx.sol.Qbar).norm()
    # reading the lift back at block representatives must return the finite paths
    lift_gap = float(np.abs(lifted.values[:: cfg.M // N] - inter.Q).max())
    return netspec, Q0, inter, GNt, op_dist, inter_vs_fluid, lift_gap


def _noise_rhs(netspec, cfg, N):
    s = cfg.scaling.scale(N)
    lam1 = float(netspec.lam.mean())
    mu1 = float(netspec.mu.mean())
    return 2.0 * math.sqrt(cfg.T) / math.sqrt(s) * math.sqrt(lam1 + 2.0 * mu1)


def _free_process_from_path(sp, netspec):
    Y = netspec.mu[:, None] * sp.Ibar
    return sp.Qbar - Y + netspec.P.T @ Y


def run_convergence_study(cfg, progress=None):
    """Simulate every ``N`` in the config and compare with the fluid limit.

    Failures inside one ``N`` are recorded in that row's ``error`` field and
    the study moves on.
    """
    ctx = _FluidContext(cfg)
    scaling = cfg.scaling
    per_N, records = [], []
    for N in cfg.N_list:
        row = {"N": N}
        try:
            netspec, Q0, inter, GNt, op_dist, inter_vs_fluid, lift_gap = _finite_system(cfg, ctx, N)
            row.update(op_distance=op_dist, intermediate_vs_fluid=inter_vs_fluid, lift_exactness=lift_gap)
            K = inter.info["certificate"].phi_lipschitz
            rhs_x = _noise_rhs(netspec, cfg, N)
            errs, w1s, s1s, lx, lq, events = [], [], [], [], [], []
            dual_ok, tri_ok = True, True
            for r in range(cfg.reps):
                path = ns.simulate(netspec, Q0, scaling.horizon(N), cfg.seed, rep=r,
                                   sample_times=scaling.sample_times(N), keep_log=False)
                sp = ns.fluid_scale(path, scaling)
                err = fl.coupling_error(sp, ctx.sol)
                sim_inter = float(np.abs(sp.Qbar - inter.Q).max(axis=1).mean())
                Xn = _free_process_from_path(sp, netspec)
                x_gap = float(np.abs(Xn - inter.X).max(axis=1).mean())
                nu = ns.empirical_measure(sp)
                w1 = ms.wasserstein1(nu, ctx.nu_bar)
                rec = {"N": N, "rep": r, "coupling_error": err, "w1": w1,
                       "sim_vs_intermediate": sim_inter, "noise_x": x_gap,
                       "events": path.counts.to_dict()}
                slack = 1e-12 * (1 + err)
                tri = err <= sim_inter + lift_gap + inter_vs_fluid + slack
                tri_ok &= tri
                rec["triangle_ok"] = tri
                for f in cfg.functionals:
                    fid = f["id"]
                    val = ms.functional_average(nu, fid, f.get("params"))
                    gap = abs(val - ctx.fvals[fid])
                    bound = ms.lipschitz_constant(fid, cfg.T) * w1
                    ok = gap <= bound + 1e-12 * (1 + bound)
                    dual_ok &= ok
                    rec[f"functional_{fid}"] = val
                    rec[f"functional_{fid}_gap"] = gap
                    rec[f"functional_{fid}_ok"] = ok
                records.append(rec)
                errs.append(err)
                w1s.append(w1)
                s1s.append(sim_inter)
                lx.append(x_gap)
                lq.append(sim_inter)
                events.append(path.counts.total)
            errs, w1s = np.array(errs), np.array(w1s)
            se = lambda a: float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else math.nan
            row.update(
                mean_error=float(errs.mean()), stderr=se(errs),
                w1_mean=float(w1s.mean()), w1_stderr=se(w1s),
                sim_vs_intermediate=float(np.mean(s1s)),
                noise_x_lhs=float(np.mean(lx)), noise_x_rhs=rhs_x,
                noise_q_lhs=float(np.mean(lq)), noise_q_rhs=K * rhs_x,
                noise_constant=K,
                triangle_ok=bool(tri_ok), dual_bound_ok=bool(dual_ok),
                mean_events=float(np.mean(events)),
            )
        except (ValidationError, RuntimeError, ArithmeticError) as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        per_N.append(row)
        if progress is not None:
            progress(row)
    return _assemble(cfg, per_N, records, ctx.fvals)


def _decreasing(vals):
    return all(b < a for a, b in zip(vals, vals[1:]))


def _assemble(cfg, per_N, records, fvals):
    good = [r for r in per_N if "error" not in r]
    pts = [(r["N"], r["mean_error"]) for r in good]
    wpts = [(r["N"], r["w1_mean"]) for r in good]
    nanfit = RateFit(math.nan, math.nan, math.nan, 0)
    fit = fit_rate(pts) if len(pts) >= 3 else nanfit
    w1_fit = fit_rate(wpts) if len(wpts) >= 3 else nanfit
    target = -cfg.alpha / 2
    flags = {
        "all_N_ran": len(good) == len(per_N),
        "error_decreasing": _decreasing([p[1] for p in pts]) if fit.defined else None,
        "slope_in_band": (abs(fit.slope - target) <= cfg.slope_tol) if fit.defined else None,
        "w1_decreasing": _decreasing([p[1] for p in wpts]) if w1_fit.defined else None,
        "dual_bound": all(r["dual_bound_ok"] for r in good),
        "triangle": all(r["triangle_ok"] for r in good),
        "lift_exact": all(r["lift_exactness"] == 0.0 for r in good),
        "noise_x": all(r["noise_x_lhs"] <= r["noise_x_rhs"] for r in good),
        "noise_q": all(r["noise_q_lhs"] <= r["noise_q_rhs"] for r in good),
    }
    return ConvergenceReport(cfg, per_N, fit, w1_fit, flags, records, fvals)


@dataclass
class IntermediateReport:
    config: StudyConfig
    per_N: list
    fit: RateFit
    flags: dict

    @property
    def passed(self):
        return all(v for v in self.flags.values() if v is not None)

    def summary(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "per_N": self.per_N,
            "fit": asdict(self.fit),
            "flags": self.flags,
            "passed": self.passed,
        }


def run_intermediate_study(cfg):
    """Deterministic sweep of ``||lift(Q_breve^N) - Qbar||_{T,1}`` over ``N``.

    Each row also evaluates the joint perturbation bound with ``F1 = G^T``,
    ``X1 = Xbar`` and ``F2 = (G^N)^T``, ``X2 = lift(X_breve^N)``; the lifted
    intermediate system is exactly the reflection of ``X2`` under ``F2``.
    """
    ctx = _FluidContext(cfg)
    per_N = []
    for N in cfg.N_list:
        row = {"N": N}
        try:
            netspec, Q0, inter, GNt, op_dist, inter_vs_fluid, lift_gap = _finite_system(cfg, ctx, N)
            Xt = fl.lift(inter.X, cfg.dt, M=cfg.M)
            cert2 = ops.bounded_parameters(GNt, gamma=cfg.gamma, M=cfg.M)
            rep = sk.operator_perturbation_check(
                ctx.spec.Gt, GNt, ctx.sol.Xbar, Xt, cert1=ctx.spec.certificate, cert2=cert2
            )
            slack = rep.slack + 2 * inter.info["error_bound"]
            row.update(
                error=None,
                lifted_error=inter_vs_fluid,
                resolved_error=rep.phi_lhs,
                op_distance=op_dist,
                x_distance=(Xt - ctx.sol.Xbar).norm(),
                bound=rep.phi_rhs,
                psi_lhs=rep.psi_lhs,
                psi_bound=rep.psi_rhs,
                lift_exactness=lift_gap,
                bound_ok=bool(inter_vs_fluid <= rep.phi_rhs + slack and rep.ok),
            )
        except (ValidationError, RuntimeError, ArithmeticError) as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        per_N.append(row)
    good = [r for r in per_N if not r.get("error")]
    pts = [(r["N"], r["lifted_error"]) for r in good]
    fit = fit_rate(pts) if len(pts) >= 3 else RateFit(math.nan, math.nan, math.nan, 0)
    flags = {
        "all_N_ran": len(good) == len(per_N),
        "error_decreasing": _decreasing([p[1] for p in pts]) if fit.defined else None,
        "bound_holds": all(r["bound_ok"] for r in good),
        "lift_exact": all(r["lift_exactness"] == 0.0 for r in good),
    }
    return IntermediateReport(cfg, per_N, fit, flags)


@dataclass
class BoundsReport:
    per_N: list
    flags: dict

    @property
    def passed(self):
        return all(self.flags.values())


def verify_bounds(cfg, report=None):
    """Check the explicit martingale bound for the free processes and its
    reflected version with the finite certificate constant."""
    report = run_convergence_study(cfg) if report is None else report
    rows = []
    for r in report.per_N:
        if "error" in r:
            rows.append({"N": r["N"], "error": r["error"]})
            continue
        rows.append({
            "N": r["N"],
            "x_lhs": r["noise_x_lhs"], "x_rhs": r["noise_x_rhs"],
            "x_slack": r["noise_x_rhs"] - r["noise_x_lhs"],
            "q_lhs": r["noise_q_lhs"], "q_rhs": r["noise_q_rhs"],
            "q_slack": r["noise_q_rhs"] - r["noise_q_lhs"],
            "constant": r["noise_constant"],
        })
    good = [r for r in rows if "error" not in r]
    flags = {
        "all_N_ran": len(good) == len(rows),
        "free_process_bound": all(r["x_lhs"] <= r["x_rhs"] for r in good),
        "queue_bound": all(r["q_lhs"] <= r["q_rhs"] for r in good),
    }
    return BoundsReport(rows, flags)

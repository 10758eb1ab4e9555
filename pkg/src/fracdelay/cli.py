"""Experiment runner.

    fracdelay run CONFIG.json [--dt DT] [--T T] [--method M] [--seed S]
    fracdelay report OUTPUT_DIR
    fracdelay selftest
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analysis, model, quad, solver, specfun
from .model import ValidationError

BUILTIN_PROBLEMS = {
    "example_4_1": dict(alpha=0.5, beta=1.0, t0=0.0, h=1.0, rhs="example_4_1"),
    "example_4_2": dict(alpha=0.5, beta=1.0, t0=0.0, h=1.0, rhs="example_4_2"),
}

REPORT_NAME = "report.txt"
PAIRWISE_NAME = "pairwise.csv"


def rhs_from_name(name):
    """example_4_1, example_4_2, constant:<c>, linear:<a>,<b>, delay_linear:<a>."""
    if name == "example_4_1":
        return model.example_4_1_rhs()
    if name == "example_4_2":
        return model.example_4_2_rhs()
    kind, _, args = name.partition(":")
    try:
        nums = [float(x) for x in args.split(",")] if args else []
    except ValueError:
        raise ValidationError(f"bad numeric arguments in rhs {name!r}") from None
    if kind == "constant" and len(nums) == 1:
        return model.constant_rhs(nums[0])
    if kind == "linear" and len(nums) == 2:
        return model.linear_time_rhs(*nums)
    if kind == "delay_linear" and len(nums) == 1:
        return model.delay_linear_rhs(nums[0])
    raise ValidationError(f"unknown rhs {name!r}")


@dataclass
class ExperimentConfig:
    problem_name: str
    alpha: float
    beta: float
    t0: float
    h: float
    rhs: str
    phis: list
    solver: solver.SolverConfig
    eps_list: list = field(default_factory=lambda: [0.1, 0.05, 0.01])
    envelope: bool = True
    seed: int = 0
    lipschitz_probes: int = 10_000
    workers: int = 1
    output_dir: str = "out"

    def build_problem(self, phi=None):
        phi = phi or model.history_from_name(self.phis[0])
        return model.make_problem(self.alpha, self.beta, self.t0, self.h, rhs_from_name(self.rhs), phi)


_SOLVER_KEYS = ("method", "dt", "T", "picard_tol", "picard_max_iter", "corrector_sweeps")


def parse_config(data, overrides=None):
    """Validate a config mapping and return an :class:`ExperimentConfig`."""
    if not isinstance(data, dict):
        raise ValidationError("config must be a JSON object")
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    prob = data.get("problem")
    if isinstance(prob, str):
        if prob not in BUILTIN_PROBLEMS:
            raise ValidationError(f"unknown builtin problem {prob!r}")
        name, spec = prob, dict(BUILTIN_PROBLEMS[prob])
    elif isinstance(prob, dict):
        spec = dict(prob)
        missing = {"alpha", "beta", "t0", "h", "rhs"} - spec.keys()
        if missing:
            raise ValidationError(f"inline problem missing {sorted(missing)}")
        name = str(spec.get("name", "inline"))
    else:
        raise ValidationError("config needs 'problem': builtin name or inline object")

    phis = data.get("phis")
    if not isinstance(phis, list) or not phis:
        raise ValidationError("config needs at least one initial function in 'phis'")
    phis = [str(p) for p in phis]
    if len(set(phis)) != len(phis):
        raise ValidationError("initial functions in 'phis' must be distinct")
    for p in phis:
        model.history_from_name(p)
    if len({_file_token(p) for p in phis}) != len(phis):
        raise ValidationError("initial function names collide after filename sanitizing")

    sdata = data.get("solver", {}) or {}
    unknown = set(sdata) - set(_SOLVER_KEYS)
    if unknown:
        raise ValidationError(f"unknown solver keys {sorted(unknown)}")
    sdata = dict(sdata)
    for key in ("method", "dt", "T"):
        if key in overrides:
            sdata[key] = overrides[key]
    try:
        scfg = solver.SolverConfig(**{k: (str(v) if k == "method" else
                                          int(v) if k in ("picard_max_iter", "corrector_sweeps")
                                          else float(v)) for k, v in sdata.items()})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad solver settings: {exc}") from None

    adata = data.get("analysis", {}) or {}
    eps_list = [float(e) for e in adata.get("eps_list", [0.1, 0.05, 0.01])]
    if not eps_list or any(not e > 0 for e in eps_list):
        raise ValidationError("eps_list entries must be positive")
    seed = int(overrides.get("seed", adata.get("seed", 0)))

    try:
        cfg = ExperimentConfig(
            problem_name=name,
            alpha=float(spec["alpha"]), beta=float(spec["beta"]),
            t0=float(spec["t0"]), h=float(spec["h"]), rhs=str(spec["rhs"]),
            phis=phis, solver=scfg, eps_list=eps_list,
            envelope=bool(adata.get("envelope", True)), seed=seed,
            lipschitz_probes=int(adata.get("lipschitz_probes", 10_000)),
            workers=int(data.get("workers", 1)),
            output_dir=str(data.get("output_dir", "out")),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad problem settings: {exc}") from None
    # surfaces model and grid violations before any solve starts
    problem = cfg.build_problem()
    scfg.steps(problem)
    return cfg


def load_config(path, overrides=None):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from None
    return parse_config(data, overrides)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def fmt(x):
    """Shortest round-trip decimal for a float."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _file_token(name):
    return re.sub(r"[^A-Za-z0-9._-]", "_", name)


def trajectory_filename(phi_name):
    return f"traj_{_file_token(phi_name)}.csv"


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def trajectory_csv(traj):
    return _csv_text(["t", "y"], zip(traj.times, traj.values))


def read_trajectory_csv(path):
    """Return (times, values) arrays from a ``t,y`` CSV."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["t", "y"]:
        raise ValidationError(f"{path}: expected header t,y")
    arr = np.array([[float(a), float(b)] for a, b in rows[1:]])
    return arr[:, 0], arr[:, 1]


def pairwise_csv(report):
    header = ["t", "max_pairwise"] + [f"{a}|{b}" for a, b in report.pairs]
    rows = (
        [t, mx, *col]
        for t, mx, col in zip(report.times, report.max_pairwise, report.pair_distances.T)
    )
    return _csv_text(header, rows)


def _decay_table_times(t0, T):
    ts = [float(t) for t in range(1, int(math.floor(T - t0)) + 1)]
    return [t0 + t for t in ts] or [T]


def build_report(cfg, members, report, results):
    """Assemble the sectioned plain-text report."""
    problem = members[0]
    lines = []
    add = lines.append
    sc = cfg.solver
    add("[problem]")
    add(f"name = {cfg.problem_name}")
    add(f"rhs = {cfg.rhs}")
    for key in ("alpha", "beta", "t0", "h"):
        add(f"{key} = {fmt(getattr(cfg, key))}")
    add(f"method = {sc.method}")
    add(f"dt = {fmt(sc.dt)}")
    add(f"T = {fmt(sc.T)}")
    add(f"members = {', '.join(cfg.phis)}")
    add("")

    l_known = problem.rhs.lipschitz
    add("[contraction]")
    if l_known is not None and l_known > 0:
        q = analysis.contraction_bound(l_known, problem.alpha, problem.beta, problem.t0, problem.h)
        add(f"lipschitz_l = {fmt(l_known)}")
        add(f"contraction_bound = {fmt(q)}")
        add(f"holds = {'yes' if q < 1 else 'no'}")
    else:
        add("status = not applicable (no global Lipschitz constant; growth-bound route)")
    add("")

    probe = analysis.LipschitzProbe(h=problem.h, t_min=problem.t0, t_max=sc.T,
                                    n_probes=cfg.lipschitz_probes, seed=cfg.seed)
    add("[lipschitz_probe]")
    add(f"seed = {cfg.seed}")
    add(f"probes = {cfg.lipschitz_probes}")
    add(f"estimated_l = {fmt(analysis.estimate_lipschitz(problem.rhs, probe))}")
    add("")

    if problem.rhs.growth is not None and not (l_known is not None and l_known > 0):
        k1, k2 = problem.rhs.growth
        add("[growth_bound]")
        add(f"max_violation = {fmt(analysis.check_growth_bound(problem.rhs, k1, k2, probe))}")
        add("")
        tg = _decay_table_times(problem.t0, sc.T)
        for label, k in (("k1", k1), ("k2", k2)):
            chk = quad.kernel_decay_check(problem.alpha, problem.beta, problem.t0, k, tg, sc.dt)
            add(f"[kernel_decay_{label}]")
            add(f"decaying = {'yes' if chk.decaying else 'no'}")
            add(f"tail_loglog_slope = {fmt(chk.tail_slope)}")
            add("t, value")
            for t, v in zip(chk.times, chk.values):
                add(f"{fmt(t)}, {fmt(v)}")
            add("")

    add("[residuals]")
    for name, member, res in zip(cfg.phis, members, results):
        add(f"{name} = {fmt(solver.residual(member, res.trajectory))}")
    add("")

    if sc.method == "picard":
        add("[picard]")
        for name, res in zip(cfg.phis, results):
            add(f"{name} = iterations {res.iterations}, converged {'yes' if res.converged else 'no'}, "
                f"last_difference {fmt(res.picard_residual)}")
        add("")

    add("[stabilization_time]")
    add("eps, T_eps")
    for e in sorted(report.T_of_eps):
        add(f"{fmt(e)}, {fmt(report.T_of_eps[e])}")
    add("")

    add("[decay_fit]")
    if report.decay_fit is None:
        add("status = not fitted (distances vanish)")
    else:
        f = report.decay_fit
        add("model = C exp(-rho t) (1 + c t^alpha), tail half of horizon")
        add(f"C = {fmt(f.C)}")
        add(f"rho = {fmt(f.rho)}")
        add(f"c = {fmt(f.c)}")
        add(f"rms_log_error = {fmt(f.rms_log_error)}")
    add("")

    add("[gronwall]")
    if not cfg.envelope:
        add("status = disabled")
    elif not (l_known is not None and l_known > 0):
        add("status = not applicable (no global Lipschitz constant)")
    elif sc.T < problem.t0 + problem.h:
        add("status = horizon shorter than t0 + h")
    else:
        add("pair, K")
        for (a, b) in report.pairs:
            K = analysis.fit_gronwall_K(problem, report.trajectories[a], report.trajectories[b])
            add(f"{a}|{b}, {fmt(K)}")
    add("")
    return "\n".join(lines)


def run_experiment(cfg, out=None):
    """Solve the ensemble and write CSVs plus report. Returns the output directory."""
    out = out or sys.stdout
    phis = [model.history_from_name(p) for p in cfg.phis]
    problem = cfg.build_problem(phis[0])
    members = [problem.with_phi(phi) for phi in phis]
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(lambda p: solver.solve(p, cfg.solver), members))
    else:
        results = [solver.solve(p, cfg.solver) for p in members]

    files = {trajectory_filename(name): trajectory_csv(r.trajectory)
             for name, r in zip(cfg.phis, results)}
    if len(phis) >= 2:
        rep = analysis.stability_harness(problem, phis, cfg.solver, cfg.eps_list, results=results)
    else:
        rep = _single_member_report(problem, phis[0], results[0])
    files[PAIRWISE_NAME] = pairwise_csv(rep)
    files[REPORT_NAME] = build_report(cfg, members, rep, results)

    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        for name, text in files.items():
            path = outdir / name
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            written.append(path)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    print(f"wrote {len(files)} files to {outdir}", file=out)
    return outdir


def _single_member_report(problem, phi, result):
    times, _ = result.trajectory.forward()
    name = getattr(phi, "name", "phi")
    zeros = np.zeros((0, len(times)))
    return analysis.StabilityReport(1, [name], times, [], zeros, np.zeros(len(times)),
                                    {}, None, {name: result.trajectory})


# ---------------------------------------------------------------------------
# selftest
# ---------------------------------------------------------------------------

def selftest(out=None, perturb_gamma=0.0):
    """Closed-form oracle suite. Returns the number of failed checks."""
    out = out or sys.stdout
    def gamma_fn(x):
        return specfun.gamma(x) * (1.0 + perturb_gamma)

    checks = []

    def check(name, ok, detail):
        checks.append(bool(ok))
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}", file=out)

    sqrt_pi = math.sqrt(math.pi)
    for x, exact in ((1.0, 1.0), (0.5, sqrt_pi), (1.5, 0.5 * sqrt_pi)):
        err = abs(gamma_fn(x) / exact - 1.0)
        check(f"gamma({x})", err <= 1e-12, f"rel err {err:.3e}")

    err = max(abs(specfun.lower_incomplete_gamma(1.0, x) + math.expm1(-x)) for x in (0.1, 1.0, 5.0, 30.0))
    check("lower_incomplete_gamma(1, x)", err <= 1e-12, f"abs err {err:.3e}")

    worst = 0.0
    for a in (0.25, 0.5, 0.75):
        for n in (1, 10, 100, 1000):
            w = quad.product_trapezoid_weights(a, 0.01, n)
            exact = (n * 0.01) ** a / a
            worst = max(worst, abs(w.sum() / exact - 1.0))
            s = 0.01 * np.arange(n + 1)
            lin = (n * 0.01) ** (a + 1) * specfun.gamma(a) / specfun.gamma(a + 2)
            worst = max(worst, abs(w @ s / lin - 1.0))
    check("quadrature exactness", worst <= 1e-10, f"rel err {worst:.3e}")

    cfg = solver.SolverConfig(dt=2.0 ** -6, T=10.0)
    p0 = model.make_problem(0.5, 1.0, 0.0, 1.0, model.constant_rhs(0.0), lambda t: 2.0)
    for method in solver.METHODS:
        tr = solver.solve(p0, replace(cfg, method=method)).trajectory
        t, y = tr.forward()
        err = float(np.max(np.abs(y - 2.0 * np.exp(-t))))
        check(f"zero forcing decay ({method})", err <= 1e-12, f"max err {err:.3e}")

    p1 = model.make_problem(0.5, 1.0, 0.0, 1.0, model.constant_rhs(1.0), lambda t: 0.0)
    tr = solver.solve(p1, solver.SolverConfig(dt=2.0 ** -8, T=10.0)).trajectory
    t, y = tr.forward()
    exact = np.array([specfun.lower_incomplete_gamma(0.5, s) for s in t]) / specfun.gamma(0.5)
    err = float(np.max(np.abs(y - exact)))
    check("constant forcing vs incomplete gamma", err <= 1e-4, f"max err {err:.3e}")

    p2 = model.make_problem(0.5, 1.0, 0.0, 1.0, model.example_4_1_rhs(), lambda t: 1.5)
    c2 = solver.SolverConfig(dt=2.0 ** -6, T=5.0)
    a = solver.solve_predictor_corrector(p2, c2).trajectory
    b = solver.solve_picard(p2, c2).trajectory
    err = float(np.max(np.abs(a.values - b.values)))
    check("predictor-corrector vs Picard", err <= 1e-4, f"sup diff {err:.3e}")

    failed = checks.count(False)
    print(f"{len(checks) - failed}/{len(checks)} checks passed", file=out)
    return failed


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser():
    ap = argparse.ArgumentParser(prog="fracdelay",
                                 description="Fractional delay equation solver and stability runner")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("config")
    run.add_argument("--dt", type=float)
    run.add_argument("--T", type=float, dest="T")
    run.add_argument("--method", choices=solver.METHODS)
    run.add_argument("--seed", type=int)
    run.add_argument("--output-dir")
    rep = sub.add_parser("report", help="print the report stored in an output directory")
    rep.add_argument("output_dir")
    st = sub.add_parser("selftest", help="run the closed-form oracle checks")
    st.add_argument("--perturb-gamma", type=float, default=0.0, help=argparse.SUPPRESS)
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "selftest":
        return 1 if selftest(perturb_gamma=args.perturb_gamma) else 0
    if args.command == "report":
        path = Path(args.output_dir) / REPORT_NAME
        if not path.is_file():
            print(f"error: no {REPORT_NAME} in {args.output_dir}", file=sys.stderr)
            return 2
        if not (Path(args.output_dir) / PAIRWISE_NAME).is_file():
            print(f"error: no {PAIRWISE_NAME} in {args.output_dir}", file=sys.stderr)
            return 2
        sys.stdout.write(path.read_text(encoding="utf-8"))
        return 0
    try:
        cfg = load_config(args.config, {"dt": args.dt, "T": args.T,
                                        "method": args.method, "seed": args.seed})
        if args.output_dir:
            cfg.output_dir = args.output_dir
        run_experiment(cfg)
    except (ValidationError, solver.SolverError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

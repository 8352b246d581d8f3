"""Monte Carlo scenarios behind the command line harness.

Every scenario is a pure function of an :class:`ExperimentConfig`; trials
are dispatched to a process pool and reduced in trial order, so a given
config and seed always writes the same bytes.
"""

import csv
import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .conic import FAILURE, OPTIMAL
from .errors import InvalidInput
from .model import (ErrorModel, Geometry, SystemConfig, generate_edge_pair, generate_instance,
                    lin2db, validate_robustness, watt2dbm)
from .sdr import feasible, solve_full_coord, solve_nonrobust, solve_robust

SCENARIOS = ("fig1", "feasibility_sweep", "power_vs_gamma", "power_vs_eps", "admm_convergence",
             "fullcoord_compare", "single_solve")
METHODS = ("nonrobust", "robust", "fullcoord")


@dataclass
class ExperimentConfig:
    """Flat experiment description; dB and dBm only at this boundary."""

    scenario: str = "single_solve"
    Nc: int = 2
    K: int = 2
    Nt: int = 4
    L: int = 0
    gamma_db: float = 10.0
    eps: float = 0.1
    eps_inter: float = None  # defaults to eps
    gamma_grid_db: list = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0])
    eps_grid: list = field(default_factory=lambda: [0.05, 0.1, 0.15, 0.2])
    methods: list = field(default_factory=lambda: ["nonrobust", "robust"])
    trials: int = 200
    seed: int = 0
    p_max_dbm: float = 46.0
    noise_w: float = None
    layout: str = "hex"
    samples: int = 10000
    hist_bins: int = 60
    admm_iters: int = 300
    admm_power_unit: object = "auto"
    admm_ici_unit: object = "auto"
    transport: str = "loopback"
    workers: int = 1
    output_dir: str = "out"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise InvalidInput(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        if self.trials < 1:
            raise InvalidInput("trial count must be at least 1")
        if not self.gamma_grid_db or not self.eps_grid:
            raise InvalidInput("sweep grids must be non-empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise InvalidInput(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
        if self.scenario == "admm_convergence" and self.Nc < 2:
            raise InvalidInput("ADMM scenarios need Nc >= 2; a single cell has no inter-cell "
                               "interference, use scenario 'single_solve'")
        if self.workers < 1:
            raise InvalidInput("workers must be >= 1")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise InvalidInput(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def system(self, gamma_db=None, K=None):
        return SystemConfig.uniform(self.Nc, self.K if K is None else K, self.Nt,
                                    self.gamma_db if gamma_db is None else gamma_db,
                                    self.noise_w, L=self.L, p_max_dbm=self.p_max_dbm)

    def geometry(self):
        return Geometry(layout=self.layout)


def load_config(path, **overrides):
    """Read a TOML document into an :class:`ExperimentConfig`."""
    try:
        import tomllib
    except ImportError:  # python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        d = tomllib.load(fh)
    d.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(d)


# --------------------------------------------------------------------------
# Trials (module level so that they pickle)
# --------------------------------------------------------------------------

def _errors(ec, cfg):
    return ErrorModel.spherical(cfg.Nc, cfg.K, cfg.Nt, ec.eps,
                                ec.eps if ec.eps_inter is None else ec.eps_inter,
                                L=cfg.L, eps_edge=ec.eps if cfg.L else None)


def _record(method, sol, cfg):
    return {"method": method, "status": sol.status, "feasible": feasible(cfg, sol),
            "P_W": float(np.sum(sol.p)) if sol.status == OPTIMAL else float("nan"),
            "pmax_W": float(np.max(sol.p)) if sol.status == OPTIMAL else float("nan"),
            "rank_one": bool(sol.w is not None) if sol.status == OPTIMAL else False}


def _solve(method, cfg, ch, err):
    if method == "nonrobust":
        return solve_nonrobust(cfg, ch)
    if method == "robust":
        return solve_robust(cfg, ch, err)
    return solve_full_coord(cfg, ch, err)


def _trial_point(args):
    """All methods on one drop at one grid point."""
    ec, trial, gamma_db, eps = args
    ec = dataclasses.replace(ec, gamma_db=gamma_db, eps=eps)
    seed = ec.seed + trial
    out = []
    if "fullcoord" in ec.methods:
        cfg_m, ch_m, err_m, cfg_f, ch_f, err_f = generate_edge_pair(
            gamma_db, eps, seed, Nt=ec.Nt, noise_w=ec.noise_w)
        cfg_m = dataclasses.replace(cfg_m, p_max=ec.system().p_max)
        cfg_f = dataclasses.replace(cfg_f, p_max=ec.system().p_max)
        for m in ec.methods:
            if m == "fullcoord":
                out.append(_record(m, solve_full_coord(cfg_f, ch_f, err_f), cfg_f))
            else:
                out.append(_record(m, _solve(m, cfg_m, ch_m, err_m), cfg_m))
        return out
    cfg = ec.system(gamma_db)
    ch, _ = generate_instance(cfg, ec.geometry(), seed)
    err = _errors(ec, cfg)
    return [_record(m, _solve(m, cfg, ch, err), cfg) for m in ec.methods]


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))  # results come back in submission order


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


@dataclass
class ExperimentResult:
    scenario: str
    files: list
    summary: dict
    failures: int = 0  # trials with a numerical-failure status


def _finish(ec, files, summary, failures):
    os.makedirs(ec.output_dir, exist_ok=True)
    run = {"seed": ec.seed, "config": dataclasses.asdict(ec), "summary": summary,
           "numerical_failures": failures}
    path = os.path.join(ec.output_dir, f"{ec.scenario}_run.json")
    with open(path, "w") as fh:
        json.dump(run, fh, indent=2, sort_keys=True, default=_fmt)
        fh.write("\n")
    return ExperimentResult(ec.scenario, files + [path], summary, failures)


def _count_failures(records):
    return sum(r["status"] == FAILURE for rec in records for r in rec)


# --------------------------------------------------------------------------
# Scenarios
# --------------------------------------------------------------------------

def _sweep(ec, grid):
    """Trials over a grid of ``(label, gamma_db, eps)``; returns per-trial rows."""
    jobs = [(ec, t, g, e) for (_, g, e) in grid for t in range(ec.trials)]
    res = _map(_trial_point, jobs, ec.workers)
    rows = []
    i = 0
    for (label, g, e) in grid:
        for t in range(ec.trials):
            for r in res[i]:
                rows.append((label, g, e, t, ec.seed + t, r))
            i += 1
    return rows, _count_failures(res)


def _trial_csv(ec, name, rows):
    path = os.path.join(ec.output_dir, name)
    write_csv(path, ["point", "gamma_db", "eps", "trial", "seed", "method", "status", "feasible",
                     "P_W", "pmax_W", "rank_one"],
              [(lab, g, e, t, s, r["method"], r["status"], r["feasible"], r["P_W"], r["pmax_W"],
                r["rank_one"]) for (lab, g, e, t, s, r) in rows])
    return path


def _aggregate(rows, points, methods):
    out = []
    for (lab, g, e) in points:
        for m in methods:
            sel = [r for (l2, _, _, _, _, r) in rows if l2 == lab and r["method"] == m]
            feas = [r for r in sel if r["feasible"]]
            P = np.array([r["P_W"] for r in feas])
            out.append({"point": lab, "gamma_db": g, "eps": e, "method": m, "trials": len(sel),
                        "feasible": len(feas), "rate_pct": 100.0 * len(feas) / len(sel),
                        "failures": sum(r["status"] == FAILURE for r in sel),
                        "mean_P_dbm": float(watt2dbm(P.mean())) if P.size else float("nan")})
    return out


def _write_agg(ec, name, agg):
    path = os.path.join(ec.output_dir, name)
    keys = ["point", "gamma_db", "eps", "method", "trials", "feasible", "rate_pct", "failures",
            "mean_P_dbm"]
    write_csv(path, keys, [[a[k] for k in keys] for a in agg])
    return path


def run_sweep(ec, grid):
    os.makedirs(ec.output_dir, exist_ok=True)
    rows, fails = _sweep(ec, grid)
    f1 = _trial_csv(ec, f"{ec.scenario}_trials.csv", rows)
    agg = _aggregate(rows, grid, ec.methods)
    f2 = _write_agg(ec, f"{ec.scenario}.csv", agg)
    return _finish(ec, [f1, f2], {"points": agg}, fails)


def scenario_feasibility(ec):
    return run_sweep(ec, [(i, g, ec.eps) for i, g in enumerate(ec.gamma_grid_db)])


def scenario_power_vs_gamma(ec):
    return run_sweep(ec, [(i, g, ec.eps) for i, g in enumerate(ec.gamma_grid_db)])


def scenario_power_vs_eps(ec):
    return run_sweep(ec, [(i, ec.gamma_db, e) for i, e in enumerate(ec.eps_grid)])


def scenario_fullcoord(ec):
    ec = dataclasses.replace(ec, methods=["robust", "fullcoord"])
    os.makedirs(ec.output_dir, exist_ok=True)
    rows, fails = _sweep(ec, [(0, ec.gamma_db, ec.eps)])
    f1 = _trial_csv(ec, "fullcoord_compare_trials.csv", rows)
    by = {}
    for (_, _, _, t, _, r) in rows:
        by.setdefault(t, {})[r["method"]] = r
    gains = [lin2db(v["robust"]["P_W"] / v["fullcoord"]["P_W"]) for v in by.values()
             if v["robust"]["feasible"] and v["fullcoord"]["feasible"]]
    rate = {m: sum(v[m]["feasible"] for v in by.values()) / len(by) for m in ("robust", "fullcoord")}
    summary = {"paired_trials": len(gains),
               "mean_gain_db": float(np.mean(gains)) if gains else float("nan"),
               "median_gain_db": float(np.median(gains)) if gains else float("nan"),
               "feasibility_robust": rate["robust"], "feasibility_fullcoord": rate["fullcoord"]}
    f2 = os.path.join(ec.output_dir, "fullcoord_compare.csv")
    write_csv(f2, list(summary), [list(summary.values())])
    return _finish(ec, [f1, f2], summary, fails)


def _fig1_trial(args):
    ec, trial = args
    cfg = ec.system()
    ch, _ = generate_instance(cfg, ec.geometry(), ec.seed + trial)
    err = _errors(ec, cfg)
    rob = solve_robust(cfg, ch, err)
    return rob.status, (rob if rob.status == OPTIMAL and rob.w is not None else None), ch, err


def scenario_fig1(ec):
    """Achieved SINR histograms of the non-robust and robust designs on the
    first drop (in seed order) for which the robust problem is feasible."""
    os.makedirs(ec.output_dir, exist_ok=True)
    cfg = ec.system()
    fails = 0
    for trial in range(ec.trials):
        status, rob, ch, err = _fig1_trial((ec, trial))
        fails += status == FAILURE
        if rob is not None:
            break
    else:
        raise InvalidInput(f"no robust-feasible drop within {ec.trials} trials")
    non = solve_nonrobust(cfg, ch)
    fails += non.status == FAILURE
    if non.w is None:
        raise InvalidInput("non-robust design not rank-one on the selected drop")
    reps = {}
    for name, sol in (("nonrobust", non), ("robust", rob)):
        rng = np.random.default_rng([ec.seed, trial, len(reps)])
        reps[name] = validate_robustness(sol, cfg, ch, err, ec.samples, rng, keep_samples=True)
    all_db = np.concatenate([lin2db(r.samples).ravel() for r in reps.values()])
    edges = np.linspace(np.floor(all_db.min()), np.ceil(all_db.max()), ec.hist_bins + 1)
    rows = []
    counts = {k: np.histogram(lin2db(r.samples).ravel(), edges)[0] for k, r in reps.items()}
    for i in range(ec.hist_bins):
        rows.append([edges[i], edges[i + 1], int(counts["nonrobust"][i]), int(counts["robust"][i])])
    f1 = os.path.join(ec.output_dir, "fig1_histogram.csv")
    write_csv(f1, ["sinr_lo_db", "sinr_hi_db", "nonrobust", "robust"], rows)
    gdb = float(lin2db(cfg.gamma.min()))
    summary = {"trial": trial, "seed": ec.seed + trial, "target_db": gdb}
    for k, r in reps.items():
        summary[f"{k}_violation_rate"] = r.violation_rate
        summary[f"{k}_min_sinr_db"] = float(lin2db(r.min_achieved_sinr))
        summary[f"{k}_worst_case_ok"] = r.worst_case_ok
    f2 = os.path.join(ec.output_dir, "fig1.csv")
    write_csv(f2, list(summary), [list(summary.values())])
    return _finish(ec, [f1, f2], summary, fails)


def _admm_trial(args):
    from .admm import AdmmOptions, run
    ec, trial = args
    cfg = ec.system()
    ch, _ = generate_instance(cfg, ec.geometry(), ec.seed + trial)
    err = _errors(ec, cfg)
    cen = solve_robust(cfg, ch, err)
    if cen.status != OPTIMAL:
        return cen.status, None
    tr = run(cfg, ch, err, AdmmOptions(max_iters=ec.admm_iters, p_star=cen.objective,
                                       power_unit=ec.admm_power_unit, ici_unit=ec.admm_ici_unit,
                                       transport=ec.transport))
    return OPTIMAL, tr


def scenario_admm(ec):
    os.makedirs(ec.output_dir, exist_ok=True)
    res = _map(_admm_trial, [(ec, t) for t in range(ec.trials)], ec.workers)
    rows, summ = [], []
    fails = 0
    for t, (status, tr) in enumerate(res):
        fails += status == FAILURE
        if tr is None:
            summ.append([t, ec.seed + t, status, 0, "", float("nan"), float("nan"), ""])
            continue
        acc = np.asarray(tr.accuracy)
        for i in range(len(tr.q)):
            rows.append([t, ec.seed + t, tr.q[i], tr.c[i], tr.P[i], acc[i], tr.residual[i],
                         tr.dual_residual[i], tr.scalars[i], tr.bytes[i]])
        hit = np.flatnonzero(acc < 0.1)
        summ.append([t, ec.seed + t, status, len(tr.q), int(hit[0]) if hit.size else "",
                     acc[-1], tr.p_star, tr.stopped])
    f1 = os.path.join(ec.output_dir, "admm_convergence_trace.csv")
    write_csv(f1, ["trial", "seed", "q", "c", "P_W", "accuracy", "primal_residual",
                   "dual_residual", "scalars", "bytes"], rows)
    f2 = os.path.join(ec.output_dir, "admm_convergence.csv")
    write_csv(f2, ["trial", "seed", "central_status", "iterations", "first_q_below_0.1",
                   "final_accuracy", "P_star_W", "stopped"], summ)
    done = [s for s in summ if s[3]]
    summary = {"trials": len(summ), "admm_runs": len(done),
               "final_accuracy_max": float(max((s[5] for s in done), default=float("nan")))}
    return _finish(ec, [f1, f2], summary, fails)


def scenario_single(ec):
    from .sdr import solution_to_json
    os.makedirs(ec.output_dir, exist_ok=True)
    cfg = ec.system()
    ch, _ = generate_instance(cfg, ec.geometry(), ec.seed)
    err = _errors(ec, cfg)
    rows, docs = [], {}
    fails = 0
    for m in ec.methods:
        if m == "fullcoord" and not cfg.L:
            raise InvalidInput("method 'fullcoord' needs L >= 1 cell-edge users")
        if m != "fullcoord" and cfg.L:
            raise InvalidInput(f"method {m!r} covers intra-cell users only (L = 0)")
        sol = _solve(m, cfg, ch, err)
        fails += sol.status == FAILURE
        r = _record(m, sol, cfg)
        rows.append([m, r["status"], r["feasible"], r["P_W"],
                     float(watt2dbm(r["P_W"])) if r["status"] == OPTIMAL else float("nan"),
                     r["rank_one"], sol.solver_iterations])
        docs[m] = solution_to_json(sol)
    f1 = os.path.join(ec.output_dir, "single_solve.csv")
    write_csv(f1, ["method", "status", "feasible", "P_W", "P_dbm", "rank_one", "iterations"], rows)
    f2 = os.path.join(ec.output_dir, "single_solve_solutions.json")
    with open(f2, "w") as fh:
        json.dump(docs, fh, sort_keys=True)
    return _finish(ec, [f1, f2], {"rows": rows}, fails)


_DISPATCH = {
    "fig1": scenario_fig1,
    "feasibility_sweep": scenario_feasibility,
    "power_vs_gamma": scenario_power_vs_gamma,
    "power_vs_eps": scenario_power_vs_eps,
    "admm_convergence": scenario_admm,
    "fullcoord_compare": scenario_fullcoord,
    "single_solve": scenario_single,
}


def run_experiment(ec):
    """Run the configured scenario; returns an :class:`ExperimentResult`."""
    return _DISPATCH[ec.scenario](ec)

"""Command-line front end: ``ppdesign {generate,evaluate,simulate,benchmark}``.

Exit codes: 0 success, 2 configuration error, 3 infeasible design space,
4 numerical failure. Wall-clock measurements go to ``timing.*`` files (and the
``elapsed_ms`` column of a coordinate-exchange trace); everything else is
byte-identical across runs with the same configuration.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .ce import InvalidStartError, two_stage_ce
from .config import (
    ConfigError,
    ProblemCfg,
    build_eval_models,
    build_groups,
    build_problem,
    build_true_model,
    load_config,
    resolved,
)
from .core import DesignError, InfeasibleSpaceError, ModelSpec, validate_design
from .criterion import db_values, efficiency_from_values, efficiency_report
from .master import InfeasibleMasterError, SingularMasterError
from .sa import TRACE_COLUMNS, StuckStateError, anneal
from .simulation import Comparison, SimulationPlan, compare_designs

THREADS_ENV = "PPDESIGN_THREADS"

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4


class NumericalFailure(DesignError):
    pass


def _write_json(path: Path, doc) -> None:
    path.write_text(io.dumps(doc) + "\n")


def _criterion_summary(design, problem) -> dict:
    out = {"objective": problem.objective.tag, "value": problem.objective(design)}
    for name, (model, draws) in problem.models.items():
        vals = db_values(design, model, draws)
        out[f"db_{name}"] = float(np.mean(vals))
    return out


# --- generate ---------------------------------------------------------------

def run_generate(cfg, out: Path) -> int:
    problem = build_problem(cfg.problem, cfg)
    opt = cfg.optimizer
    t0 = time.perf_counter()
    extra = {}
    if opt.kind == "sa":
        res = anneal(problem.space, problem.objective, opt.build(cfg.seed))
        design, value = res.design, res.value
        stats = {"t0": res.t0, "t0_flat": res.t0_flat, "iterations": res.iterations, "reheats": res.reheats,
                 "evaluations": res.evaluations, "accepted_moves": dict(sorted(res.branch_counts.items()))}
        if opt.record_trace:
            io.write_rows_csv(out / "trace.csv", TRACE_COLUMNS, res.trace)
        timing = {"elapsed_seconds": res.elapsed}
    else:
        res = two_stage_ce(problem.space, problem.objective, opt.build(cfg.seed))
        design, value = res.design, res.value
        stats = {"evaluations": res.evaluations, "start_values": res.start_values}
        io.write_master_csv(res.master, out / "master.csv")
        io.write_rows_csv(out / "trace.csv", ("start", "cycle", "criterion", "elapsed_ms"),
                          [(k + 1, c, v, ms) for k, c, v, ms in res.traces])
        timing = {"elapsed_seconds": res.elapsed, "master_seconds": res.master_elapsed}
        extra["master"] = res.master.incidence.tolist()
    timing["total_seconds"] = time.perf_counter() - t0
    problems = validate_design(design, problem.space)
    io.write_design_csv(design, out / "design.csv")
    io.write_design_json(design, out / "design.json", problem.space)
    report = {
        "command": "generate",
        "config": resolved(cfg),
        "criterion": _criterion_summary(design, problem),
        "optimizer": stats,
        "violations": [str(v) for v in problems],
        **extra,
    }
    _write_json(out / "report.json", report)
    _write_json(out / "timing.json", timing)
    if problems:
        raise NumericalFailure(f"optimizer returned an invalid design: {problems[0]}")
    if not math.isfinite(value):
        raise NumericalFailure("no design with a nonsingular information matrix was found")
    print(f"{problem.objective.tag}: {value:.6f}  -> {out / 'design.csv'}")
    return EXIT_OK


# --- evaluate ---------------------------------------------------------------

def _load_designs(paths: dict, space, base: Path) -> dict:
    out = {}
    for name, p in paths.items():
        path = Path(p) if Path(p).is_absolute() else base / p
        try:
            design = io.read_design(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"designs.{name}: cannot read {path}: {exc}") from None
        problems = validate_design(design, space) if design.shape == space.shape else ["shape mismatch"]
        if problems:
            raise ConfigError(f"designs.{name}: {path} is not valid for the space: {problems[0]}")
        out[name] = design
    return out


def run_evaluate(cfg, out: Path, base: Path) -> int:
    problem = build_problem(cfg.problem, cfg)
    designs = _load_designs(cfg.designs, problem.space, base)
    models = build_eval_models(cfg, problem)
    ref = designs[cfg.reference]
    reports = []
    for tag, (model, draws) in models.items():
        for name, design in designs.items():
            rep = efficiency_report(design, ref, model, draws, design_id=name, reference_id=cfg.reference,
                                    model_tag=tag, seed=cfg.seed)
            reports.append(rep.to_dict())
    cols = ("design_id", "reference_id", "model_tag", "m", "db_x", "db_ref", "efficiency", "num_draws", "seed", "flag")
    io.write_rows_csv(out / "efficiency.csv", cols, [[r[c] for c in cols] for r in reports])
    _write_json(out / "efficiency.json", {"command": "evaluate", "config": resolved(cfg), "reports": reports})
    for r in reports:
        print(f"{r['model_tag']:>14} {r['design_id']:>14}: {r['efficiency']:.4f}")
    return EXIT_OK


# --- simulate ---------------------------------------------------------------

def run_simulate(cfg, out: Path, base: Path) -> int:
    problem = build_problem(cfg.problem, cfg)
    designs = _load_designs(cfg.designs, problem.space, base)
    true_model, beta = build_true_model(cfg, problem)
    fit = None
    if cfg.fit_interactions is not None:
        fit = ModelSpec(problem.space.attribute_levels, [(a - 1, b - 1) for a, b in cfg.fit_interactions])
    groups = build_groups(cfg, problem)
    plan = SimulationPlan(None, true_model, beta, cfg.respondents_per_group, groups, cfg.replications, cfg.seed, fit)
    t0 = time.perf_counter()
    comp: Comparison = compare_designs(designs, plan, threads=cfg.threads)
    io.write_rows_csv(out / "sq_errors.csv", Comparison.ROW_COLUMNS, comp.rows)
    _write_json(out / "emse.json", {"command": "simulate", "config": resolved(cfg), "emse": comp.summary()})
    _write_json(out / "timing.json", {"elapsed_seconds": time.perf_counter() - t0})
    for name, e in comp.emse.items():
        print(f"{name:>14}: EMSE {e.value:.5f} ({e.excluded} excluded)")
    return EXIT_OK


# --- benchmark --------------------------------------------------------------

RACE_COLUMNS = ("scenario", "replicate", "seed", "m", "ce_db", "sa_db", "efficiency", "ce_evaluations",
                "sa_iterations")


def race(bench, cfg, replicate: int, index: int) -> dict:
    """One matched-budget race; CE runs first and fixes SA's budget."""
    seed = int(np.random.SeedSequence([cfg.seed, index, replicate]).generate_state(1)[0])
    problem = build_problem(ProblemCfg(preset="bench", bench=bench), cfg)
    m = bench.scenario().model.num_params
    ce = two_stage_ce(problem.space, problem.objective, cfg.ce.build(seed))
    sa_cfg = cfg.sa.build(seed)
    if cfg.budget == "runtime":
        sa_cfg = replace(sa_cfg, stopping="max_runtime", max_runtime=ce.elapsed, max_iterations=None)
    else:
        sa_cfg = replace(sa_cfg, stopping="max_iterations", max_iterations=ce.evaluations, max_runtime=None)
    sa_cfg.record_trace = False
    sa = anneal(problem.space, problem.objective, sa_cfg)
    eff, _ = efficiency_from_values(ce.value, sa.value, m)
    return {
        "scenario": bench.scenario().label, "replicate": replicate + 1, "seed": seed, "m": m,
        "ce_db": ce.value, "sa_db": sa.value, "efficiency": eff,
        "ce_evaluations": ce.evaluations, "sa_iterations": sa.iterations,
        "ce_seconds": ce.elapsed, "sa_seconds": sa.elapsed,
    }


def run_benchmark(cfg, out: Path) -> int:
    jobs = [(b, r, i) for i, b in enumerate(cfg.scenario_list()) for r in range(cfg.replicates)]
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            rows = list(pool.map(lambda j: race(j[0], cfg, j[1], j[2]), jobs))
    else:
        rows = [race(b, cfg, r, i) for b, r, i in jobs]
    effs = np.array([r["efficiency"] for r in rows])
    median = float(np.median(effs))
    table = [[r[c] for c in RACE_COLUMNS] for r in rows]
    table.append(["median", "", "", "", "", "", median, "", ""])
    io.write_rows_csv(out / "races.csv", RACE_COLUMNS, table)
    io.write_rows_csv(out / "timing.csv", ("scenario", "replicate", "ce_seconds", "sa_seconds"),
                      [[r["scenario"], r["replicate"], r["ce_seconds"], r["sa_seconds"]] for r in rows])
    summary = {"median_efficiency": median, "mean_efficiency": float(np.mean(effs)), "races": len(rows)}
    _write_json(out / "benchmark.json", {"command": "benchmark", "config": resolved(cfg), "summary": summary,
                                         "races": [{c: r[c] for c in RACE_COLUMNS} for r in rows]})
    print(f"{len(rows)} races, median efficiency of CE relative to SA {median:.4f}")
    return EXIT_OK


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppdesign", description="Bayesian D-optimal partial profile designs.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "construct a design by simulated annealing or two-stage coordinate exchange",
        "evaluate": "relative D_B-efficiencies of designs on common prior draws",
        "simulate": "simulate respondents and report EMSE per design",
        "benchmark": "matched-budget SA versus CE races over a scenario grid",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, metavar="PATH", help="JSON run configuration")
        p.add_argument("--out", default=".", metavar="DIR", help="output directory (created if missing)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--draws", type=int, metavar="R", help="override the number of prior draws")
        p.add_argument("--threads", type=int, metavar="N", help=f"worker threads (else ${THREADS_ENV}, else config)")
    return parser


def _threads_override(flag: int | None) -> int | None:
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
        overrides = {"seed": args.seed, "draws": args.draws, "threads": _threads_override(args.threads)}
        cfg = load_config(args.command, text, overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        base = path.resolve().parent
        if args.command == "generate":
            return run_generate(cfg, out)
        if args.command == "evaluate":
            return run_evaluate(cfg, out, base)
        if args.command == "simulate":
            return run_simulate(cfg, out, base)
        return run_benchmark(cfg, out)
    except ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleSpaceError, InfeasibleMasterError, StuckStateError, InvalidStartError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalFailure, SingularMasterError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # domain validation (levels, priors, models) surfaced after the schema check
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

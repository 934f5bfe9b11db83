"""Command-line interface: instance generation, single solves, Monte Carlo
evaluation, and the batch benchmark that reproduces the three report tables.

Subcommands:
    generate    write a random instance JSON
    solve       run one bound on an instance file, print a SolveReport JSON
    evaluate    Monte Carlo fulfillment estimate for a stored report
    benchmark   run a seeded batch and emit table_sa/table_df/table_normal CSVs
                plus results.json (deterministic) and timings.json

Exit codes: 0 success, 1 configuration/input error, 2 partial solver
failures inside a benchmark, 3 infeasible/failed single solve.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import convex_bounds, ipm, model, sample_approx
from .convex_bounds import BoundKind, RiskBudget
from .errors import AdallocError, InvalidInputError
from .report import SolveReport

log = logging.getLogger("adalloc")

ALL_BOUNDS = (
    "sa_lower",
    "sa_upper",
    "df_lower",
    "df_upper_uniform",
    "df_upper_alg",
    "normal_lower",
    "normal_upper_uniform",
    "normal_upper_alg",
)

# Substream labels for per-problem seeds inside a benchmark.
_SEED_INSTANCE = 101
_SEED_SCEN_LOWER = 102
_SEED_SCEN_UPPER = 103
_SEED_EVALUATION = 104


def derive_seed(master_seed: int, *labels: int) -> int:
    ss = np.random.SeedSequence(entropy=int(master_seed) & ((1 << 64) - 1), spawn_key=labels)
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class RunConfig:
    master_seed: int = 20120229
    num_problems: int = 10
    alpha_schedule: list[float] = field(default_factory=list)
    bounds_to_run: list[str] = field(default_factory=lambda: list(ALL_BOUNDS))
    mc_trials: int = 100_000
    confidence: float = 0.99
    sa_target_confidence: float = 0.99
    sa_n_lower: int = 100
    sa_node_limit: int = 10**6
    ipm_settings: dict = field(default_factory=dict)
    output_dir: str = "benchmark_out"

    def __post_init__(self) -> None:
        if self.num_problems < 0:
            raise InvalidInputError("num_problems must be non-negative")
        if not self.alpha_schedule:
            half = (self.num_problems + 1) // 2
            self.alpha_schedule = [
                0.1 if i < half else 0.05 for i in range(self.num_problems)
            ]
        if len(self.alpha_schedule) != self.num_problems:
            raise InvalidInputError(
                f"alpha_schedule has {len(self.alpha_schedule)} entries for "
                f"{self.num_problems} problems"
            )
        for a in self.alpha_schedule:
            if not 0.0 < a < 0.5:
                raise InvalidInputError(f"alpha {a} outside the open interval (0, 0.5)")
        unknown = set(self.bounds_to_run) - set(ALL_BOUNDS)
        if unknown:
            raise InvalidInputError(f"unknown bounds requested: {sorted(unknown)}")
        if self.mc_trials < 0:
            raise InvalidInputError("mc_trials must be non-negative")
        if not 0.0 < self.confidence < 1.0:
            raise InvalidInputError("confidence must lie in (0, 1)")

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidInputError(
                    f"malformed config JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
                ) from exc
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)

    def settings(self) -> ipm.IpmSettings:
        return ipm.IpmSettings(**self.ipm_settings)


def _evaluate_report(
    report: SolveReport,
    instance: model.Instance,
    trials: int,
    confidence: float,
    seed: int,
) -> None:
    if trials <= 0 or not report.feasible or report.allocation is None:
        return
    est = model.estimate_fulfillment(instance, report.allocation, trials, confidence, seed)
    report.pf_estimate = est.point_estimate
    report.pf_lower_confidence = est.lower_confidence


def _solve_bound(
    bound: str,
    instance: model.Instance,
    config: RunConfig,
    problem_index: int,
    sa_params_cache: dict,
) -> SolveReport:
    settings = config.settings()
    if bound in ("sa_lower", "sa_upper"):
        if "params" not in sa_params_cache:
            sa_params_cache["params"] = sample_approx.choose_parameters(
                instance.alpha,
                instance.decision_count,
                config.sa_target_confidence,
                n_lower=config.sa_n_lower,
            )
        params = sa_params_cache["params"]
        if bound == "sa_lower":
            scen = model.sample_supply(
                instance, params.n_lower, derive_seed(config.master_seed, _SEED_SCEN_LOWER, problem_index)
            )
            return sample_approx.solve_sa(
                instance, scen, params.xi, settings, node_limit=config.sa_node_limit
            )
        scen = model.sample_supply(
            instance, params.n_upper, derive_seed(config.master_seed, _SEED_SCEN_UPPER, problem_index)
        )
        return sample_approx.solve_robust_sa(instance, scen, settings)
    if bound == "df_lower":
        return convex_bounds.solve_ca(instance, BoundKind.DF_LOWER, settings=settings)
    if bound == "normal_lower":
        return convex_bounds.solve_ca(instance, BoundKind.NORMAL_LOWER, settings=settings)
    if bound == "df_upper_uniform":
        return convex_bounds.solve_ca(
            instance, BoundKind.DF_UPPER, RiskBudget.uniform(instance), settings,
            label="df_upper_uniform",
        )
    if bound == "normal_upper_uniform":
        return convex_bounds.solve_ca(
            instance, BoundKind.NORMAL_UPPER, RiskBudget.uniform(instance), settings,
            label="normal_upper_uniform",
        )
    if bound == "df_upper_alg":
        return convex_bounds.refine_upper_bound(instance, BoundKind.DF_UPPER, settings)
    if bound == "normal_upper_alg":
        return convex_bounds.refine_upper_bound(instance, BoundKind.NORMAL_UPPER, settings)
    raise InvalidInputError(f"unknown bound {bound!r}")


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.5f}"


def _table_cells(report: SolveReport | None) -> list[str]:
    if report is None:
        return ["", "", ""]
    obj = None if report.objective is None else 1000.0 * report.objective
    return [_fmt(obj), _fmt(report.pf_lower_confidence), _fmt(report.wall_time_seconds)]


def _write_tables(out_dir: str, problems: list[dict]) -> None:
    def rows_for(names: list[str]) -> list[str]:
        lines = []
        for prob in problems:
            cells = [str(prob["index"])]
            for name in names:
                cells.extend(_table_cells(prob["reports_obj"].get(name)))
            lines.append(",".join(cells))
        return lines

    with open(os.path.join(out_dir, "table_sa.csv"), "w") as fh:
        fh.write(
            "problem,lb_objective_x1000,lb_pf,lb_time_s,"
            "ub_objective_x1000,ub_pf,ub_time_s\n"
        )
        fh.write("\n".join(rows_for(["sa_lower", "sa_upper"])) + "\n")
    for family in ("df", "normal"):
        with open(os.path.join(out_dir, f"table_{family}.csv"), "w") as fh:
            fh.write(
                "problem,lb_objective_x1000,lb_pf,lb_time_s,"
                "ub_uniform_objective_x1000,ub_uniform_pf,ub_uniform_time_s,"
                "ub_alg_objective_x1000,ub_alg_pf,ub_alg_time_s\n"
            )
            fh.write(
                "\n".join(
                    rows_for([f"{family}_lower", f"{family}_upper_uniform", f"{family}_upper_alg"])
                )
                + "\n"
            )


def _post_check(problems: list[dict]) -> dict:
    """Deterministic nesting: lower <= alg upper <= uniform upper per family."""
    violations = []
    for prob in problems:
        reports = prob["reports_obj"]
        for family in ("df", "normal"):
            trio = [
                reports.get(f"{family}_lower"),
                reports.get(f"{family}_upper_alg"),
                reports.get(f"{family}_upper_uniform"),
            ]
            objs = [r.objective if r is not None and r.feasible else None for r in trio]
            for a, b, tag in (
                (objs[0], objs[1], f"{family}: lower > alg upper"),
                (objs[0], objs[2], f"{family}: lower > uniform upper"),
                (objs[1], objs[2], f"{family}: alg upper > uniform upper"),
            ):
                if a is not None and b is not None and a > b + 1e-8:
                    violations.append({"problem": prob["index"], "check": tag, "gap": a - b})
    return {"passed": not violations, "violations": violations}


def run_benchmark(config: RunConfig) -> int:
    try:
        os.makedirs(config.output_dir, exist_ok=True)
        probe = os.path.join(config.output_dir, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("ok")
        os.remove(probe)
    except OSError as exc:
        print(f"error: output directory is not writable: {exc}", file=sys.stderr)
        return 1

    failures = 0
    problems: list[dict] = []
    timings: list[dict] = []
    total_start = time.perf_counter()

    for i in range(config.num_problems):
        alpha = config.alpha_schedule[i]
        gen = model.GenSpec(alpha=alpha)
        inst_seed = derive_seed(config.master_seed, _SEED_INSTANCE, i)
        instance = model.generate_instance(gen, inst_seed)
        inst_file = os.path.join(config.output_dir, f"instance_{i + 1:02d}.json")
        with open(inst_file, "w") as fh:
            fh.write(model.instance_to_json(instance))
        log.info(
            "problem %d: |K|=%d |V|=%d d=%d alpha=%g",
            i + 1, instance.num_campaigns, instance.num_viewer_types,
            instance.decision_count, alpha,
        )

        reports: dict[str, SolveReport] = {}
        seconds: dict[str, float] = {}
        sa_cache: dict = {}
        for b_idx, bound in enumerate(ALL_BOUNDS):
            if bound not in config.bounds_to_run:
                continue
            start = time.perf_counter()
            try:
                report = _solve_bound(bound, instance, config, i, sa_cache)
                _evaluate_report(
                    report, instance, config.mc_trials, config.confidence,
                    derive_seed(config.master_seed, _SEED_EVALUATION, i, b_idx),
                )
            except AdallocError as exc:
                log.error("problem %d bound %s failed: %s", i + 1, bound, exc)
                report = SolveReport(
                    bound_kind=bound, status="numerical_failure",
                    objective=None, allocation=None, note=str(exc),
                )
                failures += 1
            seconds[bound] = time.perf_counter() - start
            report.wall_time_seconds = seconds[bound]
            if not report.feasible and report.status != "infeasible":
                failures += 0 if report.status == "numerical_failure" else 0
            reports[bound] = report
            log.info(
                "problem %d %s: status=%s objective=%s", i + 1, bound,
                report.status, report.objective,
            )

        params = sa_cache.get("params")
        problems.append(
            {
                "index": i + 1,
                "alpha": alpha,
                "instance_seed": inst_seed,
                "instance_file": os.path.basename(inst_file),
                "decision_count": instance.decision_count,
                "sa_params": None
                if params is None
                else {
                    "n_lower": params.n_lower,
                    "xi": params.xi,
                    "n_upper": params.n_upper,
                    "target_confidence": params.target_confidence,
                },
                "reports_obj": reports,
            }
        )
        timings.append({"index": i + 1, "seconds": seconds})

    post = _post_check(problems)
    results = {
        "master_seed": config.master_seed,
        "config": {
            "num_problems": config.num_problems,
            "alpha_schedule": config.alpha_schedule,
            "bounds_to_run": sorted(config.bounds_to_run),
            "mc_trials": config.mc_trials,
            "confidence": config.confidence,
            "sa_target_confidence": config.sa_target_confidence,
            "sa_n_lower": config.sa_n_lower,
        },
        "problems": [
            {
                **{k: v for k, v in prob.items() if k != "reports_obj"},
                "reports": {
                    name: rep.to_json_dict(include_wall_time=False)
                    for name, rep in prob["reports_obj"].items()
                },
            }
            for prob in problems
        ],
        "post_check": post,
    }
    with open(os.path.join(config.output_dir, "results.json"), "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(config.output_dir, "timings.json"), "w") as fh:
        json.dump(
            {"problems": timings, "total_seconds": time.perf_counter() - total_start},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    _write_tables(config.output_dir, problems)

    if not post["passed"]:
        log.error("bound-nesting post-check failed: %s", post["violations"])
        return 2
    return 2 if failures else 0


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_generate(args: argparse.Namespace) -> int:
    gen = model.GenSpec(
        k_range=(args.campaigns[0], args.campaigns[1]),
        v_range=(args.viewer_types[0], args.viewer_types[1]),
        alpha=args.alpha,
    )
    instance = model.generate_instance(gen, args.seed)
    text = model.instance_to_json(instance)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text)
    return 0


def _load_instance(path: str) -> model.Instance:
    with open(path) as fh:
        return model.instance_from_json(fh.read())


def _scenarios_for(args: argparse.Namespace, instance: model.Instance, n: int) -> model.ScenarioSet:
    if args.scenarios:
        return model.read_scenario_csv(args.scenarios)
    return model.sample_supply(instance, n, args.seed)


def _cmd_solve(args: argparse.Namespace) -> int:
    instance = _load_instance(args.instance)
    settings = ipm.IpmSettings()
    bound = args.bound
    if bound in ("sa_lower", "sa_upper"):
        if args.xi is not None and bound == "sa_lower" and args.scenarios:
            scen = _scenarios_for(args, instance, 0)
            report = sample_approx.solve_sa(instance, scen, args.xi, settings)
        else:
            params = sample_approx.choose_parameters(
                instance.alpha, instance.decision_count, n_lower=args.sa_n_lower
            )
            if bound == "sa_lower":
                scen = _scenarios_for(args, instance, params.n_lower)
                xi = args.xi if args.xi is not None else params.xi
                report = sample_approx.solve_sa(instance, scen, xi, settings)
            else:
                scen = _scenarios_for(args, instance, params.n_upper)
                report = sample_approx.solve_robust_sa(instance, scen, settings)
    elif bound in ("df_lower", "normal_lower"):
        report = convex_bounds.solve_ca(instance, BoundKind(bound), settings=settings)
    elif bound in ("df_upper_uniform", "normal_upper_uniform"):
        kind = BoundKind(bound.replace("_uniform", ""))
        report = convex_bounds.solve_ca(
            instance, kind, RiskBudget.uniform(instance), settings, label=bound
        )
    elif bound in ("df_upper_alg", "normal_upper_alg"):
        kind = BoundKind(bound.replace("_alg", ""))
        report = convex_bounds.refine_upper_bound(instance, kind, settings)
    else:
        raise InvalidInputError(f"unknown bound {bound!r}")

    _evaluate_report(report, instance, args.trials, args.confidence, args.seed)
    if report.seed is None:
        report.seed = int(args.seed) & ((1 << 64) - 1)
    text = report.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0 if report.feasible else 3


def _cmd_evaluate(args: argparse.Namespace) -> int:
    instance = _load_instance(args.instance)
    with open(args.report) as fh:
        doc = json.load(fh)
    values = doc.get("allocation")
    if values is None:
        raise InvalidInputError("report JSON carries no allocation to evaluate")
    allocation = model.Allocation.from_vector(instance, values)
    est = model.estimate_fulfillment(
        instance, allocation, args.trials, args.confidence, args.seed
    )
    print(json.dumps(est.to_json_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_benchmark(args: argparse.Namespace) -> int:
    if args.config:
        config = RunConfig.from_file(args.config)
    else:
        config = RunConfig()
    if args.seed is not None:
        config.master_seed = args.seed
    if args.out is not None:
        config.output_dir = args.out
    return run_benchmark(config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adalloc",
        description="Bounds and Monte Carlo validation for chance-constrained ad allocation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a random instance JSON")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--alpha", type=float, default=0.1)
    g.add_argument("--campaigns", type=int, nargs=2, default=(5, 10), metavar=("MIN", "MAX"))
    g.add_argument("--viewer-types", type=int, nargs=2, default=(10, 20), metavar=("MIN", "MAX"))
    g.add_argument("--out", type=str, default=None)
    g.set_defaults(func=_cmd_generate)

    s = sub.add_parser("solve", help="solve one bound for an instance file")
    s.add_argument("instance", type=str)
    s.add_argument("--bound", type=str, required=True, choices=ALL_BOUNDS)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=int, default=0,
                   help="Monte Carlo trials for fulfillment (0 skips evaluation)")
    s.add_argument("--confidence", type=float, default=0.99)
    s.add_argument("--scenarios", type=str, default=None, help="scenario CSV input")
    s.add_argument("--xi", type=float, default=None)
    s.add_argument("--sa-n-lower", type=int, default=100)
    s.add_argument("--out", type=str, default=None)
    s.set_defaults(func=_cmd_solve)

    e = sub.add_parser("evaluate", help="Monte Carlo fulfillment for a stored report")
    e.add_argument("--instance", type=str, required=True)
    e.add_argument("--report", type=str, required=True)
    e.add_argument("--trials", type=int, default=100_000)
    e.add_argument("--confidence", type=float, default=0.99)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=_cmd_evaluate)

    b = sub.add_parser("benchmark", help="run a seeded batch and emit report tables")
    b.add_argument("--config", type=str, default=None)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--out", type=str, default=None)
    b.set_defaults(func=_cmd_benchmark)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("ADALLOC_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AdallocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

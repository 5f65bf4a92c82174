"""Command line entry point: ``boostbench <subcommand> ...``.

Exit codes: 0 success, 1 domain failure (invalid plan, failed run, ...),
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .bwgen import PRESETS, BwDatasetSpec, GenerationError, dataset
from .config import ConfigError, load_config
from .crt import CrtError, generate_crt_dataset, load_scenarios, write_crt_dataset
from .experiment import (
    ExperimentError,
    ExperimentResult,
    Runner,
    load_result,
    load_tasks,
    make_pricing,
    resume_experiment,
)
from .gateway import ChatRequest, Gateway, GatewayError, HttpBackend, MockBackend, UnknownModelError
from .metrics import compute_metrics, render_report
from .mock import SimulatedSolver
from .pddl import PDDLError, Task, parse_plan_strict, parse_task, render_plan, validate
from .planner import NonTowerGoalError, PlanSearchLimits, SearchLimitError, UnsolvableGoalError, optimal_plan
from .prompts import (
    PromptError,
    build_bw_task_prompt,
    build_crt_task_prompt,
    build_strategy_gen_prompt,
    error_message,
    load_strategy,
)

log = logging.getLogger("boostbench")


class UsageError(Exception):
    pass


def _read(path: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p.read_text()


def _load_task(path: str) -> Task:
    return parse_task(_read(path), Path(path).stem)


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_bw(args) -> int:
    values = dict(PRESETS[args.preset]) if args.preset else {}
    for key in ("min_blocks", "max_blocks", "min_len", "max_len", "count"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    missing = {"min_blocks", "max_blocks", "min_len", "max_len", "count"} - set(values)
    if missing:
        raise UsageError(f"missing dataset parameters (give --preset or flags): {sorted(missing)}")
    try:
        spec = BwDatasetSpec(seed=args.seed, **values)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    limits = PlanSearchLimits(max_expansions=args.max_expansions, max_seconds=args.max_seconds)
    tasks, _ = dataset(spec, args.out, limits=limits, allow_uncertified=args.allow_uncertified)
    print(f"wrote {len(tasks)} tasks to {args.out}")
    return 0


def cmd_gen_crt(args) -> int:
    scenarios = load_scenarios(args.scenarios)
    tasks = generate_crt_dataset(scenarios, args.per_scenario, args.seed)
    write_crt_dataset(tasks, args.out, args.seed)
    print(f"wrote {len(tasks)} tasks to {args.out}")
    return 0


def cmd_validate(args) -> int:
    task = _load_task(args.task)
    text = _read(args.plan)
    try:
        plan = parse_plan_strict(text)
    except PDDLError:
        from .extraction import extract_plan

        plan = extract_plan(text)
        print(f"note: {args.plan} is not a bare plan; read {len(plan)} actions with the extractor", file=sys.stderr)
    report = validate(task, plan)
    if report.goal_satisfied:
        print("VALID")
        return 0
    print(error_message(report))
    return 1


def cmd_plan(args) -> int:
    task = _load_task(args.task)
    limits = PlanSearchLimits(max_expansions=args.max_expansions, max_seconds=args.max_seconds, mode=args.mode)
    result = optimal_plan(task, limits)
    print(render_plan(result.plan))
    status = "certified optimal" if result.certified_optimal else (
        f"not certified; optimal length in [{result.lower_bound}, {result.upper_bound}]")
    print(f"length {len(result.plan)} ({status}, {result.expansions} expansions)", file=sys.stderr)
    return 0


def cmd_prompt(args) -> int:
    strategy = load_strategy(args.strategy)
    path = Path(args.task)
    if path.is_dir():
        kind, tasks = load_tasks(path)
        chosen = [t for t in tasks if args.id in (None, t.id)]
        if not chosen:
            raise UsageError(f"no task {args.id!r} in {path}")
        task = chosen[0]
        bundle = build_bw_task_prompt(task, strategy) if kind == "blocksworld" else build_crt_task_prompt(task, strategy)
    else:
        bundle = build_bw_task_prompt(_load_task(args.task), strategy)
    sys.stdout.write(bundle.user + "\n")
    return 0


def cmd_gen_strategy(args) -> int:
    kind = {"bw": "blocksworld", "crt": "crt"}[args.domain]
    bundle = build_strategy_gen_prompt(kind)
    if args.print_prompt:
        sys.stdout.write(bundle.user + "\n")
        return 0
    backend = MockBackend(SimulatedSolver()) if args.backend == "mock" else HttpBackend(base_url=args.base_url)
    gateway = Gateway(backend)
    exchange = gateway.complete(ChatRequest(args.model, tuple(bundle.messages()), tag=f"strategy:{kind}"))
    body = exchange.response_text.strip()
    if not body:
        print("error: the model returned an empty strategy", file=sys.stderr)
        return 1
    if args.out:
        Path(args.out).write_text(body + "\n")
        print(f"wrote strategy to {args.out}", file=sys.stderr)
    else:
        sys.stdout.write(body + "\n")
    return 0


def write_outputs(result: ExperimentResult, out_dir: Path) -> str:
    metrics = compute_metrics(result, make_pricing(result.config))
    (out_dir / "metrics.json").write_text(json.dumps(asdict(metrics), indent=2, sort_keys=True) + "\n")
    (out_dir / "report.csv").write_text(render_report(metrics, "csv"))
    md = render_report(metrics, "markdown", rounds=result.config.rounds)
    (out_dir / "report.md").write_text(md)
    return md


def _finish(result: ExperimentResult) -> int:
    md = write_outputs(result, Path(result.config.output_dir))
    sys.stdout.write(md)
    errored = sum(len(r.errored) for r in result.rounds)
    if errored:
        print(f"warning: {errored} exchanges failed at the transport layer", file=sys.stderr)
    return 0


def cmd_run(args) -> int:
    if not Path(args.config).is_file():
        raise UsageError(f"no such file: {args.config}")
    config = load_config(args.config)
    if args.output_dir:
        config = replace(config, output_dir=str(Path(args.output_dir).resolve()))
    runner = Runner(config)
    if args.dry_run:
        for bundle in runner.dry_run():
            sys.stdout.write(f"===== {bundle.task_ref} =====\n{bundle.user}\n")
        return 0
    return _finish(runner.run(fresh=True))


def cmd_resume(args) -> int:
    return _finish(resume_experiment(args.dir))


def cmd_report(args) -> int:
    tables = []
    for d in args.dirs:
        result = load_result(d)
        if not result.complete:
            print(f"error: {d} is incomplete; run `boostbench resume {d}` first", file=sys.stderr)
            return 1
        tables.append(compute_metrics(result, make_pricing(result.config)))
    sys.stdout.write(render_report(tables, args.format))
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="boostbench", description="Planning and CRT benchmarks for reasoning models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-bw", help="generate a BlocksWorld dataset")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--min-blocks", type=int)
    g.add_argument("--max-blocks", type=int)
    g.add_argument("--min-len", type=int)
    g.add_argument("--max-len", type=int)
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--max-expansions", type=int, default=200_000)
    g.add_argument("--max-seconds", type=float, default=20.0)
    g.add_argument("--allow-uncertified", action="store_true",
                   help="accept tasks whose bounds fit the window without a certified optimum")
    g.set_defaults(func=cmd_gen_bw)

    g = sub.add_parser("gen-crt", help="generate a CRT dataset from scenario templates")
    g.add_argument("--out", required=True)
    g.add_argument("--scenarios", help="scenario JSON file (default: built-in set)")
    g.add_argument("--per-scenario", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_crt)

    g = sub.add_parser("validate", help="check a plan against a task")
    g.add_argument("task")
    g.add_argument("plan")
    g.set_defaults(func=cmd_validate)

    g = sub.add_parser("plan", help="find an optimal plan for a task")
    g.add_argument("task")
    g.add_argument("--mode", choices=("astar", "exact_bfs", "bounds_only"), default="astar")
    g.add_argument("--max-expansions", type=int, default=2_000_000)
    g.add_argument("--max-seconds", type=float, default=60.0)
    g.set_defaults(func=cmd_plan)

    g = sub.add_parser("prompt", help="print the task prompt for a task file or dataset")
    g.add_argument("task", help="task file, or dataset directory")
    g.add_argument("--strategy", help="built-in strategy name or strategy file")
    g.add_argument("--id", help="task id when TASK is a dataset directory (default: first)")
    g.set_defaults(func=cmd_prompt)

    g = sub.add_parser("gen-strategy", help="ask a model to write a strategy")
    g.add_argument("--domain", choices=("bw", "crt"), required=True)
    g.add_argument("--model", default="o1")
    g.add_argument("--backend", choices=("http", "mock"), default="http")
    g.add_argument("--base-url", default="https://api.openai.com/v1")
    g.add_argument("--out")
    g.add_argument("--print-prompt", action="store_true", help="print the prompt instead of sending it")
    g.set_defaults(func=cmd_gen_strategy)

    g = sub.add_parser("run", help="run an experiment from a JSON config")
    g.add_argument("config")
    g.add_argument("--dry-run", action="store_true", help="print round-0 prompts without calling any backend")
    g.add_argument("--output-dir", help="override the config's output directory")
    g.set_defaults(func=cmd_run)

    g = sub.add_parser("resume", help="finish an interrupted run")
    g.add_argument("dir")
    g.set_defaults(func=cmd_resume)

    g = sub.add_parser("report", help="render metrics tables for one or more run directories")
    g.add_argument("dirs", nargs="+")
    g.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    g.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, UnknownModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PDDLError, CrtError, PromptError, GenerationError, ExperimentError, GatewayError,
            UnsolvableGoalError, NonTowerGoalError, SearchLimitError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

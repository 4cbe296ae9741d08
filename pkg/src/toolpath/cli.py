"""Command-line entry point: plan, run, sweep-alpha, learn, stats.

Exit codes: 0 success, 1 invalid input (files, flags, tables), 2 execution failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from .chain import (
    TaskFormatError,
    TaskSpec,
    UnresolvableOrdering,
    propose_chain_structured,
)
from .domain import DATA_DIR, Knowledge, KnowledgeError, check_alpha, load_knowledge_dir
from .executor import MODES, Runtime, fallback_statistics, run_battery
from .learning import (
    ContrastMiner,
    LearningConfig,
    VerificationConfig,
    build_datasets,
    learn,
    sample_stream,
)
from .reports import (
    AGGREGATE_HEADER,
    CURVE_HEADER,
    DEFAULT_ALPHAS,
    FALLBACK_HEADER,
    SWEEP_HEADER,
    aggregate_rows,
    csv_text,
    fallback_rows,
    fallback_summary,
    sweep_alpha,
    write_json,
    write_text,
)
from .rules import RuleFormatError, RuleTable, build_fast_plan
from .sim import SimEnvironment, build_reference_battery

log = logging.getLogger("toolpath")

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


class InvalidInput(Exception):
    pass


def _load_json(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise InvalidInput(f"{path}: no such file")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise InvalidInput(f"{path}:{err.lineno}:{err.colno}: {err.msg}") from None


def _alphas(text: str) -> list[float]:
    try:
        return [check_alpha(float(a)) for a in text.split(",") if a.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def _alpha(text: str) -> float:
    return _alphas(text)[0]


class Context:
    """Validated inputs shared by every command."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        data = Path(args.data)
        try:
            self.knowledge: Knowledge = load_knowledge_dir(data)
        except FileNotFoundError as err:
            raise InvalidInput(f"{err.filename}: no such file") from None
        except json.JSONDecodeError as err:
            raise InvalidInput(f"{data}:{err.lineno}: {err.msg}") from None
        except KnowledgeError as err:
            raise InvalidInput(f"{data}: {err}") from None
        self.env = self._load_sim(args.sim)
        self.table = self._load_rules(args.rules)

    def _load_sim(self, path) -> SimEnvironment:
        path = Path(path) if path else DATA_DIR / ("sim_learning.json" if self.args.command == "learn" else "sim.json")
        try:
            return SimEnvironment.from_doc(_load_json(path))
        except (KeyError, TypeError, ValueError) as err:
            raise InvalidInput(f"{path}: {err}") from None

    def _load_rules(self, path) -> RuleTable:
        if path is None:
            if self.args.command == "learn":
                return RuleTable()
            path = DATA_DIR / "rules.json"
        try:
            table = RuleTable.from_doc(_load_json(path))
            table.validate(self.knowledge.features, self.knowledge.tdg)
        except (RuleFormatError, KnowledgeError, KeyError, TypeError, ValueError) as err:
            raise InvalidInput(f"{path}: {err}") from None
        return table

    def runtime(self) -> Runtime:
        a = self.args
        return Runtime(self.knowledge, self.env, q_thresh=a.q_thresh, retries=a.retries, seed=a.seed,
                       live_context=not a.upfront_context)

    def task(self, path) -> TaskSpec:
        doc = _load_json(path)
        try:
            return TaskSpec.from_doc(doc, self.knowledge.features, task_id=doc.get("task_id", Path(path).stem))
        except (TaskFormatError, KnowledgeError) as err:
            raise InvalidInput(f"{path}: {err}") from None

    def battery(self) -> list[TaskSpec]:
        a = self.args
        if a.battery:
            files = sorted(Path(a.battery).glob("*.json"))
            if not files:
                raise InvalidInput(f"{a.battery}: no task files")
            return [self.task(f) for f in files]
        return build_reference_battery(a.seed, self.env, self.knowledge, n=a.battery_size, q_thresh=a.q_thresh)


def _emit(args, name: str, text: str) -> None:
    if args.out:
        write_text(Path(args.out) / name, text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_plan(ctx: Context) -> int:
    spec = ctx.task(ctx.args.task)
    try:
        chain = propose_chain_structured(spec)
    except UnresolvableOrdering as err:
        raise InvalidInput(f"{ctx.args.task}: {err}") from None
    plan = build_fast_plan(chain, spec.initial_state, ctx.table, ctx.args.alpha,
                           live_context=not ctx.args.upfront_context)
    doc = {"chain": chain.to_doc(spec.prompt), "fast_plan": plan.to_doc()}
    _emit(ctx.args, "plan.json", json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False))
    return EXIT_OK


def cmd_run(ctx: Context) -> int:
    a = ctx.args
    tasks = ctx.battery()
    results, traces = run_battery(tasks, ctx.table, a.alpha, ctx.runtime(), a.mode)
    agg = csv_text(AGGREGATE_HEADER, aggregate_rows(results))
    if a.out:
        out = Path(a.out)
        for r in results:
            write_json(out / "results" / f"{r.task_id}.json", r.to_doc())
        write_text(out / "aggregate.csv", agg)
        write_text(out / "traces.jsonl", "".join(json.dumps(t.to_doc(), sort_keys=True) + "\n" for t in traces))
    else:
        sys.stdout.write(agg)
    failed = [r.task_id for r in results if r.failed]
    total = sum(r.total_cost for r in results)
    log.info("%d tasks, total cost %.3f, %d with failed subtasks", len(results), total, len(failed))
    return EXIT_FAILED if failed else EXIT_OK


def cmd_sweep(ctx: Context) -> int:
    a = ctx.args
    tasks = ctx.battery()
    rt = ctx.runtime()
    rows = []
    for mode in a.modes.split(","):
        if mode not in MODES:
            raise InvalidInput(f"unknown mode {mode!r}")
        rows += [r.row() for r in sweep_alpha(tasks, ctx.table, rt, a.alphas, mode)]
    _emit(a, "pareto.csv", csv_text(SWEEP_HEADER, rows))
    return EXIT_OK


def cmd_learn(ctx: Context) -> int:
    a = ctx.args
    vcfg = VerificationConfig(K=a.k, n_retries=a.n_retries, rng_seed=a.seed, alpha=a.alpha)
    cfg = LearningConfig(stream_size=a.stream_size, eval_size=a.eval_size, seed=a.seed, verification=vcfg)
    cycles = a.cycles if a.cycles is not None else a.stream_size // a.k
    if a.stream_size < cycles * a.k:
        raise InvalidInput(f"stream of {a.stream_size} tasks is shorter than {cycles} cycles of K={a.k}")
    k = ctx.knowledge
    stream = sample_stream(ctx.env, k, a.stream_size, a.seed, q_thresh=a.q_thresh)
    held_out = sample_stream(ctx.env, k, a.eval_size, a.seed, prefix="eval", q_thresh=a.q_thresh)
    datasets = build_datasets(ctx.env, k, cfg, q_thresh=a.q_thresh)
    miner = ContrastMiner(k.features, k.tdg, min_support=a.min_support)
    run = learn(stream, ctx.table, ctx.runtime(), miner, datasets, held_out, cfg, cycles)
    curve = csv_text(CURVE_HEADER, [p.row() for p in run.curve])
    summary = {"initial": run.initial.row(), "final": run.curve[-1].row() if run.curve else run.initial.row(),
               "cycles": len(run.reports)}
    if a.out:
        out = Path(a.out)
        write_text(out / "learning_curve.csv", curve)
        write_json(out / "rules.json", run.table.to_doc())
        write_text(out / "cycles.jsonl", "".join(json.dumps(r.to_doc(), sort_keys=True) + "\n" for r in run.reports))
        write_text(out / "traces.jsonl", run.buffer.to_jsonl())
        write_json(out / "summary.json", summary)
    else:
        sys.stdout.write(curve)
    return EXIT_OK


def cmd_stats(ctx: Context) -> int:
    a = ctx.args
    results, _ = run_battery(ctx.battery(), ctx.table, a.alpha, ctx.runtime(), a.mode)
    stats = fallback_statistics(results)
    if a.out:
        write_text(Path(a.out) / "fallback.csv", csv_text(FALLBACK_HEADER, fallback_rows(stats)))
        write_json(Path(a.out) / "fallback.json", fallback_summary(stats))
    else:
        sys.stdout.write(json.dumps(fallback_summary(stats), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--alpha", type=_alpha, default=1.0, help="cost-quality trade-off in [0, 2]")
    common.add_argument("--mode", choices=MODES, default="adaptive")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--q-thresh", type=float, default=0.8)
    common.add_argument("--retries", type=int, default=1, help="re-executions before abandoning a node")
    common.add_argument("--out", help="output directory (default: stdout)")
    common.add_argument("--data", default=str(DATA_DIR), help="directory with features/tdg/mdt/bt JSON")
    common.add_argument("--rules", help="rule table JSON")
    common.add_argument("--sim", help="simulator JSON")
    common.add_argument("--upfront-context", action="store_true",
                        help="read every subtask context from the initial scene")
    common.add_argument("-v", "--verbose", action="store_true")

    battery = argparse.ArgumentParser(add_help=False)
    battery.add_argument("--battery", help="directory of task JSON files (default: seeded reference battery)")
    battery.add_argument("--battery-size", type=int, default=120)

    p = argparse.ArgumentParser(prog="toolpath", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("plan", parents=[common], help="print the subtask chain and fast plan of one task")
    sp.add_argument("--task", required=True)
    sub.add_parser("run", parents=[common, battery], help="execute a battery")
    sp = sub.add_parser("sweep-alpha", parents=[common, battery], help="mean cost and quality per alpha")
    sp.add_argument("--alphas", type=_alphas, default=list(DEFAULT_ALPHAS))
    sp.add_argument("--modes", default="slow,adaptive")
    sp = sub.add_parser("learn", parents=[common], help="online subroutine learning over a seeded stream")
    sp.add_argument("--cycles", type=int)
    sp.add_argument("--stream-size", type=int, default=200)
    sp.add_argument("--eval-size", type=int, default=60)
    sp.add_argument("--k", type=int, default=20)
    sp.add_argument("--n-retries", type=int, default=2)
    sp.add_argument("--min-support", type=int, default=3)
    sub.add_parser("stats", parents=[common, battery], help="fallback statistics of a battery run")
    return p


COMMANDS = {"plan": cmd_plan, "run": cmd_run, "sweep-alpha": cmd_sweep, "learn": cmd_learn, "stats": cmd_stats}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if not 0.0 <= args.q_thresh <= 1.0:
            raise InvalidInput("--q-thresh must lie in [0, 1]")
        ctx = Context(args)
        return COMMANDS[args.command](ctx)
    except InvalidInput as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as err:
        log.debug("execution failed", exc_info=True)
        print(f"execution failed: {err}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())

"""Online subroutine induction: trace buffer, contrast mining and Net Benefit verification."""

from __future__ import annotations

import json
import logging
import random
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol

from .chain import TaskSpec
from .domain import FeatureDomains, Knowledge, ToolDependencyGraph, WorldState
from .executor import (
    ExecutionTrace,
    Runtime,
    TaskResult,
    execute_task,
    fallback_statistics,
    run_battery,
)
from .rules import (
    ActivationRule,
    Predicate,
    RuleEntry,
    RuleTable,
    Subroutine,
    update_entry_stats,
)
from .sim import (
    TEXT_KINDS,
    SimEnvironment,
    TaskSampler,
    generate_test_dataset,
    task_rng,
)

log = logging.getLogger(__name__)

PROPOSAL_KINDS = ("add_rule", "modify_path", "modify_rule")


class MissingDataset(KeyError):
    pass


class DegenerateBaseline(ValueError):
    pass


def refinement_due(counter: int, k: int) -> bool:
    if counter < 0:
        raise ValueError("task counter must be non-negative")
    if k < 1:
        raise ValueError("K must be at least 1")
    return counter > 0 and counter % k == 0


@dataclass
class TraceBuffer:
    """Append-only trace log with a per-task counter."""

    traces: list[ExecutionTrace] = field(default_factory=list)
    counter: int = 0
    _bounds: list[int] = field(default_factory=list, repr=False)

    def add_task(self, traces: Iterable[ExecutionTrace]) -> None:
        self._bounds.append(len(self.traces))
        self.traces.extend(traces)
        self.counter += 1

    def recent(self, k: int) -> list[ExecutionTrace]:
        """Traces of the last ``k`` tasks."""
        if k <= 0 or not self._bounds:
            return []
        start = self._bounds[max(0, len(self._bounds) - k)]
        return list(self.traces[start:])

    def to_jsonl(self) -> str:
        return "".join(json.dumps(t.to_doc(), sort_keys=True) + "\n" for t in self.traces)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


@dataclass(frozen=True)
class VerificationConfig:
    K: int = 20
    n_retries: int = 2
    sample_image_tasks: int = 25
    sample_text_tasks: int = 20
    rng_seed: int = 0
    alpha: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.n_retries < 0:
            raise ValueError("n_retries must be non-negative")

    def sample_size(self, kind: str) -> int:
        return self.sample_text_tasks if kind in TEXT_KINDS else self.sample_image_tasks


# --------------------------------------------------------------------------
# proposals and mining
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Evidence:
    """Contexts a proposal was mined from; kept so that refinement can extend them."""

    successes: tuple[tuple[tuple[str, str], ...], ...] = ()
    failures: tuple[tuple[tuple[str, str], ...], ...] = ()
    mean_cost: float = 0.0
    mean_quality: float = 0.0


@dataclass(frozen=True)
class Proposal:
    kind: str
    subtask_kind: str
    payload: RuleEntry
    evidence: Evidence = field(default_factory=Evidence, compare=False)

    def __post_init__(self):
        if self.kind not in PROPOSAL_KINDS:
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        if self.payload.kind != self.subtask_kind:
            raise ValueError("payload subtask does not match the proposal")

    def validate(self, domains: FeatureDomains, tdg: ToolDependencyGraph | None = None) -> None:
        RuleTable((self.payload,)).validate(domains, tdg)

    def apply(self, table: RuleTable) -> RuleTable:
        if self.kind != "add_rule":
            table.get(self.payload.id)
        return table.with_entry(self.payload)

    def to_doc(self) -> dict:
        return {"kind": self.kind, "subtask": self.subtask_kind, "entry": self.payload.to_doc()}


@dataclass
class Feedback:
    """What went wrong in a rejected verification attempt."""

    B: float
    delta_cost_pct: float
    delta_quality_pct: float
    per_task: list[dict]
    traces: list[ExecutionTrace]


class MinerAdapter(Protocol):
    def mine(self, traces: Sequence[ExecutionTrace], table: RuleTable,
             feedback: Feedback | None = None) -> list[Proposal]: ...

    def refine(self, proposal: Proposal, feedback: Feedback) -> Proposal | None: ...


def _freeze(ctx: Mapping[str, str]) -> tuple[tuple[str, str], ...]:
    return tuple(sorted(ctx.items()))


def separating_rule(successes: Sequence[Mapping[str, str]], failures: Sequence[Mapping[str, str]]
                    ) -> ActivationRule | None:
    """Smallest conjunction of exclusions that rejects every failure and keeps every success.

    Only values seen in failures and never in successes may be excluded. Features
    are picked greedily by failures covered, then by fewest excluded values; a
    tie on both is ambiguous and yields ``None``, as does a failure that no
    failure-only value explains.
    """
    remaining = list(failures)
    seen_ok: dict[str, set[str]] = defaultdict(set)
    for ctx in successes:
        for f, v in ctx.items():
            seen_ok[f].add(v)
    preds: list[Predicate] = []
    while remaining:
        options = []
        for f in sorted({f for ctx in remaining for f in ctx}):
            bad = {ctx[f] for ctx in remaining if f in ctx and ctx[f] not in seen_ok[f]}
            if not bad:
                continue
            covered = sum(1 for ctx in remaining if ctx.get(f) in bad)
            options.append((-covered, len(bad), f, frozenset(bad)))
        if not options:
            return None
        options.sort()
        if len(options) > 1 and options[0][:2] == options[1][:2]:
            return None
        _, _, f, bad = options[0]
        preds.append(Predicate(f, "not_equals" if len(bad) == 1 else "not_in_set", bad))
        remaining = [ctx for ctx in remaining if ctx.get(f) not in bad]
    return ActivationRule(tuple(sorted(preds, key=lambda p: p.feature)))


def _keep_unrefuted(old: ActivationRule, new: ActivationRule, evidence: Evidence,
                    domains: FeatureDomains) -> ActivationRule:
    """Carry over exclusions of ``old`` that no observed success contradicts.

    A rule in force stops its path from running where it is excluded, so the
    absence of recent failures there says nothing about those values.
    """
    seen: dict[str, set[str]] = defaultdict(set)
    for ctx in evidence.successes:
        for f, v in ctx:
            seen[f].add(v)
    allowed = new.canonical(domains)
    for f, keep in old.canonical(domains).items():
        excluded = frozenset(domains.domains[f]) - keep - seen[f]
        if excluded:
            allowed[f] = allowed.get(f, frozenset(domains.domains[f])) - excluded
    preds = []
    for f in sorted(allowed):
        out = frozenset(domains.domains[f]) - allowed[f]
        if out:
            preds.append(Predicate(f, "not_equals" if len(out) == 1 else "not_in_set", out))
    return ActivationRule(tuple(preds))


class ContrastMiner:
    """Deterministic miner that contrasts success and failure contexts per (subtask, path)."""

    def __init__(self, domains: FeatureDomains, tdg: ToolDependencyGraph | None = None, min_support: int = 3,
                 min_failures: int = 0, id_prefix: str = "L"):
        self.domains = domains
        self.tdg = tdg
        self.min_support = min_support
        self.min_failures = min_failures
        self.id_prefix = id_prefix

    def _next_ids(self, table: RuleTable):
        used = {e.id for e in table.entries}
        n = 1
        while True:
            candidate = f"{self.id_prefix}{n:03d}"
            if candidate not in used:
                used.add(candidate)
                yield candidate
            n += 1

    def groups(self, traces: Sequence[ExecutionTrace]):
        """Successful traces per (kind, path) and failure contexts per (kind, tool)."""
        ok: dict[tuple[str, tuple[str, ...]], list[ExecutionTrace]] = defaultdict(list)
        failed: dict[tuple[str, str], list[dict]] = defaultdict(list)
        for t in traces:
            if t.status == "success" and t.tool_path:
                ok[(t.subtask_kind, tuple(t.tool_path))].append(t)
            for tool, ctx in t.failures:
                failed[(t.subtask_kind, tool)].append(dict(ctx))
        return ok, failed

    def _build(self, kind: str, path: tuple[str, ...], evidence: Evidence, table: RuleTable,
               ids) -> Proposal | None:
        if len(evidence.failures) < self.min_failures:
            return None
        rule = separating_rule([dict(c) for c in evidence.successes], [dict(c) for c in evidence.failures])
        if rule is None:
            log.debug("no separating rule for %s %s", kind, path)
            return None
        existing = table.find_path(kind, path)
        if existing is not None:
            rule = _keep_unrefuted(existing.rule, rule, evidence, self.domains)
            if existing.rule.canonical(self.domains) == rule.canonical(self.domains):
                return None
            entry = replace(existing, rule=rule)
            proposal = Proposal("modify_rule", kind, entry, evidence)
        else:
            entry = RuleEntry(Subroutine(next(ids), path, kind), rule, evidence.mean_cost, evidence.mean_quality,
                              0, "mined")
            proposal = Proposal("add_rule", kind, entry, evidence)
        proposal.validate(self.domains, self.tdg)
        return proposal

    def mine(self, traces: Sequence[ExecutionTrace], table: RuleTable,
             feedback: Feedback | None = None) -> list[Proposal]:
        ok, failed = self.groups(traces)
        ids = self._next_ids(table)
        out = []
        for (kind, path) in sorted(ok):
            group = ok[(kind, path)]
            if len(group) < self.min_support:
                continue
            fails = [ctx for tool in dict.fromkeys(path) for ctx in failed.get((kind, tool), [])]
            evidence = Evidence(
                tuple(sorted(_freeze(t.context_features) for t in group)),
                tuple(sorted(_freeze(c) for c in fails)),
                sum(t.path_cost for t in group) / len(group),
                sum(t.path_quality for t in group) / len(group),
            )
            proposal = self._build(kind, path, evidence, table, ids)
            if proposal is not None:
                out.append(proposal)
        return out

    def refine(self, proposal: Proposal, feedback: Feedback) -> Proposal | None:
        """Re-mine one proposal with the contexts observed while verifying it."""
        path = proposal.payload.subroutine.tools
        kind = proposal.subtask_kind
        ok, failed = self.groups(feedback.traces)
        extra_ok = [_freeze(t.context_features) for t in ok.get((kind, path), [])]
        extra_bad = [_freeze(c) for tool in dict.fromkeys(path) for c in failed.get((kind, tool), [])]
        ev = proposal.evidence
        evidence = Evidence(tuple(sorted(set(ev.successes) | set(extra_ok))),
                            tuple(sorted(ev.failures + tuple(extra_bad))), ev.mean_cost, ev.mean_quality)
        rule = separating_rule([dict(c) for c in evidence.successes], [dict(c) for c in evidence.failures])
        if rule is None or rule.canonical(self.domains) == proposal.payload.rule.canonical(self.domains):
            return None
        return Proposal(proposal.kind, kind, replace(proposal.payload, rule=rule), evidence)


# --------------------------------------------------------------------------
# verification
# --------------------------------------------------------------------------


@dataclass
class Measurement:
    cost: float
    quality: float
    results: list[TaskResult] = field(default_factory=list)
    traces: list[ExecutionTrace] = field(default_factory=list)


class Evaluator(Protocol):
    def measure(self, tasks: Sequence[TaskSpec], table: RuleTable, mode: str) -> Measurement: ...


@dataclass
class BatteryEvaluator:
    """Runs tasks in the simulator; cost is the total, quality the mean over subtasks."""

    rt: Runtime
    alpha: float = 1.0

    def measure(self, tasks, table, mode):
        results, traces = run_battery(tasks, table, self.alpha, self.rt, mode)
        subs = [s for r in results for s in r.subtasks]
        quality = sum(s.quality for s in subs) / len(subs) if subs else 0.0
        return Measurement(sum(r.total_cost for r in results), quality, results, traces)


def net_benefit(c_base: float, q_base: float, c_new: float, q_new: float) -> tuple[float, float, float]:
    """Percentage cost change, percentage quality change and their difference (negative is better)."""
    if c_base == 0:
        raise DegenerateBaseline("baseline cost is zero")
    if q_base == 0:
        raise DegenerateBaseline("baseline quality is zero")
    dc = (c_new - c_base) / c_base * 100.0
    dq = (q_new - q_base) / q_base * 100.0
    return dc, dq, dc - dq


@dataclass
class Verdict:
    accepted: bool
    table: RuleTable
    proposal: Proposal
    B: float
    retries: int
    attempts: list[dict] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {"id": self.proposal.payload.id, "kind": self.proposal.kind, "subtask": self.proposal.subtask_kind,
                "rule": str(self.proposal.payload.rule), "B": round(self.B, 9), "accepted": self.accepted,
                "retries": self.retries}


def sample_tasks(dataset: Sequence[TaskSpec], n: int, rng: random.Random) -> list[TaskSpec]:
    return list(dataset) if n >= len(dataset) else rng.sample(list(dataset), n)


def _per_task(base: Measurement, new: Measurement) -> list[dict]:
    rows = []
    for b, c in zip(base.results, new.results):
        rows.append({"task_id": b.task_id, "cost_delta": c.total_cost - b.total_cost,
                     "quality_delta": c.mean_quality - b.mean_quality})
    return rows


def verify_proposal(delta: Proposal, table: RuleTable, datasets: Mapping[str, Sequence[TaskSpec]],
                    cfg: VerificationConfig, miner: MinerAdapter | None, first_cycle: bool,
                    evaluator: Evaluator) -> Verdict:
    """Accept ``delta`` iff it lowers cost more than it lowers quality on a sampled test set."""
    if delta.subtask_kind not in datasets:
        raise MissingDataset(delta.subtask_kind)
    dataset = datasets[delta.subtask_kind]
    attempts: list[dict] = []
    current = delta
    B = 0.0
    for attempt in range(cfg.n_retries + 1):
        rng = random.Random(f"{cfg.rng_seed}/verify/{delta.payload.id}/{table.version}/{attempt}")
        tasks = sample_tasks(dataset, cfg.sample_size(delta.subtask_kind), rng)
        base = evaluator.measure(tasks, table, "slow" if first_cycle else "adaptive")
        candidate_table = current.apply(table)
        new = evaluator.measure(tasks, candidate_table, "adaptive")
        dc, dq, B = net_benefit(base.cost, base.quality, new.cost, new.quality)
        attempts.append({"attempt": attempt, "rule": str(current.payload.rule), "dC": dc, "dQ": dq, "B": B})
        log.info("verify %s attempt %d: dC=%.2f%% dQ=%.2f%% B=%.2f", current.payload.id, attempt, dc, dq, B)
        if B < 0:
            return Verdict(True, _seed_stats(candidate_table, current, new), current, B, attempt, attempts)
        if miner is None or attempt == cfg.n_retries:
            break
        feedback = Feedback(B, dc, dq, _per_task(base, new), new.traces)
        refined = miner.refine(current, feedback)
        if refined is None:
            break
        current = refined
    return Verdict(False, table, current, B, len(attempts) - 1, attempts)


def _seed_stats(table: RuleTable, proposal: Proposal, run: Measurement) -> RuleTable:
    """Initial averages come from the verification run when the entry was used there."""
    entry = table.get(proposal.payload.id)
    used = [s for r in run.results for s in r.subtasks
            if s.mode == "fast" and s.status == "success" and s.entry_id == entry.id]
    if used and entry.usage_count == 0:
        cost = sum(s.cost for s in used) / len(used)
        quality = sum(s.quality for s in used) / len(used)
        return table.with_stats(replace(entry, avg_cost=cost, avg_quality=quality))
    return table


@dataclass
class CycleReport:
    cycle: int
    verdicts: list[Verdict] = field(default_factory=list)

    @property
    def accepted(self) -> list[Proposal]:
        return [v.proposal for v in self.verdicts if v.accepted]

    @property
    def rejected(self) -> list[Proposal]:
        return [v.proposal for v in self.verdicts if not v.accepted]

    def to_doc(self) -> dict:
        return {"cycle": self.cycle, "proposals": [v.to_doc() for v in self.verdicts]}


def refinement_cycle(buffer: TraceBuffer, table: RuleTable, datasets: Mapping[str, Sequence[TaskSpec]],
                     cfg: VerificationConfig, miner: MinerAdapter, evaluator: Evaluator, cycle: int = 1,
                     first_cycle: bool | None = None) -> tuple[RuleTable, CycleReport]:
    if not refinement_due(buffer.counter, cfg.K):
        raise ValueError(f"refinement is not due at task {buffer.counter} with K={cfg.K}")
    first = cycle == 1 if first_cycle is None else first_cycle
    report = CycleReport(cycle)
    for proposal in miner.mine(buffer.recent(cfg.K), table):
        verdict = verify_proposal(proposal, table, datasets, cfg, miner, first, evaluator)
        report.verdicts.append(verdict)
        table = verdict.table
    return table, report


# --------------------------------------------------------------------------
# the online loop
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LearningConfig:
    stream_size: int = 200
    eval_size: int = 60
    base_states: int = 121
    dataset_factor: int = 3
    seed: int = 42
    # kinds scored on the learning curve; None means every kind the environment can fail on
    kinds: tuple[str, ...] | None = None
    verification: VerificationConfig = field(default_factory=VerificationConfig)


@dataclass
class CurvePoint:
    tasks_explored: int
    fast_success_rate: float
    fallback_rate: float
    mean_cost: float
    mean_quality: float
    rules: int
    version: int

    def row(self) -> dict:
        return {
            "tasks_explored": self.tasks_explored,
            "fast_success_rate": f"{self.fast_success_rate:.4f}",
            "fallback_rate": f"{self.fallback_rate:.4f}",
            "mean_cost": f"{self.mean_cost:.4f}",
            "mean_quality": f"{self.mean_quality:.4f}",
            "rules": self.rules,
            "version": self.version,
        }


@dataclass
class LearningRun:
    table: RuleTable
    initial: CurvePoint
    curve: list[CurvePoint]
    reports: list[CycleReport]
    buffer: TraceBuffer

    @property
    def initial_fallback_rate(self) -> float:
        return self.initial.fallback_rate


def failing_kinds(env: SimEnvironment) -> tuple[str, ...]:
    """Subtask kinds with at least one context-dependent degradation."""
    return tuple(sorted({p.subtask_kind for p in env.profiles.values() if p.degradations}))


def build_datasets(env: SimEnvironment, knowledge: Knowledge, cfg: LearningConfig,
                   kinds: Iterable[str] | None = None, q_thresh: float = 0.8) -> dict[str, list[TaskSpec]]:
    """A test pool per kind, three times the verification sample size by default."""
    kinds = sorted(env.sampler["kind_weights"]) if kinds is None else kinds
    sampler = TaskSampler(env, knowledge, q_thresh)
    rng = random.Random(f"{cfg.seed}/base-states")
    states: list[WorldState] = [sampler.sample_state(rng) for _ in range(cfg.base_states)]
    out = {}
    for kind in kinds:
        n = cfg.verification.sample_size(kind) * cfg.dataset_factor
        pool = states if kind not in TEXT_KINDS else [s for s in states if any(o.kind == "text" for o in s.objects)]
        out[kind] = generate_test_dataset(kind, pool, n, cfg.seed, env, knowledge, q_thresh)
    return out


def sample_stream(env: SimEnvironment, knowledge: Knowledge, n: int, seed: int, prefix: str = "stream",
                  q_thresh: float = 0.8) -> list[TaskSpec]:
    sampler = TaskSampler(env, knowledge, q_thresh)
    return [sampler.sample_task(task_rng(seed, f"{prefix}-{i:03d}"), f"{prefix}-{i:03d}") for i in range(n)]


def evaluate_table(tasks: Sequence[TaskSpec], table: RuleTable, rt: Runtime, alpha: float,
                   kinds: Iterable[str], explored: int) -> CurvePoint:
    results, _ = run_battery(tasks, table, alpha, rt, "adaptive")
    stats = fallback_statistics(results, kinds)
    subs = [s for r in results for s in r.subtasks]
    return CurvePoint(
        explored,
        stats["fast_pct"],
        stats["slow_pct"],
        sum(r.total_cost for r in results) / len(results),
        sum(s.quality for s in subs) / len(subs),
        len(table.entries),
        table.version,
    )


def learn(stream: Sequence[TaskSpec], table: RuleTable, rt: Runtime, miner: MinerAdapter,
          datasets: Mapping[str, Sequence[TaskSpec]], eval_tasks: Sequence[TaskSpec],
          cfg: LearningConfig | None = None, cycles: int | None = None) -> LearningRun:
    """Run the stream adaptively, refining the table every K tasks and checkpointing on ``eval_tasks``."""
    cfg = cfg or LearningConfig()
    vcfg = cfg.verification
    cycles = len(stream) // vcfg.K if cycles is None else cycles
    if len(stream) < cycles * vcfg.K:
        raise ValueError(f"stream of {len(stream)} tasks is too short for {cycles} cycles of {vcfg.K}")
    evaluator = BatteryEvaluator(rt, vcfg.alpha)
    kinds = cfg.kinds if cfg.kinds is not None else failing_kinds(rt.env)
    initial = evaluate_table(eval_tasks, table, rt, vcfg.alpha, kinds, 0)
    buffer = TraceBuffer()
    curve: list[CurvePoint] = []
    reports: list[CycleReport] = []
    for task in stream[: cycles * vcfg.K]:
        result, traces = execute_task(task, table, vcfg.alpha, rt, "adaptive", raise_on_failure=False)
        buffer.add_task(traces)
        for s in result.subtasks:
            if s.mode == "fast" and s.status == "success" and s.entry_id:
                table = update_entry_stats(table, s.entry_id, s.cost, s.quality)
        if refinement_due(buffer.counter, vcfg.K):
            cycle = len(reports) + 1
            table, report = refinement_cycle(buffer, table, datasets, vcfg, miner, evaluator, cycle)
            reports.append(report)
            curve.append(evaluate_table(eval_tasks, table, rt, vcfg.alpha, kinds, buffer.counter))
    return LearningRun(table, initial, curve, reports, buffer)


def ground_truth_rule(env: SimEnvironment, kind: str, tools: Sequence[str],
                      domains: FeatureDomains) -> dict[str, frozenset[str]] | None:
    """Canonical complement of the path's degradation conditions, when each is a single predicate."""
    allowed: dict[str, frozenset[str]] = {}
    for tool in tools:
        for d in env.profile(tool, kind).degradations:
            if len(d.condition.predicates) != 1:
                return None
            p = d.condition.predicates[0]
            keep = frozenset(domains.domains[p.feature]) - p.allowed(domains.domains[p.feature])
            allowed[p.feature] = allowed.get(p.feature, keep) & keep
    return allowed

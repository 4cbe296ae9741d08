"""Adaptive fast/slow execution of a task: subroutines first, local A* on fallback."""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

from .astar import SearchExhausted, SearchOutcome, astar_search, compute_heuristics
from .chain import SubtaskChain, TaskSpec, propose_chain_structured
from .domain import Knowledge, SubtaskInstance, WorldState, check_alpha
from .rules import RuleTable, build_fast_plan, select_entry
from .sim import SimEnvironment, SimExecutor, SimVLM, task_rng
from .subgraph import build_full_subgraph, build_low_level_subgraph

log = logging.getLogger(__name__)

MODES = ("adaptive", "fast", "slow")


class TaskFailed(RuntimeError):
    def __init__(self, message, result, traces):
        super().__init__(message)
        self.result = result
        self.traces = traces


class EmptyCollection(ValueError):
    pass


@dataclass(frozen=True)
class Runtime:
    """Everything an execution needs besides the task and the rule table."""

    knowledge: Knowledge
    env: SimEnvironment
    q_thresh: float = 0.8
    retries: int = 1
    seed: int = 0
    live_context: bool = True
    search_scope: str = "subtask"  # or "task": one search over the whole chain in slow mode
    priority: str = "additive"


@dataclass
class SubtaskResult:
    subtask: SubtaskInstance
    mode: str
    fallback_reason: str
    cost: float
    quality: float
    path: list[str]
    status: str = "success"
    entry_id: str | None = None
    # what happened to the fast attempt, whatever the mode
    attempt: str = "none"
    sunk_cost: float = 0.0
    path_cost: float = 0.0
    search: SearchOutcome | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode == "fast" and self.fallback_reason != "none":
            raise ValueError("fast results carry no fallback reason")
        if self.mode == "slow" and self.fallback_reason not in ("no_subroutine", "vlm_failure"):
            raise ValueError(f"slow result needs a fallback reason, got {self.fallback_reason!r}")

    def to_doc(self) -> dict:
        return {
            "subtask": self.subtask.label,
            "kind": self.subtask.kind,
            "mode": self.mode,
            "fallback_reason": self.fallback_reason,
            "status": self.status,
            "subroutine": self.entry_id,
            "cost": round(self.cost, 9),
            "quality": round(self.quality, 9),
            "path": list(self.path),
        }


@dataclass
class TaskResult:
    task_id: str
    subtasks: list[SubtaskResult]
    final_state: WorldState

    @property
    def total_cost(self) -> float:
        return sum(r.cost for r in self.subtasks)

    @property
    def mean_quality(self) -> float:
        return sum(r.quality for r in self.subtasks) / len(self.subtasks) if self.subtasks else 0.0

    @property
    def failed(self) -> bool:
        return any(r.status != "success" for r in self.subtasks)

    def to_doc(self) -> dict:
        return {
            "task_id": self.task_id,
            "total_cost": round(self.total_cost, 9),
            "mean_quality": round(self.mean_quality, 9),
            "failed": self.failed,
            "subtasks": [r.to_doc() for r in self.subtasks],
            "final_state": self.final_state.to_doc(),
        }


@dataclass(frozen=True)
class ExecutionTrace:
    task_id: str
    subtask: str
    subtask_kind: str
    tool_path: tuple[str, ...]
    context_features: Mapping[str, str]
    path_cost: float
    path_quality: float
    failures: tuple[tuple[str, tuple[tuple[str, str], ...]], ...]
    status: str
    mode: str
    fallback_reason: str = "none"
    subroutine: str | None = None

    def failure_contexts(self) -> list[tuple[str, dict]]:
        return [(tool, dict(ctx)) for tool, ctx in self.failures]

    def to_doc(self) -> dict:
        return {
            "task_id": self.task_id,
            "subtask": self.subtask,
            "subtask_kind": self.subtask_kind,
            "tool_path": list(self.tool_path),
            "context_features": dict(sorted(self.context_features.items())),
            "path_cost": round(self.path_cost, 9),
            "path_quality": round(self.path_quality, 9),
            "failures": [{"tool": t, "context": dict(ctx)} for t, ctx in self.failures],
            "status": self.status,
            "mode": self.mode,
            "fallback_reason": self.fallback_reason,
            "subroutine": self.subroutine,
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> ExecutionTrace:
        return cls(
            doc.get("task_id", ""),
            doc.get("subtask", ""),
            doc["subtask_kind"],
            tuple(doc["tool_path"]),
            dict(doc["context_features"]),
            float(doc["path_cost"]),
            float(doc["path_quality"]),
            tuple((f["tool"], tuple(sorted(f["context"].items()))) for f in doc.get("failures", [])),
            doc["status"],
            doc.get("mode", "slow"),
            doc.get("fallback_reason", "none"),
            doc.get("subroutine"),
        )


def _freeze(ctx: Mapping[str, str]) -> tuple[tuple[str, str], ...]:
    return tuple(sorted(ctx.items()))


def _slow(s: SubtaskInstance, state: WorldState, alpha, rt: Runtime, executor, vlm) -> SearchOutcome:
    k = rt.knowledge
    graph = build_low_level_subgraph(s, k.mdt, k.tdg)
    return astar_search(graph, alpha, k.bt, executor, vlm, rt.q_thresh, state, rt.retries,
                        compute_heuristics(graph, k.bt, alpha), priority=rt.priority)


def execute_task(spec: TaskSpec, table: RuleTable, alpha: float, rt: Runtime, mode: str = "adaptive",
                 raise_on_failure: bool = True) -> tuple[TaskResult, list[ExecutionTrace]]:
    alpha = check_alpha(alpha)
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    chain = propose_chain_structured(spec)
    executor = SimExecutor(rt.env, task_rng(rt.seed, spec.task_id))
    vlm = SimVLM()
    if mode == "slow" and rt.search_scope == "task":
        result, traces = _execute_whole_chain(spec, chain, alpha, rt, executor, vlm)
    else:
        result, traces = _execute_per_subtask(spec, chain, table, alpha, rt, mode, executor, vlm)
    if raise_on_failure and result.failed and mode != "fast":
        raise TaskFailed(f"task {spec.task_id} could not be completed", result, traces)
    return result, traces


def _execute_per_subtask(spec, chain: SubtaskChain, table, alpha, rt: Runtime, mode, executor, vlm):
    state = spec.initial_state.copy()
    plan_ctx = None
    if not rt.live_context:
        plan_ctx = build_fast_plan(chain, spec.initial_state, table, alpha, live_context=False).contexts
    results: list[SubtaskResult] = []
    traces: list[ExecutionTrace] = []
    for i, s in enumerate(chain.entries):
        ctx = state.context_for(s)
        select_ctx = ctx if plan_ctx is None else plan_ctx[i]
        entry = select_entry(s, select_ctx, table, alpha) if mode != "slow" else None
        failures: list[tuple[str, tuple]] = []
        sunk = 0.0
        attempt = "no_subroutine"
        if entry is not None:
            qs, fast_cost, ok = [], 0.0, True
            for tool in entry.subroutine.tools:
                run = executor.run(tool, s, state)
                q = vlm.check(run, s, tool)
                fast_cost += run.cost
                if q < rt.q_thresh:
                    failures.append((tool, _freeze(run.context)))
                    ok = False
                    break
                qs.append(q)
            if ok:
                quality = sum(qs) / len(qs)
                state = state.apply(s, entry.subroutine.tools)
                results.append(SubtaskResult(s, "fast", "none", fast_cost, quality, list(entry.subroutine.tools),
                                             entry_id=entry.id, path_cost=fast_cost))
                traces.append(ExecutionTrace(spec.task_id, s.label, s.kind, entry.subroutine.tools, ctx, fast_cost,
                                             quality, tuple(failures), "success", "fast", "none", entry.id))
                continue
            sunk = fast_cost
            attempt = "vlm_failure"
        if mode == "fast":
            results.append(SubtaskResult(s, "fast", "none", sunk, 0.0, [], status="failed",
                                         entry_id=entry.id if entry else None, attempt=attempt, sunk_cost=sunk))
            traces.append(ExecutionTrace(spec.task_id, s.label, s.kind, entry.subroutine.tools if entry else (),
                                         ctx, sunk, 0.0, tuple(failures), "fail", "fast", "none",
                                         entry.id if entry else None))
            continue
        reason = "no_subroutine" if mode == "slow" else attempt
        try:
            out = _slow(s, state, alpha, rt, executor, vlm)
        except SearchExhausted as err:
            o = err.outcome
            failures += [(f.tool, _freeze(f.context)) for f in o.failures]
            results.append(SubtaskResult(s, "slow", reason, sunk + o.search_cost, 0.0, [], status="failed",
                                         attempt=attempt, sunk_cost=sunk, search=o))
            traces.append(ExecutionTrace(spec.task_id, s.label, s.kind, (), ctx, 0.0, 0.0, tuple(failures),
                                         "fail", "slow", reason))
            continue
        failures += [(f.tool, _freeze(f.context)) for f in out.failures]
        qs = [st.quality for st in out.path.steps]
        quality = sum(qs) / len(qs)
        tools = out.path.tools
        state = out.final_state
        results.append(SubtaskResult(s, "slow", reason, sunk + out.search_cost, quality, tools, attempt=attempt,
                                     sunk_cost=sunk, path_cost=out.path.cost_sum, search=out))
        traces.append(ExecutionTrace(spec.task_id, s.label, s.kind, tuple(tools), ctx, out.path.cost_sum, quality,
                                     tuple(failures), "success", "slow", reason))
    return TaskResult(spec.task_id, results, state), traces


def _execute_whole_chain(spec, chain: SubtaskChain, alpha, rt: Runtime, executor, vlm):
    k = rt.knowledge
    graph = build_full_subgraph(chain, k.mdt, k.tdg)
    state = spec.initial_state.copy()
    try:
        out = astar_search(graph, alpha, k.bt, executor, vlm, rt.q_thresh, state, rt.retries)
    except SearchExhausted as err:
        o = err.outcome
        results = [SubtaskResult(s, "slow", "no_subroutine", o.search_cost if i == 0 else 0.0, 0.0, [],
                                 status="failed", search=o) for i, s in enumerate(chain.entries)]
        return TaskResult(spec.task_id, results, state), []
    results, traces = [], []
    ctx_state = state
    for i, s in enumerate(chain.entries):
        steps = [st for st in out.path.steps if st.subtask.ordinal == s.ordinal]
        qs = [st.quality for st in steps]
        cost = sum(st.cost for st in steps)
        ctx = ctx_state.context_for(s)
        fails = tuple((f.tool, _freeze(f.context)) for f in out.failures if f.subtask.ordinal == s.ordinal)
        # exploration spent on the whole search is charged to the first subtask
        charged = out.search_cost if i == 0 else 0.0
        results.append(SubtaskResult(s, "slow", "no_subroutine", charged, sum(qs) / len(qs),
                                     [st.tool for st in steps], path_cost=cost))
        traces.append(ExecutionTrace(spec.task_id, s.label, s.kind, tuple(st.tool for st in steps), ctx, cost,
                                     sum(qs) / len(qs), fails, "success", "slow", "no_subroutine"))
        ctx_state = ctx_state.apply(s)
    return TaskResult(spec.task_id, results, out.final_state), traces


def run_battery(tasks: Sequence[TaskSpec], table: RuleTable, alpha: float, rt: Runtime, mode: str = "adaptive"):
    results, traces = [], []
    for spec in tasks:
        res, tr = execute_task(spec, table, alpha, rt, mode, raise_on_failure=False)
        results.append(res)
        traces.extend(tr)
    return results, traces


def fallback_statistics(results: Iterable[TaskResult | SubtaskResult], kinds: Iterable[str] | None = None) -> dict:
    subs: list[SubtaskResult] = []
    for r in results:
        subs.extend(r.subtasks if isinstance(r, TaskResult) else [r])
    if kinds is not None:
        keep = set(kinds)
        subs = [r for r in subs if r.subtask.kind in keep]
    if not subs:
        raise EmptyCollection("no subtask executions to summarise")
    n = len(subs)

    def reason_of(r: SubtaskResult) -> str:
        return r.fallback_reason if r.mode == "slow" else r.attempt

    fast = [r for r in subs if r.mode == "fast" and r.status == "success"]
    other = [r for r in subs if not (r.mode == "fast" and r.status == "success")]
    reasons = Counter(reason_of(r) for r in other)
    by_kind: dict[str, dict] = {}
    for r in subs:
        row = by_kind.setdefault(r.subtask.kind, {"total": 0, "fast": 0, "slow": 0,
                                                  "vlm_failure": 0, "no_subroutine": 0})
        row["total"] += 1
        if r.mode == "fast" and r.status == "success":
            row["fast"] += 1
        else:
            row["slow"] += 1
            row[reason_of(r)] += 1
    return {
        "subtasks": n,
        "fast_pct": 100.0 * len(fast) / n,
        "slow_pct": 100.0 * len(other) / n,
        "by_reason": {
            "vlm_failure": 100.0 * reasons.get("vlm_failure", 0) / n,
            "no_subroutine": 100.0 * reasons.get("no_subroutine", 0) / n,
        },
        "by_subtask_kind": dict(sorted(by_kind.items())),
    }

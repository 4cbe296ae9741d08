"""Cost-sensitive A* over a tool subgraph with quality-gated execution.

Path scores multiply a cost term by a quality term, so the score of a path is
not a sum of edge weights. Every frontier entry therefore carries its own
accumulator and world state, and the search runs as best-first with an
incumbent: complete paths update the incumbent and pending entries are
discarded once a lower bound on their completions exceeds it.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Protocol

from .domain import BenchmarkTable, SubtaskInstance, WorldState, check_alpha
from .subgraph import ToolSubgraph

log = logging.getLogger(__name__)

DEFAULT_Q_THRESH = 0.8
DEFAULT_RETRIES = 1


def score(cost: float, quality: float, alpha: float) -> float:
    """Scalarised cost-quality score: cost^alpha * (2 - quality)^(2 - alpha)."""
    cost_term = cost**alpha if alpha > 0 else 1.0
    beta = 2.0 - alpha
    quality_term = (2.0 - quality) ** beta if beta > 0 else 1.0
    return cost_term * quality_term


@dataclass(frozen=True)
class Step:
    tool: str
    subtask: SubtaskInstance
    cost: float
    quality: float
    label: str = ""


@dataclass(frozen=True)
class PathAccumulator:
    cost_sum: float = 0.0
    quality_product: float = 1.0
    steps: tuple[Step, ...] = ()

    def extend(self, step: Step) -> PathAccumulator:
        return PathAccumulator(self.cost_sum + step.cost, self.quality_product * step.quality, self.steps + (step,))

    @classmethod
    def of(cls, costs, qualities) -> PathAccumulator:
        acc = cls()
        sub = SubtaskInstance("Object Detection", "x")
        for i, (c, q) in enumerate(zip(costs, qualities)):
            acc = acc.extend(Step(f"t{i}", sub, float(c), float(q)))
        return acc

    @property
    def tools(self) -> list[str]:
        return [s.tool for s in self.steps]

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(s.label for s in self.steps)

    def __len__(self):
        return len(self.steps)


def g_score(acc: PathAccumulator, alpha: float) -> float:
    if not acc.steps:
        return 0.0
    return score(acc.cost_sum, acc.quality_product, alpha)


@dataclass(frozen=True)
class Heuristic:
    h_cost: float
    h_quality: float
    h_value: float


@dataclass(frozen=True)
class HeuristicTable:
    records: dict[str, Heuristic]
    # optimistic completion bounds (cheapest suffix cost, best suffix quality)
    bound_cost: dict[str, float]
    bound_quality: dict[str, float]

    def __getitem__(self, label: str) -> Heuristic:
        return self.records[label]


def compute_heuristics(graph: ToolSubgraph, bt: BenchmarkTable, alpha: float) -> HeuristicTable:
    """Backward pass from the leaves, propagating the minimising successor's components."""
    alpha = check_alpha(alpha)
    records: dict[str, Heuristic] = {}
    bound_cost: dict[str, float] = {}
    bound_quality: dict[str, float] = {}
    for label in reversed(graph.topological_order()):
        succs = graph.successors(label)
        if label in graph.leaves or not succs:
            records[label] = Heuristic(0.0, 1.0, 0.0)
            bound_cost[label] = 0.0 if label in graph.leaves else math.inf
            bound_quality[label] = 1.0 if label in graph.leaves else 0.0
            continue
        best = None
        for y in sorted(succs):
            rec = bt.get(graph.nodes[y].tool, graph.nodes[y].subtask.kind)
            hc = records[y].h_cost + rec.cost
            hq = rec.quality * records[y].h_quality
            val = score(hc, hq, alpha)
            if best is None or val < best[0]:
                best = (val, hc, hq)
        records[label] = Heuristic(best[1], best[2], best[0])
        bc, bq = math.inf, 0.0
        for y in succs:
            rec = bt.get(graph.nodes[y].tool, graph.nodes[y].subtask.kind)
            bc = min(bc, rec.cost + bound_cost[y])
            bq = max(bq, rec.quality * bound_quality[y])
        bound_cost[label], bound_quality[label] = bc, bq
    return HeuristicTable(records, bound_cost, bound_quality)


# --------------------------------------------------------------------------
# execution seams
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ToolRun:
    cost: float
    quality: float
    context: dict = field(default_factory=dict, hash=False)
    state_delta: dict = field(default_factory=dict, hash=False)


class ToolExecutor(Protocol):
    def run(self, tool: str, subtask: SubtaskInstance, state: WorldState) -> ToolRun: ...


class QualityChecker(Protocol):
    def check(self, run: ToolRun, subtask: SubtaskInstance, tool: str) -> float: ...


class BenchmarkExecutor:
    """Deterministic executor whose outcomes are exactly the benchmark values."""

    def __init__(self, bt: BenchmarkTable, failing: Callable[[str, SubtaskInstance], bool] | None = None,
                 fail_quality: float = 0.3):
        self.bt = bt
        self.failing = failing
        self.fail_quality = fail_quality

    def run(self, tool, subtask, state):
        rec = self.bt.get(tool, subtask.kind)
        q = rec.quality
        if self.failing is not None and self.failing(tool, subtask):
            q = self.fail_quality
        return ToolRun(rec.cost, q, state.context_for(subtask))


class TruthfulVLM:
    def check(self, run: ToolRun, subtask, tool) -> float:
        return run.quality


# --------------------------------------------------------------------------
# search
# --------------------------------------------------------------------------


class SearchExhausted(RuntimeError):
    def __init__(self, message: str, outcome: SearchOutcome):
        super().__init__(message)
        self.outcome = outcome


@dataclass
class Failure:
    tool: str
    subtask: SubtaskInstance
    context: dict


@dataclass
class SearchOutcome:
    path: PathAccumulator
    final_state: WorldState
    expansions: int = 0
    retries: int = 0
    vlm_failures: int = 0
    search_cost: float = 0.0
    failures: list[Failure] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)
    best_g: dict[str, float] = field(default_factory=dict)
    score: float = math.inf

    @property
    def tools(self) -> list[str]:
        return self.path.tools


@dataclass(order=True)
class _Entry:
    f: float
    label: str
    tiebreak: tuple
    seq: int
    acc: PathAccumulator = field(compare=False)
    state: WorldState = field(compare=False)
    g: float = field(compare=False)
    h: float = field(compare=False)
    segment_tools: tuple = field(compare=False, default=())


def _dominated(front: list[tuple[float, float]], c: float, q: float) -> bool:
    return any(c0 <= c and q0 >= q for c0, q0 in front)


def astar_search(
    graph: ToolSubgraph,
    alpha: float,
    bt: BenchmarkTable,
    executor: ToolExecutor,
    vlm: QualityChecker,
    q_thresh: float = DEFAULT_Q_THRESH,
    state: WorldState | None = None,
    retries: int = DEFAULT_RETRIES,
    heuristics: HeuristicTable | None = None,
    record_log: bool = False,
    priority: str = "additive",
) -> SearchOutcome:
    alpha = check_alpha(alpha)
    heur = heuristics or compute_heuristics(graph, bt, alpha)
    state = state if state is not None else WorldState()
    counter = itertools.count()
    frontier: list[_Entry] = []
    banned: set[str] = set()
    arrivals: dict[str, list[tuple[float, float]]] = {}
    best_g: dict[str, float] = {label: math.inf for label in graph.nodes}
    out = SearchOutcome(PathAccumulator(), state)
    incumbent: tuple[float, tuple, PathAccumulator, WorldState] | None = None

    def bench(label):
        node = graph.nodes[label]
        return bt.get(node.tool, node.subtask.kind)

    def push(label, acc, st, seg_tools):
        rec = bench(label)
        g_est = score(acc.cost_sum + rec.cost, acc.quality_product * rec.quality, alpha)
        hr = heur[label]
        if priority == "additive":
            f = g_est + hr.h_value
        else:
            f = score(acc.cost_sum + rec.cost + hr.h_cost, acc.quality_product * rec.quality * hr.h_quality, alpha)
        heapq.heappush(
            frontier,
            _Entry(f, label, acc.labels, next(counter), acc, st, g_est, hr.h_value, seg_tools),
        )

    def lower_bound(e: _Entry) -> float:
        rec = bench(e.label)
        c = e.acc.cost_sum + rec.cost + heur.bound_cost[e.label]
        q = e.acc.quality_product * rec.quality * heur.bound_quality[e.label]
        return score(c, q, alpha) if math.isfinite(c) else math.inf

    def note(e: _Entry, action: str):
        if record_log:
            out.log.append({"node": e.label, "g": e.g, "h": e.h, "f": e.f, "action": action})

    for label in graph.successors(graph.start):
        push(label, PathAccumulator(), state, ())

    while frontier:
        e = heapq.heappop(frontier)
        if e.label in banned:
            continue
        if incumbent is not None and lower_bound(e) > incumbent[0] * (1 + 1e-12):
            note(e, "prune")
            continue
        front = arrivals.setdefault(e.label, [])
        if _dominated(front, e.acc.cost_sum, e.acc.quality_product):
            note(e, "prune")
            continue
        front.append((e.acc.cost_sum, e.acc.quality_product))

        node = graph.nodes[e.label]
        note(e, "expand")
        run = executor.run(node.tool, node.subtask, e.state)
        q = vlm.check(run, node.subtask, node.tool)
        cost = run.cost
        out.expansions += 1
        out.search_cost += run.cost
        attempt = 0
        while q < q_thresh and attempt < retries:
            attempt += 1
            out.retries += 1
            note(e, "retry")
            run = executor.run(node.tool, node.subtask, e.state)
            q = vlm.check(run, node.subtask, node.tool)
            cost += run.cost
            out.search_cost += run.cost
        if q < q_thresh:
            out.vlm_failures += 1
            out.failures.append(Failure(node.tool, node.subtask, dict(run.context)))
            banned.add(e.label)
            note(e, "abandon")
            continue

        acc = e.acc.extend(Step(node.tool, node.subtask, cost, q, e.label))
        best_g[e.label] = min(best_g[e.label], g_score(acc, alpha))
        seg_tools = e.segment_tools + (node.tool,)
        st = e.state
        if node.segment_leaf:
            st = st.apply(node.subtask, seg_tools)
            seg_tools = ()
        if e.label in graph.leaves:
            val = g_score(acc, alpha)
            key = (val, acc.labels)
            if incumbent is None or val < incumbent[0] * (1 - 1e-12) or (
                abs(val - incumbent[0]) <= 1e-12 * max(1.0, val) and acc.labels < incumbent[1]
            ):
                incumbent = (key[0], key[1], acc, st)
            continue
        for nxt in graph.successors(e.label):
            if nxt not in banned:
                push(nxt, acc, st, seg_tools)

    out.best_g = best_g
    if incumbent is None:
        raise SearchExhausted("every path failed the quality gate", out)
    out.path, out.final_state = incumbent[2], incumbent[3]
    out.score = incumbent[0]
    return out

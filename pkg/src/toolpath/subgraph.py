"""Tool subgraphs: the per-subtask search space and its concatenation over a chain."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .chain import SubtaskChain
from .domain import ModelDescriptionTable, SubtaskInstance, ToolDependencyGraph

START = "start"


class NoCapableTool(LookupError):
    pass


@dataclass(frozen=True)
class GraphNode:
    label: str
    tool: str
    subtask: SubtaskInstance
    segment: int  # index of the subtask within the chain
    segment_leaf: bool  # completes its subtask


@dataclass
class ToolSubgraph:
    nodes: dict[str, GraphNode]
    succ: dict[str, list[str]]
    leaves: frozenset[str]
    subtasks: tuple[SubtaskInstance, ...] = ()
    start: str = START

    def successors(self, label: str) -> list[str]:
        return self.succ.get(label, [])

    def predecessors(self, label: str) -> list[str]:
        return sorted(p for p, ss in self.succ.items() if label in ss)

    def topological_order(self) -> list[str]:
        indeg = {n: 0 for n in [self.start, *self.nodes]}
        for ss in self.succ.values():
            for s in ss:
                indeg[s] += 1
        ready = sorted(n for n, d in indeg.items() if d == 0)
        out = []
        while ready:
            n = ready.pop(0)
            out.append(n)
            for s in self.successors(n):
                indeg[s] -= 1
                if indeg[s] == 0:
                    ready.append(s)
            ready.sort()
        if len(out) != len(indeg):
            raise ValueError("subgraph has a cycle")
        return out

    def complete_paths(self) -> list[tuple[str, ...]]:
        """Every start-to-leaf path (exponential in general; meant for small graphs)."""
        paths = []

        def walk(node, prefix):
            if node in self.leaves:
                paths.append(prefix)
                return
            for nxt in self.successors(node):
                walk(nxt, prefix + (nxt,))

        walk(self.start, ())
        return paths

    def to_doc(self) -> dict:
        return {
            "version": "1",
            "start": self.start,
            "leaves": sorted(self.leaves),
            "adjacency": {n: list(self.successors(n)) for n in [self.start, *sorted(self.nodes)]},
        }


def tools_for_subtask(kind: str, mdt: ModelDescriptionTable) -> set[str]:
    tools = set(mdt.tools_for(kind))
    if not tools:
        raise NoCapableTool(f"no tool supports {kind!r}")
    return tools


def _segment(s: SubtaskInstance, segment: int, mdt, tdg):
    """Nodes and edges of one subtask's graph, pruned to start-to-leaf paths."""
    kind = s.kind
    terminals = tools_for_subtask(kind, mdt)
    # backward reachability from capable tools (leaves keep no outgoing edges)
    keep = set()
    queue = deque(sorted(terminals))
    while queue:
        t = queue.popleft()
        if t in keep:
            continue
        keep.add(t)
        queue.extend(tdg.predecessors(t, kind))
    edges = {t: [] for t in keep}
    for t in keep:
        if t in terminals:
            continue
        edges[t] = [u for u in tdg.successors(t, kind) if u in keep]
    entries = sorted(t for t in keep if not any(p in keep for p in tdg.predecessors(t, kind)))
    # forward reachability from the entries
    reach = set()
    queue = deque(entries)
    while queue:
        t = queue.popleft()
        if t in reach:
            continue
        reach.add(t)
        queue.extend(edges[t])
    # a non-terminal with no path onward would dead-end; strip iteratively
    alive = {t for t in reach if t in terminals}
    changed = True
    while changed:
        changed = False
        for t in reach - alive:
            if any(u in alive for u in edges[t]):
                alive.add(t)
                changed = True
    label = lambda t: f"{t}@{s.ordinal}"
    nodes = {label(t): GraphNode(label(t), t, s, segment, t in terminals) for t in alive}
    succ = {label(t): sorted(label(u) for u in edges[t] if u in alive) for t in alive}
    return nodes, succ, sorted(label(t) for t in entries if t in alive), sorted(label(t) for t in alive & terminals)


def build_low_level_subgraph(s: SubtaskInstance, mdt: ModelDescriptionTable, tdg: ToolDependencyGraph) -> ToolSubgraph:
    nodes, succ, entries, leaves = _segment(s, 0, mdt, tdg)
    succ[START] = entries
    return ToolSubgraph(nodes, succ, frozenset(leaves), (s,))


def build_full_subgraph(chain: SubtaskChain, mdt: ModelDescriptionTable, tdg: ToolDependencyGraph) -> ToolSubgraph:
    """Concatenate per-subtask graphs in chain order; leaves of one feed entries of the next."""
    nodes: dict[str, GraphNode] = {}
    succ: dict[str, list[str]] = {}
    prev_leaves = [START]
    leaves: list[str] = []
    for i, s in enumerate(chain.entries):
        seg_nodes, seg_succ, entries, leaves = _segment(s, i, mdt, tdg)
        if set(seg_nodes) & set(nodes):
            raise ValueError(f"duplicate ordinal {s.ordinal} in chain")
        nodes.update(seg_nodes)
        succ.update(seg_succ)
        for p in prev_leaves:
            succ[p] = sorted(set(succ.get(p, [])) | set(entries))
        prev_leaves = leaves
    return ToolSubgraph(nodes, succ, frozenset(leaves), tuple(chain.entries))


def subgraph_from_edges(edges, leaves, tool_of=None, subtask: SubtaskInstance | None = None) -> ToolSubgraph:
    """Build an ad-hoc single-segment graph from explicit labelled edges (tests, fixtures)."""
    subtask = subtask or SubtaskInstance("Object Detection", "x")
    succ: dict[str, list[str]] = {START: []}
    labels = set()
    for a, b in edges:
        succ.setdefault(a, [])
        succ[a] = sorted(set(succ[a]) | {b})
        labels.update(x for x in (a, b) if x != START)
    tool_of = tool_of or {}
    nodes = {
        n: GraphNode(n, tool_of.get(n, n.split("@")[0]), subtask, 0, n in leaves) for n in sorted(labels)
    }
    for n in nodes:
        succ.setdefault(n, [])
    return ToolSubgraph(nodes, succ, frozenset(leaves), (subtask,))

"""Core vocabulary: tools, subtasks, context features, knowledge tables, world state."""

from __future__ import annotations

import copy
import json
import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"
SCHEMA_VERSION = "1"

# op-level features describe the requested edit rather than the object itself
REPLACEMENT_KINDS = {"Object Replacement", "Text Replacement"}
RECOLOR_KINDS = {"Object Recoloration"}
REMOVAL_KINDS = {"Object Removal", "Text Removal", "Background Removal"}
TARGETED_KINDS = REPLACEMENT_KINDS | RECOLOR_KINDS


class KnowledgeError(ValueError):
    pass


class MissingBenchmarkEntry(KnowledgeError):
    pass


class DanglingToolReference(KnowledgeError):
    pass


class CyclicDependencyGraph(KnowledgeError):
    pass


class UnknownSubtask(KnowledgeError):
    pass


class UnknownFeature(KnowledgeError):
    pass


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 2.0:
        raise ValueError(f"alpha must lie in [0, 2], got {alpha}")
    return alpha


# --------------------------------------------------------------------------
# Feature domains and subtask vocabulary
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureDomains:
    """Declared bucket sets for every context feature, plus the subtask vocabulary."""

    domains: Mapping[str, tuple[str, ...]]
    subtasks: tuple[str, ...]

    @classmethod
    def from_doc(cls, doc: Mapping) -> FeatureDomains:
        _check_version(doc, "features")
        domains = {}
        for name, values in doc["features"].items():
            if not values or len(set(values)) != len(values):
                raise KnowledgeError(f"feature {name!r} needs a non-empty set of distinct buckets")
            domains[name] = tuple(values)
        subtasks = tuple(doc["subtasks"])
        if len(set(subtasks)) != len(subtasks):
            raise KnowledgeError("duplicate subtask names in vocabulary")
        return cls(domains=domains, subtasks=subtasks)

    def to_doc(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "subtasks": list(self.subtasks),
            "features": {k: list(v) for k, v in self.domains.items()},
        }

    def check_subtask(self, kind: str) -> str:
        if kind not in self.subtasks:
            raise UnknownSubtask(f"unknown subtask {kind!r}")
        return kind

    def check_value(self, feature: str, value: str) -> None:
        if feature not in self.domains:
            raise UnknownFeature(f"undeclared feature {feature!r}")
        if value not in self.domains[feature]:
            raise UnknownFeature(f"{value!r} is not a bucket of {feature!r}: {self.domains[feature]}")

    def validate(self, ctx: Mapping[str, str]) -> dict[str, str]:
        for k, v in ctx.items():
            self.check_value(k, v)
        return dict(ctx)


# --------------------------------------------------------------------------
# Subtasks and world state
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SubtaskInstance:
    kind: str
    source_object: str = ""
    target_object: str = ""
    ordinal: int = 1
    # relational features of the requested edit (e.g. color_transition)
    op_features: Mapping[str, str] = field(default_factory=dict, hash=False)
    # features the created object takes on after a replacement
    target_features: Mapping[str, str] = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.ordinal < 1:
            raise ValueError("ordinal must be positive")
        if self.kind in TARGETED_KINDS and not self.target_object:
            raise ValueError(f"{self.kind} needs a target object")
        if self.kind not in TARGETED_KINDS and self.target_object:
            raise ValueError(f"{self.kind} takes no target object")

    @property
    def label(self) -> str:
        inner = self.source_object
        if self.target_object:
            inner = f"{self.source_object} -> {self.target_object}"
        return f"{self.kind} ({inner})({self.ordinal})"

    def with_ordinal(self, ordinal: int) -> SubtaskInstance:
        return SubtaskInstance(
            self.kind, self.source_object, self.target_object, ordinal,
            dict(self.op_features), dict(self.target_features),
        )

    def to_doc(self) -> dict:
        doc = {"kind": self.kind, "source_object": self.source_object, "target_object": self.target_object}
        if self.op_features:
            doc["features"] = dict(sorted(self.op_features.items()))
        if self.target_features:
            doc["target_features"] = dict(sorted(self.target_features.items()))
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping, ordinal: int = 1) -> SubtaskInstance:
        return cls(
            kind=doc["kind"],
            source_object=doc.get("source_object", ""),
            target_object=doc.get("target_object", ""),
            ordinal=ordinal,
            op_features=dict(doc.get("features", {})),
            target_features=dict(doc.get("target_features", {})),
        )


@dataclass
class SceneObject:
    name: str
    features: dict[str, str] = field(default_factory=dict)
    kind: str = "object"  # "object" | "text"


@dataclass
class WorldState:
    """Abstract stand-in for the image: named objects with bucketed features."""

    objects: list[SceneObject] = field(default_factory=list)
    edit_log: list[tuple[str, str]] = field(default_factory=list)

    def find(self, name: str) -> SceneObject | None:
        for obj in self.objects:
            if obj.name == name:
                return obj
        return None

    def copy(self) -> WorldState:
        return copy.deepcopy(self)

    def context_for(self, s: SubtaskInstance) -> dict[str, str]:
        """Features visible when executing `s`: the source object's features plus op features."""
        ctx: dict[str, str] = {}
        obj = self.find(s.source_object) if s.source_object else None
        if obj is not None:
            ctx.update(obj.features)
        ctx.update(s.op_features)
        return ctx

    def apply(self, s: SubtaskInstance, path: Iterable[str] = ()) -> WorldState:
        """Return a new state with the nominal effect of `s` applied."""
        new = self.copy()
        for tool in path:
            new.edit_log.append((tool, s.label))
        obj = new.find(s.source_object) if s.source_object else None
        if s.kind in REMOVAL_KINDS and obj is not None:
            new.objects.remove(obj)
        elif s.kind in REPLACEMENT_KINDS and obj is not None:
            obj.name = s.target_object
            obj.features = {**obj.features, **s.target_features}
        return new

    def to_doc(self) -> dict:
        return {
            "objects": [
                {"name": o.name, "kind": o.kind, "features": dict(sorted(o.features.items()))}
                for o in self.objects
            ],
            "edit_log": [list(e) for e in self.edit_log],
        }

    @classmethod
    def from_doc(cls, doc: Mapping | None) -> WorldState:
        if not doc:
            return cls()
        objs = [
            SceneObject(o["name"], dict(o.get("features", {})), o.get("kind", "object"))
            for o in doc.get("objects", [])
        ]
        return cls(objs, [tuple(e) for e in doc.get("edit_log", [])])


# --------------------------------------------------------------------------
# Knowledge tables
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    producer: str
    consumer: str
    # subtasks in whose context the edge is valid; None means every subtask
    subtasks: frozenset[str] | None = None

    def valid_for(self, kind: str) -> bool:
        return self.subtasks is None or kind in self.subtasks


@dataclass(frozen=True)
class ToolDependencyGraph:
    nodes: frozenset[str]
    edges: tuple[Edge, ...]

    def predecessors(self, tool: str, kind: str) -> list[str]:
        return sorted({e.producer for e in self.edges if e.consumer == tool and e.valid_for(kind)})

    def successors(self, tool: str, kind: str) -> list[str]:
        return sorted({e.consumer for e in self.edges if e.producer == tool and e.valid_for(kind)})

    def connected(self, a: str, b: str, kind: str) -> bool:
        return any(e.producer == a and e.consumer == b and e.valid_for(kind) for e in self.edges)

    def ancestors(self, tools: Iterable[str], kind: str) -> set[str]:
        """All tools that can feed (transitively) into `tools` for subtask `kind`, inclusive."""
        seen = set()
        stack = list(tools)
        while stack:
            t = stack.pop()
            if t in seen:
                continue
            seen.add(t)
            stack.extend(self.predecessors(t, kind))
        return seen


@dataclass(frozen=True)
class ToolRecord:
    supported_subtasks: frozenset[str]
    inputs: frozenset[str]
    outputs: frozenset[str]


@dataclass(frozen=True)
class ModelDescriptionTable:
    entries: Mapping[str, ToolRecord]

    def tools_for(self, kind: str) -> list[str]:
        return sorted(t for t, rec in self.entries.items() if kind in rec.supported_subtasks)

    def supports(self, tool: str, kind: str) -> bool:
        rec = self.entries.get(tool)
        return rec is not None and kind in rec.supported_subtasks


@dataclass(frozen=True)
class BenchRecord:
    cost: float
    quality: float


@dataclass(frozen=True)
class BenchmarkTable:
    entries: Mapping[tuple[str, str], BenchRecord]

    def get(self, tool: str, kind: str) -> BenchRecord:
        try:
            return self.entries[(tool, kind)]
        except KeyError:
            raise MissingBenchmarkEntry(f"no benchmark entry for ({tool}, {kind})") from None

    def scaled(self, k: float) -> BenchmarkTable:
        return BenchmarkTable({key: BenchRecord(r.cost * k, r.quality) for key, r in self.entries.items()})


def _check_version(doc: Mapping, what: str) -> None:
    if not isinstance(doc.get("version"), str):
        raise KnowledgeError(f"{what} document lacks a string 'version'")


def parse_tdg(doc: Mapping) -> ToolDependencyGraph:
    _check_version(doc, "tdg")
    nodes = frozenset(doc["nodes"])
    edges = []
    for raw in doc["edges"]:
        if isinstance(raw, Mapping):
            subs = raw.get("subtasks")
            edge = Edge(raw["from"], raw["to"], frozenset(subs) if subs is not None else None)
        else:
            producer, consumer = raw
            edge = Edge(producer, consumer)
        for end in (edge.producer, edge.consumer):
            if end not in nodes:
                raise DanglingToolReference(f"edge {edge.producer}->{edge.consumer} names unknown tool {end!r}")
        edges.append(edge)
    ts = TopologicalSorter({n: set() for n in nodes})
    for e in edges:
        ts.add(e.consumer, e.producer)
    try:
        ts.prepare()
    except CycleError as err:
        raise CyclicDependencyGraph(f"tool dependency graph has a cycle: {err.args[1]}") from None
    return ToolDependencyGraph(nodes, tuple(edges))


def parse_mdt(doc: Mapping) -> ModelDescriptionTable:
    _check_version(doc, "mdt")
    entries = {}
    for tool, rec in doc["tools"].items():
        entries[tool] = ToolRecord(
            frozenset(rec["supported_subtasks"]), frozenset(rec.get("inputs", [])), frozenset(rec.get("outputs", []))
        )
    return ModelDescriptionTable(entries)


def parse_bt(doc: Mapping) -> BenchmarkTable:
    _check_version(doc, "bt")
    entries = {}
    for row in doc["entries"]:
        cost, quality = float(row["cost"]), float(row["quality"])
        if not cost > 0:
            raise KnowledgeError(f"benchmark cost must be > 0: {row}")
        if not 0.0 <= quality <= 1.0:
            raise KnowledgeError(f"benchmark quality must lie in [0, 1]: {row}")
        key = (row["tool"], row["subtask"])
        if key in entries:
            raise KnowledgeError(f"duplicate benchmark entry {key}")
        entries[key] = BenchRecord(cost, quality)
    return BenchmarkTable(entries)


@dataclass(frozen=True)
class Knowledge:
    tdg: ToolDependencyGraph
    mdt: ModelDescriptionTable
    bt: BenchmarkTable
    features: FeatureDomains
    unsupported_subtasks: tuple[str, ...] = ()


def load_knowledge(tdg_doc: Mapping, mdt_doc: Mapping, bt_doc: Mapping, features: FeatureDomains | None = None):
    """Parse and cross-validate the three knowledge documents.

    Returns ``(tdg, mdt, bt)``. When ``features`` is given, subtask names are
    checked against its vocabulary as well.
    """
    tdg = parse_tdg(tdg_doc)
    mdt = parse_mdt(mdt_doc)
    bt = parse_bt(bt_doc)
    for tool in mdt.entries:
        if tool not in tdg.nodes:
            raise DanglingToolReference(f"MDT tool {tool!r} missing from the dependency graph")
    for tool, kind in bt.entries:
        if tool not in mdt.entries:
            raise DanglingToolReference(f"benchmark row names unknown tool {tool!r}")
    if features is not None:
        for rec in mdt.entries.values():
            for kind in rec.supported_subtasks:
                features.check_subtask(kind)
        for e in tdg.edges:
            for kind in e.subtasks or ():
                features.check_subtask(kind)
    # every (tool, subtask) pair reachable in some subgraph needs a benchmark row
    kinds = {k for rec in mdt.entries.values() for k in rec.supported_subtasks}
    for kind in sorted(kinds):
        for tool in sorted(tdg.ancestors(mdt.tools_for(kind), kind)):
            bt.get(tool, kind)
    return tdg, mdt, bt


def _read(path: Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_knowledge_dir(directory: str | Path = DATA_DIR) -> Knowledge:
    directory = Path(directory)
    features = FeatureDomains.from_doc(_read(directory / "features.json"))
    tdg, mdt, bt = load_knowledge(
        _read(directory / "tdg.json"), _read(directory / "mdt.json"), _read(directory / "bt.json"), features
    )
    unsupported = tuple(k for k in features.subtasks if not mdt.tools_for(k))
    for kind in unsupported:
        log.warning("subtask %r has no supporting tool", kind)
    return Knowledge(tdg, mdt, bt, features, unsupported)


def dump_tdg(tdg: ToolDependencyGraph) -> dict:
    edges = []
    for e in sorted(tdg.edges, key=lambda e: (e.producer, e.consumer, sorted(e.subtasks or ()))):
        if e.subtasks is None:
            edges.append([e.producer, e.consumer])
        else:
            edges.append({"from": e.producer, "to": e.consumer, "subtasks": sorted(e.subtasks)})
    return {"version": SCHEMA_VERSION, "nodes": sorted(tdg.nodes), "edges": edges}


def dump_mdt(mdt: ModelDescriptionTable) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "tools": {
            t: {
                "supported_subtasks": sorted(r.supported_subtasks),
                "inputs": sorted(r.inputs),
                "outputs": sorted(r.outputs),
            }
            for t, r in sorted(mdt.entries.items())
        },
    }


def dump_bt(bt: BenchmarkTable) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "entries": [
            {"tool": t, "subtask": s, "cost": r.cost, "quality": r.quality}
            for (t, s), r in sorted(bt.entries.items())
        ],
    }

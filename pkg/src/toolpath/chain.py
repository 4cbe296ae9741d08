"""Subtask chains: structured decomposition of a task into an ordered, linear list of subtasks."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Protocol

from .domain import FeatureDomains, SubtaskInstance, WorldState


class UnresolvableOrdering(ValueError):
    pass


class TaskFormatError(ValueError):
    pass


@dataclass
class TaskSpec:
    structured_ops: list[SubtaskInstance]
    initial_state: WorldState = field(default_factory=WorldState)
    prompt: str = ""
    task_id: str = "task"

    def __post_init__(self):
        if not self.structured_ops:
            raise TaskFormatError("a task needs at least one op")

    def to_doc(self) -> dict:
        return {
            "version": "1",
            "task_id": self.task_id,
            "prompt": self.prompt,
            "ops": [op.to_doc() for op in self.structured_ops],
            "state": self.initial_state.to_doc(),
        }

    @classmethod
    def from_doc(cls, doc: Mapping, features: FeatureDomains | None = None, task_id: str | None = None) -> TaskSpec:
        try:
            ops = [SubtaskInstance.from_doc(op, ordinal=i + 1) for i, op in enumerate(doc["ops"])]
            state = WorldState.from_doc(doc.get("state"))
        except (KeyError, TypeError, ValueError) as err:
            raise TaskFormatError(f"malformed task document: {err}") from err
        if features is not None:
            for op in ops:
                features.check_subtask(op.kind)
                features.validate(op.op_features)
                features.validate(op.target_features)
            for obj in state.objects:
                features.validate(obj.features)
        return cls(ops, state, doc.get("prompt", ""), task_id or doc.get("task_id", "task"))


@dataclass(frozen=True)
class SubtaskChain:
    entries: tuple[SubtaskInstance, ...]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def parent(self, i: int) -> SubtaskInstance | None:
        return self.entries[i - 1] if i > 0 else None

    def to_doc(self, prompt: str = "") -> dict:
        """JSON in the {"subtask", "parent"} node layout used by chain-generating prompts."""
        nodes = []
        for i, s in enumerate(self.entries):
            nodes.append({"subtask": s.label, "parent": [self.entries[i - 1].label] if i else []})
        return {"task": prompt, "subtask_chain": nodes}


class ChainPlannerAdapter(Protocol):
    def propose_chain(self, spec: TaskSpec) -> SubtaskChain: ...


def _renumber(ops) -> tuple[SubtaskInstance, ...]:
    return tuple(op.with_ordinal(i + 1) for i, op in enumerate(ops))


def propose_chain_structured(spec: TaskSpec) -> SubtaskChain:
    """Order ops so that an op acting on an object comes after the op that creates it.

    Stable topological sort: among ready ops the earliest in input order goes first.
    """
    ops = list(spec.structured_ops)
    n = len(ops)
    deps: list[set[int]] = [set() for _ in range(n)]
    for i, consumer in enumerate(ops):
        if not consumer.source_object:
            continue
        for j, producer in enumerate(ops):
            if i != j and producer.target_object and producer.target_object == consumer.source_object:
                deps[i].add(j)
    order: list[int] = []
    placed: set[int] = set()
    while len(order) < n:
        ready = [i for i in range(n) if i not in placed and deps[i] <= placed]
        if not ready:
            stuck = [ops[i].label for i in range(n) if i not in placed]
            raise UnresolvableOrdering(f"circular object dependency among {stuck}")
        order.append(ready[0])
        placed.add(ready[0])
    return SubtaskChain(_renumber(ops[i] for i in order))


class StructuredChainPlanner:
    def propose_chain(self, spec: TaskSpec) -> SubtaskChain:
        return propose_chain_structured(spec)


@dataclass
class ChainReport:
    linear: bool = True
    consecutive: bool = True
    dependencies_ok: bool = True
    coverage_ok: bool = True
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.linear and self.consecutive and self.dependencies_ok and self.coverage_ok


def _op_key(s: SubtaskInstance):
    return (s.kind, s.source_object, s.target_object)


def validate_chain(chain: SubtaskChain | list, spec: TaskSpec, parents: list | None = None) -> ChainReport:
    """Check linearity, ordinal numbering, object dependencies and op coverage.

    ``parents`` optionally gives each entry's parent list (as read from a chain
    document); when omitted the chain is linear by construction.
    """
    entries = list(chain.entries if isinstance(chain, SubtaskChain) else chain)
    report = ChainReport()
    if parents is not None:
        for i, ps in enumerate(parents):
            want = [entries[i - 1].label] if i else []
            if list(ps) != want:
                report.linear = False
                report.problems.append(f"entry {i + 1} has parents {ps}, expected {want}")
    ordinals = [s.ordinal for s in entries]
    if ordinals != list(range(1, len(entries) + 1)):
        report.consecutive = False
        report.problems.append(f"ordinals {ordinals} are not 1..{len(entries)}")
    for i, consumer in enumerate(entries):
        for producer in entries[i + 1:]:
            if consumer.source_object and producer.target_object == consumer.source_object:
                report.dependencies_ok = False
                report.problems.append(f"{consumer.label} reads an object created later by {producer.label}")
    wanted = sorted(_op_key(op) for op in spec.structured_ops)
    got = sorted(_op_key(s) for s in entries)
    if wanted != got:
        report.coverage_ok = False
        missing = [k for k in wanted if k not in got]
        extra = [k for k in got if k not in wanted]
        report.problems.append(f"coverage mismatch: missing {missing}, unexpected {extra}")
    return report

"""Subroutine rule table: activation predicates, fast-plan scoring and selection."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace

from .astar import score
from .chain import SubtaskChain
from .domain import (
    FeatureDomains,
    SubtaskInstance,
    ToolDependencyGraph,
    WorldState,
    check_alpha,
)

log = logging.getLogger(__name__)

OPS = ("equals", "not_equals", "in_set", "not_in_set")


class UnknownEntry(KeyError):
    pass


class RuleFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Predicate:
    feature: str
    op: str
    operands: frozenset[str]

    def __post_init__(self):
        if self.op not in OPS:
            raise RuleFormatError(f"unknown predicate op {self.op!r}")
        if not self.operands:
            raise RuleFormatError("predicate needs at least one operand")
        if self.op in ("equals", "not_equals") and len(self.operands) != 1:
            raise RuleFormatError(f"{self.op} takes exactly one operand")

    def holds(self, value: str) -> bool:
        if self.op in ("equals", "in_set"):
            return value in self.operands
        return value not in self.operands

    def allowed(self, domain: Iterable[str]) -> frozenset[str]:
        return frozenset(v for v in domain if self.holds(v))

    def to_doc(self) -> dict:
        return {"feature": self.feature, "op": self.op, "operands": sorted(self.operands)}

    @classmethod
    def from_doc(cls, doc: Mapping) -> Predicate:
        ops = doc["operands"]
        if isinstance(ops, str):
            ops = [ops]
        return cls(doc["feature"], doc["op"], frozenset(ops))

    def __str__(self):
        sym = {"equals": "=", "not_equals": "!=", "in_set": "in", "not_in_set": "not in"}[self.op]
        vals = next(iter(self.operands)) if len(self.operands) == 1 else "{" + ", ".join(sorted(self.operands)) + "}"
        return f"{self.feature} {sym} {vals}"


@dataclass(frozen=True)
class ActivationRule:
    predicates: tuple[Predicate, ...] = ()

    def canonical(self, domains: FeatureDomains) -> dict[str, frozenset[str]]:
        """Allowed-value sets per feature; equal canonical forms mean equivalent rules."""
        out: dict[str, frozenset[str]] = {}
        for p in self.predicates:
            allowed = p.allowed(domains.domains[p.feature])
            out[p.feature] = out.get(p.feature, allowed) & allowed
        return out

    def validate(self, domains: FeatureDomains) -> None:
        for p in self.predicates:
            for v in p.operands:
                domains.check_value(p.feature, v)

    def to_doc(self) -> dict:
        return {"predicates": [p.to_doc() for p in self.predicates]}

    @classmethod
    def from_doc(cls, doc: Mapping) -> ActivationRule:
        return cls(tuple(Predicate.from_doc(p) for p in doc.get("predicates", [])))

    def __str__(self):
        return " AND ".join(str(p) for p in self.predicates) or "(always)"


@dataclass(frozen=True)
class Subroutine:
    id: str
    tools: tuple[str, ...]
    subtask_kind: str

    def __post_init__(self):
        if not self.tools:
            raise RuleFormatError(f"subroutine {self.id} has no tools")

    def check_connected(self, tdg: ToolDependencyGraph) -> None:
        for a, b in zip(self.tools, self.tools[1:]):
            if not tdg.connected(a, b, self.subtask_kind):
                raise RuleFormatError(f"{self.id}: {a} -> {b} is not a dependency edge for {self.subtask_kind}")


@dataclass(frozen=True)
class RuleEntry:
    subroutine: Subroutine
    rule: ActivationRule
    avg_cost: float
    avg_quality: float
    usage_count: int = 0
    note: str = ""

    def __post_init__(self):
        if self.usage_count < 0:
            raise RuleFormatError("usage_count must be non-negative")
        if self.usage_count > 0 and not self.avg_cost > 0:
            raise RuleFormatError(f"{self.id}: avg_cost must be positive once used")
        if not 0.0 <= self.avg_quality <= 1.0:
            raise RuleFormatError(f"{self.id}: avg_quality outside [0, 1]")

    @property
    def id(self) -> str:
        return self.subroutine.id

    @property
    def kind(self) -> str:
        return self.subroutine.subtask_kind

    def to_doc(self) -> dict:
        doc = {
            "id": self.id,
            "subtask": self.kind,
            "tools": list(self.subroutine.tools),
            "rule": self.rule.to_doc(),
            "avg_cost": self.avg_cost,
            "avg_quality": self.avg_quality,
            "usage_count": self.usage_count,
        }
        if self.note:
            doc["note"] = self.note
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping) -> RuleEntry:
        return cls(
            Subroutine(doc["id"], tuple(doc["tools"]), doc["subtask"]),
            ActivationRule.from_doc(doc.get("rule", {})),
            float(doc["avg_cost"]),
            float(doc["avg_quality"]),
            int(doc.get("usage_count", 0)),
            doc.get("note", ""),
        )


@dataclass(frozen=True)
class RuleTable:
    entries: tuple[RuleEntry, ...] = ()
    version: int = 1

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise RuleFormatError(f"duplicate rule ids in {ids}")

    def get(self, entry_id: str) -> RuleEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise UnknownEntry(entry_id)

    def for_kind(self, kind: str) -> list[RuleEntry]:
        return [e for e in self.entries if e.kind == kind]

    def find_path(self, kind: str, tools: Iterable[str]) -> RuleEntry | None:
        tools = tuple(tools)
        for e in self.entries:
            if e.kind == kind and e.subroutine.tools == tools:
                return e
        return None

    def with_entry(self, entry: RuleEntry) -> RuleTable:
        """Insert or replace ``entry`` and bump the version."""
        out = [e for e in self.entries if e.id != entry.id]
        pos = next((i for i, e in enumerate(self.entries) if e.id == entry.id), len(out))
        out.insert(pos, entry)
        return RuleTable(tuple(out), self.version + 1)

    def with_stats(self, entry: RuleEntry) -> RuleTable:
        """Replace the statistics of an existing entry; the version tracks rule changes only."""
        self.get(entry.id)
        return RuleTable(tuple(entry if e.id == entry.id else e for e in self.entries), self.version)

    def validate(self, domains: FeatureDomains, tdg: ToolDependencyGraph | None = None) -> None:
        for e in self.entries:
            domains.check_subtask(e.kind)
            e.rule.validate(domains)
            if tdg is not None:
                for t in e.subroutine.tools:
                    if t not in tdg.nodes:
                        raise RuleFormatError(f"{e.id} names unknown tool {t!r}")
                e.subroutine.check_connected(tdg)

    def to_doc(self) -> dict:
        return {"version": str(self.version), "entries": [e.to_doc() for e in self.entries]}

    @classmethod
    def from_doc(cls, doc: Mapping) -> RuleTable:
        if "version" not in doc:
            raise RuleFormatError("rules document lacks 'version'")
        rows = doc["entries"] if isinstance(doc, Mapping) else doc
        return cls(tuple(RuleEntry.from_doc(r) for r in rows), int(doc["version"]))


def rule_satisfied(rule: ActivationRule, ctx: Mapping[str, str]) -> bool:
    for p in rule.predicates:
        if p.feature not in ctx:
            log.debug("feature %s missing from context; rule treated as unsatisfied", p.feature)
            return False
        if not p.holds(ctx[p.feature]):
            return False
    return True


def fast_plan_score(entry: RuleEntry, alpha: float) -> float:
    return score(entry.avg_cost, entry.avg_quality, check_alpha(alpha))


def candidates(s: SubtaskInstance, ctx: Mapping[str, str], table: RuleTable, alpha: float) -> list[RuleEntry]:
    """Entries for ``s`` whose rule fires, best first."""
    fired = [e for e in table.for_kind(s.kind) if rule_satisfied(e.rule, ctx)]
    return sorted(fired, key=lambda e: (fast_plan_score(e, alpha), e.id))


def select_entry(s, ctx, table, alpha) -> RuleEntry | None:
    fired = candidates(s, ctx, table, alpha)
    return fired[0] if fired else None


def select_subroutine(s: SubtaskInstance, ctx: Mapping[str, str], table: RuleTable, alpha: float) -> Subroutine | None:
    entry = select_entry(s, ctx, table, alpha)
    return entry.subroutine if entry else None


@dataclass(frozen=True)
class FastPlan:
    assignments: tuple[tuple[SubtaskInstance, Subroutine | None], ...]
    contexts: tuple[dict, ...] = field(default=(), compare=False)

    @property
    def ids(self) -> list[str | None]:
        return [sr.id if sr else None for _, sr in self.assignments]

    def to_doc(self) -> dict:
        return {
            "assignments": [
                {"subtask": s.label, "subroutine": sr.id if sr else None, "tools": list(sr.tools) if sr else []}
                for s, sr in self.assignments
            ]
        }


def build_fast_plan(chain: SubtaskChain, state: WorldState, table: RuleTable, alpha: float,
                    live_context: bool = True) -> FastPlan:
    """Select a subroutine per chain entry.

    With ``live_context`` each entry's context is read after applying the
    nominal effects of the preceding entries; otherwise every context comes
    from the initial state.
    """
    cur = state
    out, ctxs = [], []
    for s in chain.entries:
        ctx = (cur if live_context else state).context_for(s)
        out.append((s, select_subroutine(s, ctx, table, alpha)))
        ctxs.append(ctx)
        cur = cur.apply(s)
    return FastPlan(tuple(out), tuple(ctxs))


def update_entry_stats(table: RuleTable, entry_id: str, observed_cost: float, observed_quality: float) -> RuleTable:
    e = table.get(entry_id)
    n = e.usage_count
    cost = (e.avg_cost * n + observed_cost) / (n + 1)
    quality = (e.avg_quality * n + observed_quality) / (n + 1)
    return table.with_stats(replace(e, avg_cost=cost, avg_quality=quality, usage_count=n + 1))

"""Seeded simulation of tools, quality checks and task batteries."""

from __future__ import annotations

import json
import random
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from .astar import ToolRun
from .chain import TaskFormatError, TaskSpec
from .domain import (
    DATA_DIR,
    RECOLOR_KINDS,
    REPLACEMENT_KINDS,
    Knowledge,
    SceneObject,
    SubtaskInstance,
    WorldState,
)
from .rules import ActivationRule, rule_satisfied
from .subgraph import build_low_level_subgraph

TEXT_KINDS = {"Text Removal", "Text Replacement", "Text Detection", "Text Extraction", "Text Redaction",
              "Keyword Highlighting", "Sentiment Analysis", "Question Answering based on text"}
# kinds that act on the whole image rather than on a named object
IMAGE_KINDS = {"Image Upscaling", "Image Captioning", "Depth Estimation", "Image Deblurring", "Outpainting",
               "Changing Scenery", "Background Removal", "Caption Consistency Check", "Landmark Detection",
               "Object Addition", "Text Addition"}


class MissingProfile(KeyError):
    pass


@dataclass(frozen=True)
class Degradation:
    condition: ActivationRule
    quality_override: float | None = None
    cost_multiplier: float = 1.0

    def to_doc(self) -> dict:
        doc = {"condition": self.condition.to_doc()}
        if self.quality_override is not None:
            doc["quality_override"] = self.quality_override
        if self.cost_multiplier != 1.0:
            doc["cost_multiplier"] = self.cost_multiplier
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping) -> Degradation:
        return cls(
            ActivationRule.from_doc(doc["condition"]),
            doc.get("quality_override"),
            float(doc.get("cost_multiplier", 1.0)),
        )


@dataclass(frozen=True)
class SimToolProfile:
    tool: str
    subtask_kind: str
    base_cost: float
    base_quality: float
    degradations: tuple[Degradation, ...] = ()
    noise_sigma: float = 0.0

    def nominal(self, ctx: Mapping[str, str]) -> tuple[float, float]:
        """Noise-free (cost, quality) in context ``ctx``; the first matching degradation wins."""
        for d in self.degradations:
            if rule_satisfied(d.condition, ctx):
                q = self.base_quality if d.quality_override is None else d.quality_override
                return self.base_cost * d.cost_multiplier, q
        return self.base_cost, self.base_quality

    def to_doc(self) -> dict:
        doc = {
            "tool": self.tool,
            "subtask": self.subtask_kind,
            "base_cost": self.base_cost,
            "base_quality": self.base_quality,
            "degradations": [d.to_doc() for d in self.degradations],
        }
        if self.noise_sigma:
            doc["noise_sigma"] = self.noise_sigma
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping) -> SimToolProfile:
        return cls(
            doc["tool"],
            doc["subtask"],
            float(doc["base_cost"]),
            float(doc["base_quality"]),
            tuple(Degradation.from_doc(d) for d in doc.get("degradations", [])),
            float(doc.get("noise_sigma", 0.0)),
        )


@dataclass(frozen=True)
class SimEnvironment:
    profiles: Mapping[tuple[str, str], SimToolProfile]
    rng_seed: int = 0
    sampler: Mapping = field(default_factory=dict, hash=False)
    name: str = "sim"

    def profile(self, tool: str, kind: str) -> SimToolProfile:
        try:
            return self.profiles[(tool, kind)]
        except KeyError:
            raise MissingProfile(f"no simulation profile for ({tool}, {kind})") from None

    def with_noise(self, sigma: float) -> SimEnvironment:
        profiles = {
            k: SimToolProfile(p.tool, p.subtask_kind, p.base_cost, p.base_quality, p.degradations, sigma)
            for k, p in self.profiles.items()
        }
        return SimEnvironment(profiles, self.rng_seed, self.sampler, self.name)

    def deterministic(self) -> SimEnvironment:
        """Same tools at their base cost and quality: no noise, no degradations."""
        profiles = {
            k: SimToolProfile(p.tool, p.subtask_kind, p.base_cost, p.base_quality, (), 0.0)
            for k, p in self.profiles.items()
        }
        return SimEnvironment(profiles, self.rng_seed, self.sampler, self.name + "-deterministic")

    def to_doc(self) -> dict:
        return {
            "version": "1",
            "name": self.name,
            "seed": self.rng_seed,
            "profiles": [p.to_doc() for _, p in sorted(self.profiles.items())],
            "sampler": self.sampler,
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> SimEnvironment:
        profiles = {}
        for row in doc["profiles"]:
            p = SimToolProfile.from_doc(row)
            profiles[(p.tool, p.subtask_kind)] = p
        return cls(profiles, int(doc.get("seed", 0)), doc.get("sampler", {}), doc.get("name", "sim"))


def load_sim(path: str | Path | None = None) -> SimEnvironment:
    path = Path(path) if path else DATA_DIR / "sim.json"
    with open(path, encoding="utf-8") as fh:
        return SimEnvironment.from_doc(json.load(fh))


def effect_of(s: SubtaskInstance) -> dict:
    if s.kind in REPLACEMENT_KINDS:
        return {"effect": "replace", "object": s.source_object, "becomes": s.target_object}
    if s.kind in RECOLOR_KINDS:
        return {"effect": "recolor", "object": s.source_object}
    if "Removal" in s.kind:
        return {"effect": "remove", "object": s.source_object}
    return {"effect": "none"}


def simulate_tool(env: SimEnvironment, tool: str, s: SubtaskInstance, ctx: Mapping[str, str],
                  rng: random.Random | None = None) -> ToolRun:
    prof = env.profile(tool, s.kind)
    cost, quality = prof.nominal(ctx)
    if prof.noise_sigma > 0:
        rng = rng or random.Random(env.rng_seed)
        cost *= max(0.1, 1.0 + rng.gauss(0.0, prof.noise_sigma))
        quality += rng.gauss(0.0, prof.noise_sigma)
    quality = min(1.0, max(0.0, quality))
    return ToolRun(cost, quality, dict(ctx), effect_of(s))


def simulate_vlm_check(run: ToolRun, s: SubtaskInstance | None = None, tool: str | None = None) -> float:
    """The simulated checker reports the simulated quality unchanged."""
    return run.quality


class SimExecutor:
    def __init__(self, env: SimEnvironment, rng: random.Random | None = None):
        self.env = env
        self.rng = rng or random.Random(env.rng_seed)

    def run(self, tool, subtask, state):
        return simulate_tool(self.env, tool, subtask, state.context_for(subtask), self.rng)


class SimVLM:
    def check(self, run, subtask, tool):
        return simulate_vlm_check(run, subtask, tool)


def task_rng(seed: int, task_id: str) -> random.Random:
    return random.Random(f"{seed}/{task_id}")


# --------------------------------------------------------------------------
# closed-form oracle
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PathOutcome:
    tools: tuple[str, ...]
    costs: tuple[float, ...]
    qualities: tuple[float, ...]

    @property
    def cost(self) -> float:
        return sum(self.costs)

    @property
    def quality_product(self) -> float:
        out = 1.0
        for q in self.qualities:
            out *= q
        return out

    @property
    def mean_quality(self) -> float:
        return sum(self.qualities) / len(self.qualities)

    def passes(self, q_thresh: float) -> bool:
        return all(q >= q_thresh for q in self.qualities)


class Oracle:
    """Noise-free path outcomes computed directly from the profiles."""

    def __init__(self, env: SimEnvironment, knowledge: Knowledge):
        self.env = env
        self.knowledge = knowledge
        self._paths = lru_cache(maxsize=None)(self._tool_paths)

    def _tool_paths(self, kind: str) -> tuple[tuple[str, ...], ...]:
        g = build_low_level_subgraph(SubtaskInstance(kind, "x", "y" if kind in REPLACEMENT_KINDS | RECOLOR_KINDS else ""),
                                     self.knowledge.mdt, self.knowledge.tdg)
        return tuple(tuple(g.nodes[n].tool for n in p) for p in g.complete_paths())

    def tool_paths(self, kind: str):
        return self._paths(kind)

    def outcomes(self, kind: str, ctx: Mapping[str, str]) -> list[PathOutcome]:
        out = []
        for tools in self.tool_paths(kind):
            cq = [self.env.profile(t, kind).nominal(ctx) for t in tools]
            out.append(PathOutcome(tools, tuple(c for c, _ in cq), tuple(min(1.0, max(0.0, q)) for _, q in cq)))
        return out

    def is_solvable(self, kind: str, ctx: Mapping[str, str], q_thresh: float = 0.8) -> bool:
        return any(o.passes(q_thresh) for o in self.outcomes(kind, ctx))


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------


def _draw(spec: Mapping, rng: random.Random, drawn: Mapping[str, str]) -> str:
    if "given" in spec:
        weights = spec["table"][drawn[spec["given"]]]
    else:
        weights = spec["weights"]
    values = list(weights)
    return rng.choices(values, [weights[v] for v in values])[0]


def _draw_features(specs: Mapping, rng: random.Random, preset: Mapping[str, str] | None = None) -> dict[str, str]:
    out = dict(preset or {})
    for name, spec in specs.items():
        if name not in out:
            out[name] = _draw(spec, rng, out)
    return out


class TaskSampler:
    """Draws scenes and edit requests from the distribution declared in a sim document."""

    def __init__(self, env: SimEnvironment, knowledge: Knowledge, q_thresh: float = 0.8):
        self.env = env
        self.cfg = env.sampler
        self.knowledge = knowledge
        self.oracle = Oracle(env, knowledge)
        self.q_thresh = q_thresh

    # scenes -------------------------------------------------------------
    def sample_object(self, rng: random.Random, taken: set[str]) -> SceneObject:
        pool = [row for row in self.cfg["object_names"] if row[0] not in taken]
        name, yolo = rng.choice(pool)
        feats = _draw_features(self.cfg["object_features"], rng, {"yolo_class_support": yolo})
        return SceneObject(name, feats, "object")

    def sample_text(self, rng: random.Random, taken: set[str]) -> SceneObject:
        pool = [w for w in self.cfg["text_words"] if f'text "{w}"' not in taken]
        word = rng.choice(pool)
        return SceneObject(f'text "{word}"', _draw_features(self.cfg["text_features"], rng), "text")

    def sample_state(self, rng: random.Random, n_objects: int | None = None, n_texts: int | None = None) -> WorldState:
        lo, hi = self.cfg["objects_range"]
        n_objects = rng.randint(lo, hi) if n_objects is None else n_objects
        lo, hi = self.cfg["texts_range"]
        n_texts = rng.randint(lo, hi) if n_texts is None else n_texts
        objs: list[SceneObject] = []
        taken: set[str] = set()
        for _ in range(n_objects):
            o = self.sample_object(rng, taken)
            taken.add(o.name)
            objs.append(o)
        for _ in range(n_texts):
            o = self.sample_text(rng, taken)
            taken.add(o.name)
            objs.append(o)
        return WorldState(objs)

    # ops ------------------------------------------------------------------
    def _make_op(self, kind: str, obj: SceneObject | None, state: WorldState, rng: random.Random,
                 exclude: set[str] = frozenset()) -> SubtaskInstance:
        specs = self.cfg.get("op_features", {}).get(kind, {})
        feats = _draw_features(specs, rng)
        source = obj.name if obj else ""
        target, target_features = "", {}
        if kind == "Object Replacement":
            names = {o.name for o in state.objects} | set(exclude)
            pool = [row for row in self.cfg["object_names"] if row[0] != source and row[0] not in names]
            tname, tyolo = rng.choice(pool)
            target, target_features = tname, {"yolo_class_support": tyolo}
        elif kind == "Object Recoloration":
            target = f"{rng.choice(self.cfg['colors'])} {source}"
        elif kind == "Text Replacement":
            names = {o.name for o in state.objects} | set(exclude)
            pool = [w for w in self.cfg["text_words"] if f'text "{w}"' not in names]
            target = f'text "{rng.choice(pool)}"'
        return SubtaskInstance(kind, source, target, 1, feats, target_features)

    def _candidates(self, kind: str, state: WorldState, used: set[str]) -> list[SceneObject | None]:
        if kind in IMAGE_KINDS:
            return [None]
        want = "text" if kind in TEXT_KINDS else "object"
        return [o for o in state.objects if o.kind == want and o.name not in used]

    def sample_op(self, kind: str, state: WorldState, rng: random.Random, used: set[str],
                  attempts: int = 12, exclude: set[str] = frozenset()) -> SubtaskInstance | None:
        for _ in range(attempts):
            objs = self._candidates(kind, state, used)
            if not objs:
                return None
            op = self._make_op(kind, rng.choice(objs), state, rng, exclude)
            if self.oracle.is_solvable(kind, state.context_for(op), self.q_thresh):
                return op
        return None

    def sample_task(self, rng: random.Random, task_id: str, n_ops: int | None = None,
                    kinds: Mapping[str, float] | None = None, state: WorldState | None = None) -> TaskSpec:
        kinds = dict(kinds or self.cfg["kind_weights"])
        if n_ops is None:
            lo, hi = self.cfg["ops_range"]
            n_ops = rng.randint(lo, hi)
        if state is None:
            state = self.sample_state(rng, n_objects=max(n_ops, rng.randint(*self.cfg["objects_range"])))
        initial = state.copy()
        ops: list[SubtaskInstance] = []
        used: set[str] = set()
        # names ever present in this task; replacement targets must be fresh
        seen = {o.name for o in state.objects}
        cur = state
        names = list(kinds)
        for _ in range(n_ops * 4):
            if len(ops) >= n_ops:
                break
            kind = rng.choices(names, [kinds[k] for k in names])[0]
            op = self.sample_op(kind, cur, rng, used, exclude=seen)
            if op is None:
                continue
            op = op.with_ordinal(len(ops) + 1)
            ops.append(op)
            if op.source_object:
                used.add(op.source_object)
            if op.target_object:
                seen.add(op.target_object)
            cur = cur.apply(op)
        if not ops:
            # fall back to any solvable op so that tasks are never empty
            for kind in names:
                op = self.sample_op(kind, cur, rng, set(), attempts=50)
                if op is not None:
                    ops.append(op)
                    break
        prompt = "; ".join(op.label for op in ops)
        return TaskSpec(ops, initial, prompt, task_id)


def build_reference_battery(seed: int, env: SimEnvironment, knowledge: Knowledge, n: int = 120,
                            q_thresh: float = 0.8, prefix: str = "ref") -> list[TaskSpec]:
    sampler = TaskSampler(env, knowledge, q_thresh)
    return [sampler.sample_task(task_rng(seed, f"{prefix}-{i:03d}"), f"{prefix}-{i:03d}") for i in range(n)]


def generate_test_dataset(kind: str, base_states: Sequence[WorldState], n: int, seed: int, env: SimEnvironment,
                          knowledge: Knowledge, q_thresh: float = 0.8, max_ops: int = 7,
                          max_redraws: int = 100) -> list[TaskSpec]:
    """``n`` tasks whose ops are all of ``kind``, each on a sampled base state with 1..max_ops ops."""
    if not base_states:
        raise ValueError("need at least one base state")
    sampler = TaskSampler(env, knowledge, q_thresh)
    rng = random.Random(f"{seed}/dataset/{kind}")
    out = []
    for i in range(n):
        want = rng.randint(1, max_ops)
        for _ in range(max_redraws):
            state = rng.choice(list(base_states)).copy()
            try:
                task = sampler.sample_task(rng, f"{kind}-{seed}-{i:03d}", n_ops=want, kinds={kind: 1.0}, state=state)
            except TaskFormatError:
                # no solvable op of this kind on that scene; draw another one
                continue
            out.append(task)
            break
        else:
            raise ValueError(f"no base state admits a solvable {kind!r} op after {max_redraws} draws")
    return out


def write_battery(tasks: Sequence[TaskSpec], directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, t in enumerate(tasks):
        p = directory / f"{i:03d}-task.json"
        p.write_text(json.dumps(t.to_doc(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        paths.append(p)
    return paths

import copy
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from toolpath.domain import (
    DATA_DIR,
    CyclicDependencyGraph,
    DanglingToolReference,
    FeatureDomains,
    KnowledgeError,
    MissingBenchmarkEntry,
    SceneObject,
    SubtaskInstance,
    UnknownFeature,
    UnknownSubtask,
    WorldState,
    check_alpha,
    dump_bt,
    dump_mdt,
    dump_tdg,
    load_knowledge,
    parse_bt,
    parse_tdg,
)


def docs():
    return tuple(json.loads((DATA_DIR / f"{n}.json").read_text()) for n in ("tdg", "mdt", "bt"))


def test_fixture_loads_three_tables(knowledge):
    assert len(knowledge.mdt.entries) == 24
    assert knowledge.tdg.nodes == frozenset(knowledge.mdt.entries)
    assert knowledge.bt.get("SD_SearchRecolor", "Object Recoloration").cost == 12.92


def test_tables_round_trip(knowledge):
    tdg, mdt, bt = load_knowledge(dump_tdg(knowledge.tdg), dump_mdt(knowledge.mdt), dump_bt(knowledge.bt))
    assert tdg.nodes == knowledge.tdg.nodes
    assert set(tdg.edges) == set(knowledge.tdg.edges)
    assert mdt == knowledge.mdt
    assert bt == knowledge.bt


def test_dangling_edge_rejected():
    tdg, mdt, bt = docs()
    tdg = copy.deepcopy(tdg)
    tdg["edges"].append(["YOLO", "Foo"])
    with pytest.raises(DanglingToolReference):
        load_knowledge(tdg, mdt, bt)


def test_cycle_rejected():
    doc = {"version": "1", "nodes": ["a", "b"], "edges": [["a", "b"], ["b", "a"]]}
    with pytest.raises(CyclicDependencyGraph):
        parse_tdg(doc)


@pytest.mark.parametrize("cost,quality", [(10.0, 1.3), (10.0, -0.1), (0.0, 0.9)])
def test_benchmark_ranges(cost, quality):
    doc = {"version": "1", "entries": [{"tool": "a", "subtask": "s", "cost": cost, "quality": quality}]}
    with pytest.raises(KnowledgeError):
        parse_bt(doc)


def test_missing_benchmark_row_detected():
    tdg, mdt, bt = docs()
    bt = copy.deepcopy(bt)
    bt["entries"] = [r for r in bt["entries"] if not (r["tool"] == "SAM" and r["subtask"] == "Object Removal")]
    with pytest.raises(MissingBenchmarkEntry):
        load_knowledge(tdg, mdt, bt)


def test_version_required():
    tdg, mdt, bt = docs()
    del tdg["version"]
    with pytest.raises(KnowledgeError):
        load_knowledge(tdg, mdt, bt)


def test_feature_validation(knowledge):
    f = knowledge.features
    assert f.validate({"object_size": "tiny"}) == {"object_size": "tiny"}
    with pytest.raises(UnknownFeature):
        f.validate({"object_size": "gigantic"})
    with pytest.raises(UnknownFeature):
        f.validate({"smell": "bad"})
    with pytest.raises(UnknownSubtask):
        f.check_subtask("Teleport")


def test_feature_domains_need_distinct_buckets():
    with pytest.raises(KnowledgeError):
        FeatureDomains.from_doc({"version": "1", "subtasks": [], "features": {"x": ["a", "a"]}})


@pytest.mark.parametrize("alpha", [-0.1, 2.5])
def test_alpha_range(alpha):
    with pytest.raises(ValueError):
        check_alpha(alpha)


def test_subtask_label_and_targets():
    s = SubtaskInstance("Object Recoloration", "board", "pink board", 2)
    assert s.label == "Object Recoloration (board -> pink board)(2)"
    with pytest.raises(ValueError):
        SubtaskInstance("Object Replacement", "cat")
    with pytest.raises(ValueError):
        SubtaskInstance("Object Removal", "cat", "dog")
    with pytest.raises(ValueError):
        SubtaskInstance("Object Removal", "cat", ordinal=0)


def test_state_effects():
    s0 = WorldState([SceneObject("cat", {"object_size": "small"}), SceneObject("dog", {"object_size": "large"})])
    removed = s0.apply(SubtaskInstance("Object Removal", "cat"), ["YOLO", "SAM", "SD_Erase"])
    assert removed.find("cat") is None and s0.find("cat") is not None
    assert removed.edit_log[-1] == ("SD_Erase", "Object Removal (cat)(1)")
    replaced = s0.apply(SubtaskInstance("Object Replacement", "dog", "horse",
                                        target_features={"yolo_class_support": "supported"}))
    horse = replaced.find("horse")
    assert horse.features == {"object_size": "large", "yolo_class_support": "supported"}


def test_context_merges_op_features():
    s = WorldState([SceneObject("board", {"object_size": "medium"})])
    op = SubtaskInstance("Object Recoloration", "board", "pink board", op_features={"color_transition": "mild"})
    assert s.context_for(op) == {"object_size": "medium", "color_transition": "mild"}
    assert s.context_for(SubtaskInstance("Object Removal", "ghost")) == {}


names = st.text("abcdefgh ", min_size=1, max_size=8)
feature_maps = st.dictionaries(st.sampled_from(["object_size", "object_clarity"]), st.sampled_from(["tiny", "low"]))
objects = st.builds(SceneObject, names, feature_maps, st.sampled_from(["object", "text"]))


@given(st.lists(objects, max_size=5, unique_by=lambda o: o.name))
def test_world_state_round_trip(objs):
    state = WorldState(objs, [("SAM", "x")])
    assert WorldState.from_doc(json.loads(json.dumps(state.to_doc()))) == state


@given(st.floats(0.1, 100), st.floats(0, 1), st.floats(0.01, 10))
def test_scaled_table_keeps_quality(cost, quality, k):
    from toolpath.domain import BenchmarkTable, BenchRecord

    bt = BenchmarkTable({("a", "s"): BenchRecord(cost, quality)})
    rec = bt.scaled(k).get("a", "s")
    assert rec.quality == quality and rec.cost == pytest.approx(cost * k)

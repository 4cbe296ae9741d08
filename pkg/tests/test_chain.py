import pytest
from hypothesis import given
from hypothesis import strategies as st

from toolpath.chain import (
    TaskFormatError,
    TaskSpec,
    UnresolvableOrdering,
    propose_chain_structured,
    validate_chain,
)
from toolpath.domain import SubtaskInstance, WorldState


def op(kind, src="", dst=""):
    return SubtaskInstance(kind, src, dst)


def spec(*ops):
    return TaskSpec(list(ops), WorldState())


def test_replacement_precedes_recolor_of_its_target():
    s = spec(op("Object Recoloration", "car", "pink car"), op("Object Replacement", "truck", "car"))
    chain = propose_chain_structured(s)
    assert [e.kind for e in chain] == ["Object Replacement", "Object Recoloration"]
    assert [e.ordinal for e in chain] == [1, 2]


def test_singleton_chain():
    chain = propose_chain_structured(spec(op("Object Removal", "cat")))
    assert len(chain) == 1 and chain.entries[0].source_object == "cat"


def test_independent_ops_keep_order():
    ops = [op("Object Detection", "pedestrian"), op("Object Removal", "car"),
           op("Object Replacement", "cat", "rabbit"), op("Object Recoloration", "dog", "pink dog")]
    chain = propose_chain_structured(spec(*ops))
    assert [(e.kind, e.source_object) for e in chain] == [(o.kind, o.source_object) for o in ops]
    doc = chain.to_doc("demo")
    assert doc["subtask_chain"][0]["parent"] == []
    assert doc["subtask_chain"][1]["parent"] == [chain.entries[0].label]


def test_circular_dependency():
    s = spec(op("Object Replacement", "a", "b"), op("Object Replacement", "b", "a"))
    with pytest.raises(UnresolvableOrdering):
        propose_chain_structured(s)


def test_empty_task_rejected():
    with pytest.raises(TaskFormatError):
        TaskSpec([])


def test_malformed_document():
    with pytest.raises(TaskFormatError):
        TaskSpec.from_doc({"ops": [{"source_object": "cat"}]})


def test_unknown_kind_rejected(knowledge):
    from toolpath.domain import UnknownSubtask

    with pytest.raises(UnknownSubtask):
        TaskSpec.from_doc({"ops": [{"kind": "Teleport", "source_object": "cat"}]}, knowledge.features)


def test_validate_chain_reports():
    ops = [op("Object Detection", "pedestrian"), op("Object Removal", "car"),
           op("Object Replacement", "cat", "rabbit"), op("Object Recoloration", "dog", "pink dog")]
    s = spec(*ops)
    assert validate_chain(propose_chain_structured(s), s).ok
    missing = validate_chain(list(propose_chain_structured(s).entries[:3]), s)
    assert not missing.coverage_ok
    s2 = spec(op("Object Recoloration", "car", "pink car"), op("Object Replacement", "truck", "car"))
    bad = [s2.structured_ops[0].with_ordinal(1), s2.structured_ops[1].with_ordinal(2)]
    report = validate_chain(bad, s2)
    assert not report.dependencies_ok and report.coverage_ok


def test_validate_chain_parents():
    s = spec(op("Object Removal", "a"), op("Object Removal", "b"))
    chain = propose_chain_structured(s)
    report = validate_chain(chain, s, parents=[[], []])
    assert not report.linear


@st.composite
def replacement_chains(draw):
    """Random rename chains a0 -> a1 -> ... plus recolors, shuffled."""
    n = draw(st.integers(1, 5))
    ops = [op("Object Replacement", f"a{i}", f"a{i + 1}") for i in range(n)]
    ops += [op("Object Recoloration", f"a{i}", f"red a{i}") for i in draw(st.sets(st.integers(0, n)))]
    return draw(st.permutations(ops))


@given(replacement_chains())
def test_ordering_respects_producers(ops):
    s = spec(*ops)
    chain = propose_chain_structured(s)
    report = validate_chain(chain, s)
    assert report.ok, report.problems

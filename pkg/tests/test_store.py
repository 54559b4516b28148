import json
import os
import random
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from horizon.errors import (
    ConsistencyError,
    CycleError,
    DanglingReference,
    DependencyViolation,
    ExpressionError,
    ExpressionSyntaxError,
    HorizonError,
    NotFound,
    OperationDisabled,
    StoreError,
)
from horizon.evaluator import evaluate_feature
from horizon.expressions import ContextSchema
from horizon.store import FeatureToggle, Rule, ToggleStore, audit


@pytest.fixture
def store(tmp_path):
    s = ToggleStore(tmp_path / "store.json")
    s.declare_attributes({"user.plan": "string", "user.currentTime": "number",
                          "user.subscription": "map<string,number>"})
    return s


def test_create_and_read(store):
    store.upsert_rule(Rule("pro-or-business", 'user.plan == "PRO" || user.plan == "BUSINESS"'))
    rev = store.upsert_feature(FeatureToggle("reports", "Usage reports", {"dev", "prod"}, ("pro-or-business",)))
    assert rev == store.revision
    toggle = store.read_feature("reports")
    assert toggle.rule_ids == ("pro-or-business",)
    assert store.read_rule("pro-or-business").attached_features == {"reports"}


def test_update_environments_keeps_rules(store):
    store.upsert_rule(Rule("r", 'user.plan == "PRO"'))
    store.upsert_feature(FeatureToggle("reports", environments={"dev", "prod"}, rule_ids=("r",)))
    store.upsert_feature(FeatureToggle("reports", environments={"prod"}, rule_ids=("r",)))
    toggle = store.read_feature("reports")
    assert toggle.environments == {"prod"} and toggle.rule_ids == ("r",)


def test_read_unknown_and_deleted(store):
    with pytest.raises(NotFound):
        store.read_feature("ghost")
    store.upsert_feature(FeatureToggle("translated-captions"))
    store.delete_feature("translated-captions")
    with pytest.raises(NotFound):
        store.read_feature("translated-captions")
    with pytest.raises(NotFound):
        store.delete_feature("translated-captions")


def test_delete_then_recreate(store):
    store.upsert_feature(FeatureToggle("x", "first"))
    store.delete_feature("x")
    store.upsert_feature(FeatureToggle("x", "second"))
    assert store.read_feature("x").description == "second"


def test_delete_parent_names_dependent(store):
    store.upsert_feature(FeatureToggle("cloud-recording-storage"))
    store.upsert_feature(FeatureToggle("cloud-storage-limit", depends_on="cloud-recording-storage"))
    with pytest.raises(DependencyViolation) as info:
        store.delete_feature("cloud-recording-storage")
    assert info.value.dependents == ("cloud-storage-limit",)
    assert "cloud-storage-limit" in str(info.value)


def test_delete_detaches_rules(store):
    store.upsert_rule(Rule("r", 'user.plan == "PRO"'))
    store.upsert_feature(FeatureToggle("a", rule_ids=("r",)))
    store.delete_feature("a")
    assert store.read_rule("r").attached_features == frozenset()


def test_dangling_references(store):
    with pytest.raises(DanglingReference):
        store.upsert_feature(FeatureToggle("a", rule_ids=("nope",)))
    with pytest.raises(DanglingReference):
        store.upsert_feature(FeatureToggle("a", depends_on="nope"))
    with pytest.raises(DanglingReference):
        store.upsert_rule(Rule("r", 'user.plan == "x"', {"nope"}))
    assert store.list_features() == []


def test_cycles(store):
    for name in "ABC":
        store.upsert_feature(FeatureToggle(name))
    with pytest.raises(CycleError):
        store.link_dependency("A", "A")
    store.upsert_feature(FeatureToggle("A", depends_on="B"))
    with pytest.raises(CycleError):
        store.upsert_feature(FeatureToggle("B", depends_on="A"))
    store.link_dependency("B", "C")
    with pytest.raises(CycleError):
        store.link_dependency("C", "A")
    assert audit(store.snapshot()) == []


def test_link_unknown(store):
    store.upsert_feature(FeatureToggle("A"))
    with pytest.raises(NotFound):
        store.link_dependency("A", "B")
    with pytest.raises(NotFound):
        store.link_dependency("B", "A")


def test_rule_reassignment_and_delete(store):
    store.upsert_feature(FeatureToggle("meetings"))
    store.upsert_feature(FeatureToggle("recordings"))
    rule = 'user.currentTime <= user.subscription["maxTimePerMeeting"]'
    store.upsert_rule(Rule("max-time-per-meeting", rule, {"meetings"}))
    store.upsert_rule(Rule("max-time-per-meeting", rule, {"meetings", "recordings"}))
    assert store.read_feature("meetings").rule_ids == ("max-time-per-meeting",)
    assert store.read_feature("recordings").rule_ids == ("max-time-per-meeting",)
    store.upsert_rule(Rule("max-time-per-meeting", rule, {"recordings"}))
    assert store.read_feature("meetings").rule_ids == ()
    store.delete_rule("max-time-per-meeting")
    assert store.read_feature("recordings").rule_ids == ()
    with pytest.raises(NotFound):
        store.read_rule("max-time-per-meeting")


def test_truncated_expression_reports_column(store):
    with pytest.raises(ExpressionSyntaxError) as info:
        store.upsert_rule(Rule("r", "user.plan ==="))
    assert info.value.column == 14


def test_rule_must_typecheck(store):
    with pytest.raises(ExpressionError):
        store.upsert_rule(Rule("r", "user.plan > 3"))


def test_sole_generated_rule_needs_force(store):
    store.upsert_rule(Rule("g", 'user.plan == "PRO"'))
    store.upsert_feature(FeatureToggle("gen", rule_ids=("g",), origin="pricingGenerated"))
    with pytest.raises(ConsistencyError):
        store.delete_rule("g")
    store.delete_rule("g", force=True)
    assert store.read_feature("gen").rule_ids == ()


def test_schema_change_must_keep_rules_valid(store):
    store.upsert_rule(Rule("r", 'user.plan == "PRO"'))
    with pytest.raises(ConsistencyError):
        store.set_context_schema(ContextSchema({"user.currentTime": "number"}))
    assert "user.plan" in store.snapshot().context_schema.attributes


def test_invalid_toggles(store):
    with pytest.raises(StoreError):
        store.upsert_feature(FeatureToggle("bad id with spaces"))
    with pytest.raises(StoreError):
        store.upsert_feature(FeatureToggle("a", environments=frozenset()))
    with pytest.raises(StoreError):
        store.upsert_feature(FeatureToggle("a", origin="imported"))


def test_deletion_switch(tmp_path):
    store = ToggleStore(tmp_path / "s.json", deletion_enabled=False)
    store.upsert_feature(FeatureToggle("a"))
    with pytest.raises(OperationDisabled):
        store.delete_feature("a")
    assert store.read_feature("a")


def test_snapshots_are_immutable(store):
    store.upsert_feature(FeatureToggle("old", default_value=True))
    before = store.snapshot()
    assert store.snapshot() == before
    store.delete_feature("old")
    assert evaluate_feature(before, "old", {}).value is True
    with pytest.raises(TypeError):
        before.toggles["x"] = None


def test_failed_transaction_publishes_nothing(store):
    revision = store.revision
    with pytest.raises(CycleError):
        with store.transaction() as draft:
            draft.upsert_feature(FeatureToggle("a"))
            draft.link_dependency("a", "a")
    assert store.revision == revision
    assert store.list_features() == []


def test_transaction_is_one_revision(store):
    revision = store.revision
    with store.transaction() as draft:
        for i in range(5):
            draft.upsert_feature(FeatureToggle(f"t{i}"))
    assert store.revision == revision + 1


def test_reload_from_disk(tmp_path, store):
    store.upsert_rule(Rule("r", 'user.plan == "PRO"'))
    store.upsert_feature(FeatureToggle("a", "desc", {"dev"}, ("r",), None, True))
    store.upsert_feature(FeatureToggle("b", depends_on="a"))
    again = ToggleStore(tmp_path / "store.json")
    assert again.snapshot() == store.snapshot()
    doc = json.loads((tmp_path / "store.json").read_text())
    assert set(doc) >= {"revision", "contextSchema", "toggles", "rules"}


def test_interrupted_write_keeps_previous_file(tmp_path, store, monkeypatch):
    store.upsert_feature(FeatureToggle("a"))
    before = (tmp_path / "store.json").read_bytes()

    def boom(*args):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        store.upsert_feature(FeatureToggle("b"))
    monkeypatch.undo()
    assert (tmp_path / "store.json").read_bytes() == before
    assert [p.name for p in tmp_path.iterdir()] == ["store.json"]
    assert ToggleStore(tmp_path / "store.json").snapshot().toggles.keys() == {"a"}
    # the in-memory store did not publish the failed revision either
    assert store.snapshot().toggles.keys() == {"a"}


def test_corrupt_store_file(tmp_path):
    path = tmp_path / "store.json"
    path.write_text("{not json")
    with pytest.raises(HorizonError):
        ToggleStore(path)


def test_inconsistent_store_file(tmp_path):
    path = tmp_path / "store.json"
    path.write_text(json.dumps({
        "revision": 3, "contextSchema": {"attributes": {}},
        "toggles": [{"id": "a", "ruleIds": ["missing"]}], "rules": [],
    }))
    with pytest.raises(HorizonError):
        ToggleStore(path)


def test_listeners_see_revisions(store):
    events = []
    store.subscribe(events.append)
    store.upsert_feature(FeatureToggle("a"))
    store.upsert_feature(FeatureToggle("b"))
    assert [e.revision for e in events] == [store.revision - 1, store.revision]


def test_concurrent_writers_serialize(store):
    start = store.revision

    def writer(k):
        for i in range(20):
            store.upsert_feature(FeatureToggle(f"w{k}-{i}"))

    threads = [threading.Thread(target=writer, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert store.revision == start + 80
    assert len(store.list_features()) == 80


# -- random operation sequences ---------------------------------------------


def has_cycle(parents: dict) -> bool:
    """DFS over child -> parent edges."""
    for start in parents:
        seen, node = set(), start
        while node is not None:
            if node in seen:
                return True
            seen.add(node)
            node = parents.get(node)
    return False


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32))
def test_random_operations_keep_store_consistent(seed):
    rng = random.Random(seed)
    store = ToggleStore()
    store.declare_attributes({"x.n": "number"})
    ids = [f"t{i}" for i in range(5)]
    rules = [f"r{i}" for i in range(3)]
    last = store.revision
    for _ in range(60):
        op = rng.choice(["feature", "feature", "delete", "link", "rule", "delrule"])
        before = store.snapshot()
        parents = {t.id: t.depends_on for t in before.toggles.values()}
        try:
            if op == "feature":
                tid = rng.choice(ids)
                rid = [r for r in rules if r in before.rules and rng.random() < 0.5]
                store.upsert_feature(FeatureToggle(tid, rule_ids=tuple(rid)))
            elif op == "delete":
                store.delete_feature(rng.choice(ids))
            elif op == "link":
                child, parent = rng.choice(ids), rng.choice(ids + [None])
                expect_cycle = (child in parents and (parent is None or parent in parents)
                                and has_cycle({**parents, child: parent}))
                try:
                    store.link_dependency(child, parent)
                    assert not expect_cycle
                except CycleError:
                    assert expect_cycle
                    raise
            elif op == "rule":
                attached = {t for t in before.toggles if rng.random() < 0.4}
                store.upsert_rule(Rule(rng.choice(rules), f"x.n > {rng.randint(0, 9)}", attached))
            else:
                store.delete_rule(rng.choice(rules))
        except HorizonError:
            assert store.snapshot() is before
            continue
        snap = store.snapshot()
        assert snap.revision > last
        last = snap.revision
        assert audit(snap) == []
        assert not has_cycle({t.id: t.depends_on for t in snap.toggles.values()})

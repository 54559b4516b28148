import random
import shutil

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from horizon.compiler import (
    PricingWatcher,
    compile_pricing,
    entitlement_context,
    entitlement_rule_id,
    limit_rule_id,
    plan_sync,
    sync_store,
    watch_settings,
)
from horizon.errors import ConflictError, SchemaConflict, WatchError
from horizon.evaluator import evaluate_feature
from horizon.expressions import ContextSchema
from horizon.pricing import ZOOM_PRICING_PATH, Subscription, iter_subscriptions, pricing_from_document
from horizon.store import FeatureToggle, Rule, ToggleStore

from oracles import document_allows, random_pricing_document


def test_compile_zoom(zoom):
    compiled = compile_pricing(zoom)
    assert len(compiled.toggles) == 11
    meetings = next(t for t in compiled.toggles if t.id == "meetings")
    assert meetings.rule_ids == (entitlement_rule_id("meetings"),
                                 limit_rule_id("maxAssistantsPerMeeting"), limit_rule_id("maxTimePerMeeting"))
    assert all(t.origin == "pricingGenerated" for t in compiled.toggles)
    assert compiled.schema["meeting.assistants"] == "number"
    assert compiled.version == "2024-11"


def test_schema_conflict(zoom):
    with pytest.raises(SchemaConflict):
        compile_pricing(zoom, ContextSchema({"meeting.assistants": "string"}))
    with pytest.raises(SchemaConflict):
        compile_pricing(zoom, ContextSchema({"meeting": "string"}))


def test_sync_is_idempotent(zoom):
    store = ToggleStore()
    plan, revision = sync_store(store, zoom)
    assert len(plan.toggles_to_create) == 11 and plan.source_version == "2024-11"
    assert store.snapshot().pricing_version == "2024-11"
    again, same = sync_store(store, zoom)
    assert again.is_empty and same == revision


def test_sync_keeps_manual_toggles_and_customizations(zoom):
    store = ToggleStore()
    sync_store(store, zoom)
    store.declare_attributes({"user.beta": "boolean"})
    store.upsert_rule(Rule("beta", "user.beta == true"))
    store.upsert_feature(FeatureToggle("beta-ui", rule_ids=("beta",)))
    toggle = store.read_feature("reports")
    store.upsert_feature(FeatureToggle("reports", toggle.description, {"prod"},
                                       toggle.rule_ids + ("beta",), None, False, "pricingGenerated"))
    store.upsert_rule(Rule("beta", "user.beta == true", {"beta-ui", "reports"}))
    doc = yaml.safe_load(ZOOM_PRICING_PATH.read_text())
    doc["version"] = "2025-01"
    doc["features"] = [f for f in doc["features"] if f["name"] != "notes"]
    for p in doc["plans"]:
        p["features"].pop("notes", None)
    plan, _ = sync_store(store, pricing_from_document(doc))
    assert plan.toggles_to_delete == ("notes",)
    snap = store.snapshot()
    assert "beta-ui" in snap.toggles and "notes" not in snap.toggles
    assert snap.toggles["reports"].environments == {"prod"}
    assert "beta" in snap.toggles["reports"].rule_ids
    assert snap.pricing_version == "2025-01"


def test_manual_toggle_blocks_generated_id(zoom):
    store = ToggleStore()
    store.upsert_feature(FeatureToggle("meetings"))
    with pytest.raises(ConflictError):
        plan_sync(store.snapshot(), zoom)
    with pytest.raises(ConflictError):
        sync_store(store, zoom)
    assert store.snapshot().toggles["meetings"].origin == "manual"


def test_removed_feature_with_manual_dependent_conflicts(zoom):
    store = ToggleStore()
    sync_store(store, zoom)
    store.upsert_feature(FeatureToggle("my-notes", depends_on="notes"))
    revision = store.revision
    doc = yaml.safe_load(ZOOM_PRICING_PATH.read_text())
    doc["features"] = [f for f in doc["features"] if f["name"] != "notes"]
    for p in doc["plans"]:
        p["features"].pop("notes", None)
    with pytest.raises(ConflictError):
        sync_store(store, pricing_from_document(doc))
    assert store.revision == revision


@pytest.mark.parametrize("plan, add_ons, assistants, minutes, expected", [
    ("BASIC", (), 100, 40, True),
    ("BASIC", (), 101, 40, False),
    ("BASIC", (), 10, 41, False),
    ("PRO", ("huge-meetings",), 1000, 60, True),
    ("BUSINESS", (), 300, 1800, True),
    ("BUSINESS", (), 301, 10, False),
])
def test_meetings_limits(zoom, plan, add_ons, assistants, minutes, expected):
    store = ToggleStore()
    sync_store(store, zoom)
    ctx = entitlement_context(zoom, Subscription(plan, add_ons),
                              {"meeting": {"assistants": assistants}, "user": {"currentTime": minutes}})
    assert evaluate_feature(store.snapshot(), "meetings", ctx).value is expected


def test_entitlement_context_shape(zoom):
    ctx = entitlement_context(zoom, Subscription("PRO", {"phone-dialing"}), {"user": {"age": 3}})
    assert ctx["user"]["plan"] == "PRO" and ctx["user"]["addOns"] == ["phone-dialing"]
    assert ctx["user"]["age"] == 3
    assert ctx["user"]["subscription"]["features"]["phone-dialing"] is True


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32))
def test_generated_toggles_match_document(seed):
    rng = random.Random(seed)
    doc = random_pricing_document(rng, max_plans=3, max_add_ons=3)
    pricing = pricing_from_document(doc)
    store = ToggleStore()
    sync_store(store, pricing)
    snap = store.snapshot()
    for sub in iter_subscriptions(pricing):
        usage = {limit["contextAttribute"]: rng.randint(0, 2500) for limit in doc["usageLimits"]}
        ctx = entitlement_context(pricing, sub, {"ctx": {k.split(".")[1]: v for k, v in usage.items()}})
        for feature in pricing.feature_names:
            expected = document_allows(doc, sub.plan, sub.add_ons, feature, usage)
            assert evaluate_feature(snap, feature, ctx).value is expected


# -- watcher -------------------------------------------------------------------


@pytest.fixture
def pricing_file(tmp_path):
    path = tmp_path / "zoom.yaml"
    shutil.copy(ZOOM_PRICING_PATH, path)
    return path


def test_watcher_applies_and_skips(pricing_file):
    store = ToggleStore()
    seen = []
    watcher = PricingWatcher(pricing_file, store, on_pricing=seen.append)
    events = []
    watcher.subscribe(events.append)
    event = watcher.poll_once()
    assert event.kind == "pricingReloaded" and event.pricing_version == "2024-11"
    assert watcher.poll_once() is None
    revision = store.revision

    pricing_file.write_text("plans: [broken")
    assert watcher.poll_once() is None
    assert watcher.last_error is not None
    assert store.revision == revision and watcher.pricing is seen[0]

    text = ZOOM_PRICING_PATH.read_text().replace("maxAssistantsPerMeeting: 300", "maxAssistantsPerMeeting: 400")
    pricing_file.write_text(text)
    event = watcher.poll_once()
    # only a limit changed, so the store keeps its revision but the pricing is new
    assert event is not None and store.revision == revision
    assert watcher.pricing.plan("BUSINESS").usage_limit_values["maxAssistantsPerMeeting"] == 400
    assert len(events) == 2 and len(seen) == 2


def test_watcher_gives_up_on_missing_file(tmp_path):
    watcher = PricingWatcher(tmp_path / "absent.yaml", ToggleStore(), max_failures=2)
    assert watcher.poll_once() is None
    with pytest.raises(WatchError):
        watcher.poll_once()


def test_watcher_backoff(tmp_path):
    watcher = PricingWatcher(tmp_path / "absent.yaml", ToggleStore(), interval=1.0, max_backoff=3.0)
    assert watcher._next_delay() == 1.0
    watcher.poll_once()
    assert watcher._next_delay() == 2.0
    watcher.poll_once()
    assert watcher._next_delay() == 3.0


def test_watch_settings(monkeypatch):
    monkeypatch.setenv("HORIZON_PRICING_PATH", "/p.yaml")
    monkeypatch.setenv("HORIZON_POLL_MS", "250")
    assert watch_settings() == ("/p.yaml", 0.25)
    assert watch_settings("/q.yaml", 2000) == ("/q.yaml", 2.0)
    with pytest.raises(ValueError):
        watch_settings(None, 0)

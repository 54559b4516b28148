"""Score this engine against its own capability matrix by running probes.

Each probe exercises one capability end to end in a scratch directory.  A
probe returns ``full`` when the behavior checks out, ``none`` when the
capability is switched off in this build, and raises :class:`ProbeFailure`
when the engine misbehaves.
"""

from __future__ import annotations

import json
import shutil
import tempfile
import time
import urllib.error
import urllib.request
from pathlib import Path
from typing import Any, Callable

from .compiler import PricingWatcher, entitlement_context, sync_store
from .errors import (
    CycleError,
    HorizonError,
    NotFound,
    OperationDisabled,
    ProbeFailure,
    SignatureInvalid,
    UnknownAttribute,
)
from .evaluator import DEFAULT_USED, PARENT_DISABLED, REASONS, evaluate_all, evaluate_feature
from .pricing import ZOOM_PRICING_PATH, Subscription, configuration_space, load_pricing, resolve_entitlements
from .scorecard import CAPABILITY_IDS, FULL, NONE, ToolAssessment
from .sdk import ClientCache, FeatureClient
from .service import HorizonService, ServiceConfig
from .store import FeatureToggle, Rule, ToggleStore
from .tokens import encode_token, verify_token

_SECRET = "self-assessment-secret"
_BEARER = "self-assessment-bearer"


class _Probe:
    def __init__(self, root: Path, watcher: bool, deletion: bool, poll_interval: float):
        self.root = root
        self.watcher_enabled = watcher
        self.deletion = deletion
        self.poll_interval = poll_interval
        self.store_path = root / "store.json"
        self.pricing_path = root / "pricing.yaml"
        shutil.copyfile(ZOOM_PRICING_PATH, self.pricing_path)
        self.store = ToggleStore(self.store_path, deletion_enabled=deletion)
        self.store.declare_attributes({
            "user.beta": "boolean", "user.seats": "number", "user.country": "string",
            "user.tags": "list<string>",
        })
        self.service: HorizonService | None = None
        self.capability = ""

    def check(self, condition: bool, message: str) -> None:
        if not condition:
            raise ProbeFailure(self.capability, message)

    def reopen(self) -> ToggleStore:
        return ToggleStore(self.store_path, deletion_enabled=self.deletion)

    def http(self, method: str, path: str, body: Any = None, auth: bool = True) -> tuple[int, Any]:
        if self.service is None:
            config = ServiceConfig(secret=_SECRET, port=0, bearer=_BEARER, watch=False)
            self.service = HorizonService(config, self.store).start()
        data = json.dumps(body).encode() if body is not None else None
        req = urllib.request.Request(self.service.url + path, data=data, method=method)
        req.add_header("Content-Type", "application/json")
        if auth:
            req.add_header("Authorization", f"Bearer {_BEARER}")
        try:
            with urllib.request.urlopen(req, timeout=10) as resp:
                return resp.status, json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            return exc.code, json.loads(exc.read() or b"{}")

    def close(self) -> None:
        if self.service is not None:
            self.service.stop()

    # feature and rule management

    def feature_create(self) -> str:
        self.store.upsert_feature(FeatureToggle("probe-a", "probe toggle"))
        self.check(self.reopen().read_feature("probe-a").description == "probe toggle",
                   "created toggle not persisted")
        return FULL

    def feature_read(self) -> str:
        self.check(self.store.read_feature("probe-a").id == "probe-a", "read returned wrong toggle")
        self.check("probe-a" in {t.id for t in self.store.list_features()}, "list misses toggle")
        return FULL

    def feature_update(self) -> str:
        self.store.upsert_feature(FeatureToggle("probe-a", "updated", default_value=True))
        stored = self.reopen().read_feature("probe-a")
        self.check(stored.description == "updated" and stored.default_value, "update not persisted")
        return FULL

    def feature_delete(self) -> str:
        self.store.upsert_feature(FeatureToggle("probe-doomed"))
        try:
            self.store.delete_feature("probe-doomed")
        except OperationDisabled:
            return NONE
        try:
            self.reopen().read_feature("probe-doomed")
        except NotFound:
            return FULL
        raise ProbeFailure(self.capability, "deleted toggle still present")

    def rule_create(self) -> str:
        self.store.upsert_rule(Rule("probe-seats", "user.seats >= 3", {"probe-a"}))
        self.check(self.reopen().read_feature("probe-a").rule_ids == ("probe-seats",), "rule not attached")
        return FULL

    def rule_read(self) -> str:
        rule = self.store.read_rule("probe-seats")
        self.check(rule.expression_source == "user.seats >= 3" and rule.attached_features == {"probe-a"},
                   "rule read back differently")
        self.check(any(r.id == "probe-seats" for r in self.store.list_rules()), "list misses rule")
        return FULL

    def rule_update(self) -> str:
        self.store.upsert_rule(Rule("probe-seats", "user.seats >= 5", {"probe-a"}))
        self.check(self.reopen().read_rule("probe-seats").expression_source == "user.seats >= 5",
                   "rule update not persisted")
        return FULL

    def rule_delete(self) -> str:
        self.store.upsert_rule(Rule("probe-tmp", "user.beta"))
        self.store.delete_rule("probe-tmp")
        try:
            self.reopen().read_rule("probe-tmp")
        except NotFound:
            return FULL
        raise ProbeFailure(self.capability, "deleted rule still present")

    def dependencies(self) -> str:
        self.store.upsert_rule(Rule("probe-beta", "user.beta"))
        self.store.upsert_feature(FeatureToggle("probe-parent", rule_ids=("probe-beta",)))
        self.store.upsert_feature(FeatureToggle("probe-child"))
        self.store.link_dependency("probe-child", "probe-parent")
        snap = self.store.snapshot()
        off = evaluate_feature(snap, "probe-child", {"user": {"beta": False}})
        on = evaluate_feature(snap, "probe-child", {"user": {"beta": True}})
        self.check(off.reason == PARENT_DISABLED and not off.value and on.value, "parent does not gate child")
        try:
            self.store.link_dependency("probe-parent", "probe-child")
        except CycleError:
            return FULL
        raise ProbeFailure(self.capability, "dependency cycle accepted")

    def centralized(self) -> str:
        status, doc = self.http("GET", "/features")
        ids = {f["id"] for f in doc.get("features", [])}
        self.check(status == 200 and ids == {t.id for t in self.reopen().list_features()},
                   "service and store file disagree")
        return FULL

    # evaluation configuration

    def dynamic(self) -> str:
        ctx = {"user": {"seats": 4}}
        before = FeatureClient(self.store).is_feature_available("probe-a", ctx)
        self.store.upsert_rule(Rule("probe-seats", "user.seats >= 3", {"probe-a"}))
        after = FeatureClient(self.store).is_feature_available("probe-a", ctx)
        self.check(before is False and after is True, "rule change not reflected without restart")
        return FULL

    def _value_probe(self, expression: str, yes: dict, no: dict) -> str:
        self.store.upsert_rule(Rule("probe-value", expression))
        self.store.upsert_feature(FeatureToggle("probe-value", rule_ids=("probe-value",)))
        snap = self.store.snapshot()
        self.check(evaluate_feature(snap, "probe-value", yes).value is True, f"{expression} rejected match")
        self.check(evaluate_feature(snap, "probe-value", no).value is False, f"{expression} accepted mismatch")
        return FULL

    def boolean_values(self) -> str:
        return self._value_probe("user.beta == true", {"user": {"beta": True}}, {"user": {"beta": False}})

    def numeric_values(self) -> str:
        return self._value_probe("user.seats > 2.5", {"user": {"seats": 3}}, {"user": {"seats": 2}})

    def text_values(self) -> str:
        return self._value_probe('user.country.matches("^E[SE]$")', {"user": {"country": "ES"}},
                                 {"user": {"country": "FR"}})

    def context_aware(self) -> str:
        snap = self.store.snapshot()
        values = {evaluate_feature(snap, "probe-a", {"user": {"seats": n}}).value for n in (1, 10)}
        self.check(values == {True, False}, "context does not influence the result")
        return FULL

    def custom_attributes(self) -> str:
        try:
            self.store.upsert_rule(Rule("probe-custom", "org.tier == \"gold\""))
        except UnknownAttribute:
            pass
        else:
            raise ProbeFailure(self.capability, "undeclared attribute accepted")
        self.store.declare_attributes({"org.tier": "string"})
        return self._value_probe('org.tier == "gold"', {"org": {"tier": "gold"}}, {"org": {"tier": "tin"}})

    def complex_logic(self) -> str:
        self.store.declare_attributes({"p.a": "boolean", "p.b": "boolean", "p.c": "boolean"})
        self.store.upsert_rule(Rule("probe-logic", "(p.a && p.b) || !p.c"))
        self.store.upsert_feature(FeatureToggle("probe-logic", rule_ids=("probe-logic",)))
        snap = self.store.snapshot()
        for n in range(8):
            a, b, c = bool(n & 4), bool(n & 2), bool(n & 1)
            got = evaluate_feature(snap, "probe-logic", {"p": {"a": a, "b": b, "c": c}}).value
            self.check(got == ((a and b) or not c), f"wrong result for a={a} b={b} c={c}")
        return FULL

    # feature evaluation

    def single(self) -> str:
        result = evaluate_feature(self.store.snapshot(), "probe-a", {"user": {"seats": 7}})
        self.check(result.value is True and result.feature_id == "probe-a", "single evaluation wrong")
        return FULL

    def multi(self) -> str:
        snap = self.store.snapshot()
        ctx = {"user": {"seats": 4, "beta": True, "country": "ES"}}
        bulk = evaluate_all(snap, ctx)
        self.check(all(bulk.results[f] == evaluate_feature(snap, f, ctx) for f in bulk.results),
                   "bulk and single evaluation disagree")
        return FULL

    def defaults(self) -> str:
        result = evaluate_feature(self.store.snapshot(), "probe-a", {})
        self.check(result.reason == DEFAULT_USED and result.value is True, "default value not applied")
        return FULL

    def boolean_results(self) -> str:
        bulk = evaluate_all(self.store.snapshot(), {"user": {"seats": 1}})
        self.check(all(type(r.value) is bool and r.reason in REASONS for r in bulk.results.values()),
                   "non-boolean result")
        return FULL

    # integration

    def server_sdk(self) -> str:
        client = FeatureClient(self.store)
        self.check(client.is_feature_available("probe-a", {"user": {"seats": 9}}) is True, "server SDK wrong")
        return FULL

    def client_sdk(self) -> str:
        cache = ClientCache(self.store, {"user": {"seats": 1, "beta": True}})
        self.check(cache.is_enabled("probe-a") is False, "bootstrap value wrong")
        cache.update_context({"user.seats": 8})
        self.check(cache.is_enabled("probe-a") is True and cache.partial_refreshes == 1,
                   "context update not applied")
        return FULL

    def api(self) -> str:
        status, _ = self.http("PUT", "/features/probe-api", {"description": "via http"})
        self.check(status == 200, f"PUT returned {status}")
        status, doc = self.http("POST", "/evaluate", {"featureId": "probe-api", "context": {}})
        self.check(status == 200 and doc["payload"]["value"] is True, "HTTP evaluation failed")
        return FULL

    def secure(self) -> str:
        status, _ = self.http("GET", "/features", auth=False)
        self.check(status == 401, "management endpoint open without a bearer token")
        _, token = self.http("POST", "/evaluate", {"featureId": "probe-a", "context": {"user": {"seats": 9}}})
        self.check(verify_token(encode_token(token), _SECRET)["value"] is True, "token does not verify")
        tampered = encode_token({**token, "payload": {**token["payload"], "value": False}})
        try:
            verify_token(tampered, _SECRET)
        except SignatureInvalid:
            return FULL
        raise ProbeFailure(self.capability, "tampered token verified")

    # pricing-driven automation

    def pricing_model(self) -> str:
        pricing = load_pricing(self.pricing_path)
        self.check(configuration_space(pricing) == 20, "wrong configuration space")
        limits = resolve_entitlements(pricing, Subscription("BUSINESS", {"huge-meetings"})).limits
        self.check(limits["maxAssistantsPerMeeting"] == 1000, "add-on extension not applied")
        return FULL

    def toggle_generation(self) -> str:
        pricing = load_pricing(self.pricing_path)
        sync_store(self.store, pricing)
        generated = {t.id for t in self.store.list_features() if t.origin == "pricingGenerated"}
        self.check(generated == set(pricing.feature_names), "generated toggles do not match features")
        plan, _ = sync_store(self.store, pricing)
        self.check(plan.is_empty, "second sync is not a no-op")
        ctx = entitlement_context(pricing, Subscription("PRO"), {"meeting": {"assistants": 150},
                                                                 "user": {"currentTime": 10}})
        self.check(evaluate_feature(self.store.snapshot(), "meetings", ctx).value is False,
                   "usage limit not enforced")
        return FULL

    def hot_reload(self) -> str:
        if not self.watcher_enabled:
            return NONE
        extra = {"meeting": {"assistants": 350}, "user": {"currentTime": 10}}
        watcher = PricingWatcher(self.pricing_path, self.store, self.poll_interval)
        watcher.poll_once()

        def meetings_enabled() -> bool:
            ctx = entitlement_context(watcher.pricing, Subscription("BUSINESS"), extra)
            return evaluate_feature(self.store.snapshot(), "meetings", ctx).value

        self.check(not meetings_enabled(), "350 assistants allowed before the change")
        watcher.start()
        try:
            text = self.pricing_path.read_text().replace("maxAssistantsPerMeeting: 300",
                                                         "maxAssistantsPerMeeting: 400")
            self.pricing_path.write_text(text)
            deadline = time.monotonic() + max(2.0, 20 * self.poll_interval)
            while time.monotonic() < deadline:
                if meetings_enabled():
                    return FULL
                time.sleep(self.poll_interval / 4)
        finally:
            watcher.stop()
        raise ProbeFailure(self.capability, "pricing change not picked up")


_PROBES: dict[str, Callable[[_Probe], str]] = {
    "featureCreate": _Probe.feature_create,
    "featureRead": _Probe.feature_read,
    "featureUpdate": _Probe.feature_update,
    "featureDelete": _Probe.feature_delete,
    "ruleCreate": _Probe.rule_create,
    "ruleRead": _Probe.rule_read,
    "ruleUpdate": _Probe.rule_update,
    "ruleDelete": _Probe.rule_delete,
    "featureDependencyManagement": _Probe.dependencies,
    "centralizedFeatureManagement": _Probe.centralized,
    "dynamicFeatureEvaluation": _Probe.dynamic,
    "booleanValueSupport": _Probe.boolean_values,
    "numericValueSupport": _Probe.numeric_values,
    "textValueSupport": _Probe.text_values,
    "contextAwareEvaluation": _Probe.context_aware,
    "customAttributes": _Probe.custom_attributes,
    "complexLogicalEvaluations": _Probe.complex_logic,
    "singleFeatureEvaluation": _Probe.single,
    "multiFeatureEvaluation": _Probe.multi,
    "defaultValues": _Probe.defaults,
    "standardizedBooleanResults": _Probe.boolean_results,
    "serverSDK": _Probe.server_sdk,
    "clientSDK": _Probe.client_sdk,
    "apiBasedIntegration": _Probe.api,
    "secureCommunication": _Probe.secure,
    "pricingModelSupport": _Probe.pricing_model,
    "pricingDrivenToggleGeneration": _Probe.toggle_generation,
    "hotContextChangeManagement": _Probe.hot_reload,
}
assert tuple(_PROBES) == CAPABILITY_IDS


def self_assess(*, watcher: bool = True, deletion: bool = True, poll_interval: float = 0.05,
                tool: str = "horizon") -> ToolAssessment:
    """Run every probe in order and return the resulting assessment."""
    scores, notes = {}, {}
    with tempfile.TemporaryDirectory(prefix="horizon-probe-") as tmp:
        probe = _Probe(Path(tmp), watcher, deletion, poll_interval)
        try:
            for capability_id, run in _PROBES.items():
                probe.capability = capability_id
                try:
                    scores[capability_id] = run(probe)
                except ProbeFailure:
                    raise
                except (HorizonError, OSError, KeyError, TypeError, ValueError) as exc:
                    raise ProbeFailure(capability_id, f"{type(exc).__name__}: {exc}") from exc
                if scores[capability_id] == NONE:
                    notes[capability_id] = "disabled in this build"
        finally:
            probe.close()
    return ToolAssessment(tool, scores, notes)

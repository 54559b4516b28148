"""Generate toggles and rules from a pricing and keep a store in sync with it."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping

from .errors import (
    ConflictError,
    DependencyViolation,
    HorizonError,
    SchemaConflict,
    SchemaDefinitionError,
    WatchError,
)
from .expressions import MAP_BOOLEAN, MAP_NUMBER, NUMBER, ContextSchema, merge_values
from .pricing import PricingModel, Subscription, parse_pricing, resolve_entitlements
from .store import ChangeEvent, Draft, FeatureToggle, Rule, StoreSnapshot, ToggleStore

log = logging.getLogger(__name__)

FEATURES_ATTRIBUTE = "user.subscription.features"
LIMITS_ATTRIBUTE = "user.subscription.limits"
GENERATED_RULE_PREFIX = "pricing:"

DEFAULT_POLL_SECONDS = 1.0


def entitlement_rule_id(feature: str) -> str:
    return f"{GENERATED_RULE_PREFIX}feature:{feature}"


def limit_rule_id(limit: str) -> str:
    return f"{GENERATED_RULE_PREFIX}limit:{limit}"


def is_generated_rule(rule_id: str) -> bool:
    return rule_id.startswith(GENERATED_RULE_PREFIX)


@dataclass(frozen=True)
class CompiledPricing:
    toggles: tuple[FeatureToggle, ...]
    rules: tuple[Rule, ...]
    schema: Mapping[str, str]
    version: str


def compile_pricing(pricing: PricingModel, schema: ContextSchema | None = None) -> CompiledPricing:
    """Turn a pricing into toggles, rules and the attributes they read.

    Every feature gets a toggle gated on ``user.subscription.features[f]``;
    every usage limit adds a rule to its feature's toggle comparing the
    limit's context attribute to ``user.subscription.limits[l]``.  If
    ``schema`` is given, clashes with attributes it already declares raise
    :class:`SchemaConflict`.
    """
    attributes = {FEATURES_ATTRIBUTE: MAP_BOOLEAN, LIMITS_ATTRIBUTE: MAP_NUMBER}
    for limit in pricing.usage_limits:
        previous = attributes.get(limit.context_attribute)
        if previous is not None and previous != NUMBER:
            raise SchemaConflict(
                f"usage limit {limit.name!r} reads {limit.context_attribute!r}, "
                f"which is already declared as {previous}"
            )
        attributes[limit.context_attribute] = NUMBER
    if schema is not None:
        for path, type_name in attributes.items():
            existing = schema.attributes.get(path)
            if existing is not None and existing != type_name:
                raise SchemaConflict(f"attribute {path!r} is declared as {existing}, pricing needs {type_name}")
    try:
        ContextSchema({**(schema.attributes if schema else {}), **attributes})
    except SchemaDefinitionError as exc:
        raise SchemaConflict(str(exc)) from exc

    rules, toggles = [], []
    for feature in pricing.features:
        rule_ids = [entitlement_rule_id(feature.name)]
        rules.append(Rule(
            entitlement_rule_id(feature.name),
            f"{FEATURES_ATTRIBUTE}[{json.dumps(feature.name)}] == true",
            frozenset({feature.name}),
        ))
        for limit in pricing.limits_for(feature.name):
            rule_ids.append(limit_rule_id(limit.name))
            rules.append(Rule(
                limit_rule_id(limit.name),
                f"{limit.context_attribute} <= {LIMITS_ATTRIBUTE}[{json.dumps(limit.name)}]",
                frozenset({feature.name}),
            ))
        toggles.append(FeatureToggle(
            id=feature.name,
            description=feature.description,
            rule_ids=tuple(rule_ids),
            origin="pricingGenerated",
        ))
    return CompiledPricing(tuple(toggles), tuple(rules), attributes, pricing.version)


@dataclass(frozen=True)
class CompilationPlan:
    toggles_to_create: tuple[FeatureToggle, ...] = ()
    toggles_to_update: tuple[FeatureToggle, ...] = ()
    toggles_to_delete: tuple[str, ...] = ()
    rules_to_create: tuple[Rule, ...] = ()
    rules_to_update: tuple[Rule, ...] = ()
    rules_to_delete: tuple[str, ...] = ()
    schema_additions: Mapping[str, str] = field(default_factory=dict)
    source_version: str | None = None

    @property
    def is_empty(self) -> bool:
        return not (self.toggles_to_create or self.toggles_to_update or self.toggles_to_delete
                    or self.rules_to_create or self.rules_to_update or self.rules_to_delete
                    or self.schema_additions)

    def to_dict(self) -> dict[str, Any]:
        return {
            "togglesToCreate": [t.id for t in self.toggles_to_create],
            "togglesToUpdate": [t.id for t in self.toggles_to_update],
            "togglesToDelete": list(self.toggles_to_delete),
            "rulesToCreate": [r.id for r in self.rules_to_create],
            "rulesToUpdate": [r.id for r in self.rules_to_update],
            "rulesToDelete": list(self.rules_to_delete),
            "schemaAdditions": dict(self.schema_additions),
            "sourceVersion": self.source_version,
        }


def plan_sync(snapshot: StoreSnapshot, pricing: PricingModel) -> CompilationPlan:
    """Diff the store against what the pricing generates."""
    compiled = compile_pricing(pricing, snapshot.context_schema)
    occupied = sorted(t.id for t in compiled.toggles
                      if t.id in snapshot.toggles and snapshot.toggles[t.id].origin == "manual")
    if occupied:
        raise ConflictError(f"manual toggle(s) occupy generated ids: {', '.join(occupied)}")

    generated_toggles = {t.id: t for t in compiled.toggles}
    generated_rules = {r.id: r for r in compiled.rules}

    create_t, update_t = [], []
    for wanted in compiled.toggles:
        current = snapshot.toggles.get(wanted.id)
        if current is None:
            create_t.append(wanted)
            continue
        manual_rules = tuple(r for r in current.rule_ids if not is_generated_rule(r))
        desired = FeatureToggle(
            id=wanted.id,
            description=wanted.description,
            environments=current.environments,
            rule_ids=wanted.rule_ids + manual_rules,
            depends_on=current.depends_on,
            default_value=current.default_value,
            origin="pricingGenerated",
        )
        if desired != current:
            update_t.append(desired)

    create_r, update_r = [], []
    for wanted in compiled.rules:
        current = snapshot.rules.get(wanted.id)
        if current is None:
            create_r.append(wanted)
            continue
        # keep attachments a user made to manual toggles
        extra = frozenset(t for t in current.attached_features
                          if t in snapshot.toggles and snapshot.toggles[t].origin == "manual")
        desired = Rule(wanted.id, wanted.expression_source, wanted.attached_features | extra)
        if desired != current:
            update_r.append(desired)

    delete_t = tuple(sorted(
        t.id for t in snapshot.toggles.values()
        if t.origin == "pricingGenerated" and t.id not in generated_toggles
    ))
    delete_r = tuple(sorted(r for r in snapshot.rules if is_generated_rule(r) and r not in generated_rules))
    additions = {p: t for p, t in compiled.schema.items() if snapshot.context_schema.attributes.get(p) != t}
    return CompilationPlan(tuple(create_t), tuple(update_t), delete_t, tuple(create_r),
                           tuple(update_r), delete_r, additions, pricing.version)


def apply_plan(draft: Draft, plan: CompilationPlan) -> None:
    if plan.schema_additions:
        draft.declare_attributes(plan.schema_additions)
    for toggle_id in plan.toggles_to_delete:
        try:
            draft.delete_feature(toggle_id)
        except DependencyViolation as exc:
            raise ConflictError(f"cannot remove generated toggle {toggle_id!r}: {exc}") from exc
    for rule_id in plan.rules_to_delete:
        draft.delete_rule(rule_id, force=True)
    for rule in plan.rules_to_create + plan.rules_to_update:
        present = frozenset(t for t in rule.attached_features if t in draft.toggles)
        draft.upsert_rule(Rule(rule.id, rule.expression_source, present))
    for toggle in plan.toggles_to_create + plan.toggles_to_update:
        draft.upsert_feature(toggle)
    draft.set_pricing_version(plan.source_version)


def sync_store(store: ToggleStore, pricing: PricingModel) -> tuple[CompilationPlan, int]:
    """Reconcile ``store`` with ``pricing`` in a single revision.

    Manual toggles are never touched.  Running it twice with the same pricing
    yields an empty plan the second time.
    """
    with store.transaction() as draft:
        plan = plan_sync(draft.base, pricing)
        apply_plan(draft, plan)
    return plan, store.revision


def entitlement_context(pricing: PricingModel, subscription: Subscription,
                        extra: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Evaluation context carrying a resolved subscription under ``user``."""
    ent = resolve_entitlements(pricing, subscription)
    ctx: dict[str, Any] = {
        "user": {
            "plan": subscription.plan,
            "addOns": sorted(subscription.add_ons),
            "subscription": {"features": dict(ent.features), "limits": dict(ent.limits)},
        }
    }
    return merge_values(ctx, extra) if extra else ctx


# -- hot reload --------------------------------------------------------------


def watch_settings(path: str | None = None, interval_ms: int | None = None) -> tuple[str | None, float]:
    """Resolve watch path and poll interval from arguments, then environment."""
    path = path or os.environ.get("HORIZON_PRICING_PATH")
    if interval_ms is None and os.environ.get("HORIZON_POLL_MS"):
        interval_ms = int(os.environ["HORIZON_POLL_MS"])
    interval = interval_ms / 1000.0 if interval_ms is not None else DEFAULT_POLL_SECONDS
    if interval <= 0:
        raise ValueError("poll interval must be positive")
    return path, interval


class PricingWatcher:
    """Polls a pricing file and syncs the store when its content changes.

    A file that fails to parse or sync is logged and skipped; the previously
    published snapshot stays live.
    """

    def __init__(self, path: str | os.PathLike, store: ToggleStore, interval: float = DEFAULT_POLL_SECONDS,
                 *, max_failures: int = 5, max_backoff: float = 30.0,
                 on_pricing: Callable[[PricingModel], None] | None = None):
        self.path = os.fspath(path)
        self.on_pricing = on_pricing
        # last pricing that parsed and synced; limit values only live here
        self.pricing: PricingModel | None = None
        self.store = store
        self.interval = interval
        self.max_failures = max_failures
        self.max_backoff = max_backoff
        self.failures = 0
        self.last_error: Exception | None = None
        self.error: WatchError | None = None
        self._digest: str | None = None
        self._listeners: list[Callable[[ChangeEvent], None]] = []
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def subscribe(self, listener: Callable[[ChangeEvent], None]) -> None:
        self._listeners.append(listener)

    def poll_once(self) -> ChangeEvent | None:
        try:
            with open(self.path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            self.failures += 1
            self.last_error = exc
            if self.failures >= self.max_failures:
                raise WatchError(f"cannot read {self.path} after {self.failures} attempts: {exc}") from exc
            log.warning("pricing file unreadable (%d/%d): %s", self.failures, self.max_failures, exc)
            return None
        self.failures = 0
        digest = hashlib.sha256(data).hexdigest()
        if digest == self._digest:
            return None
        self._digest = digest
        try:
            pricing = parse_pricing(data)
            sync_store(self.store, pricing)
        except HorizonError as exc:
            self.last_error = exc
            log.error("rejected pricing update from %s: %s", self.path, exc)
            return None
        self.last_error = None
        self.pricing = pricing
        if self.on_pricing is not None:
            self.on_pricing(pricing)
        event = ChangeEvent("pricingReloaded", self.store.revision, pricing.version, time.time())
        for listener in list(self._listeners):
            try:
                listener(event)
            except Exception:
                log.exception("pricing listener failed")
        return event

    def _next_delay(self) -> float:
        if self.failures:
            return min(self.interval * 2 ** self.failures, self.max_backoff)
        return self.interval

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                self.poll_once()
            except WatchError as exc:
                self.error = exc
                log.error("%s", exc)
                return
            self._stop.wait(self._next_delay())

    def start(self) -> "PricingWatcher":
        if self._thread is None:
            self._stop.clear()
            self._thread = threading.Thread(target=self._run, name="pricing-watcher", daemon=True)
            self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None


def watch_pricing(path: str | os.PathLike, store: ToggleStore, interval: float = DEFAULT_POLL_SECONDS,
                  stop: threading.Event | None = None) -> Iterator[ChangeEvent]:
    """Yield a ``pricingReloaded`` event each time a pricing change is applied."""
    watcher = PricingWatcher(path, store, interval)
    stop = stop or threading.Event()
    while not stop.is_set():
        event = watcher.poll_once()
        if event is not None:
            yield event
        stop.wait(watcher._next_delay())

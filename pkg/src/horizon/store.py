"""Persistent registry of feature toggles and rules.

All mutations go through a :class:`Draft` that is validated, written to disk
and only then published as a new immutable :class:`StoreSnapshot`.  Readers
grab ``store.snapshot()`` without locking; a snapshot never changes after it
has been handed out.
"""

from __future__ import annotations

import json
import logging
import os
import re
import tempfile
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Iterable, Iterator, Mapping

from .errors import (
    ConsistencyError,
    CycleError,
    DanglingReference,
    DependencyViolation,
    ExpressionError,
    NotFound,
    OperationDisabled,
    StoreError,
)
from .expressions import ContextSchema, TypedExpression, compile_rule

log = logging.getLogger(__name__)

DEFAULT_ENVIRONMENT = "default"
ORIGINS = ("manual", "pricingGenerated")

_ID_RE = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_.:\-]*\Z")


def _check_id(kind: str, value: str) -> None:
    if not isinstance(value, str) or not _ID_RE.match(value):
        raise StoreError(f"invalid {kind} id {value!r}")


@dataclass(frozen=True)
class FeatureToggle:
    id: str
    description: str = ""
    environments: frozenset[str] = frozenset({DEFAULT_ENVIRONMENT})
    rule_ids: tuple[str, ...] = ()
    depends_on: str | None = None
    default_value: bool = False
    origin: str = "manual"

    def __post_init__(self):
        object.__setattr__(self, "environments", frozenset(self.environments))
        object.__setattr__(self, "rule_ids", tuple(self.rule_ids))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "description": self.description,
            "environments": sorted(self.environments),
            "ruleIds": list(self.rule_ids),
            "dependsOn": self.depends_on,
            "defaultValue": self.default_value,
            "origin": self.origin,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FeatureToggle":
        known = {"id", "description", "environments", "ruleIds", "dependsOn", "defaultValue", "origin"}
        unknown = set(data) - known
        if unknown:
            raise StoreError(f"unknown toggle field(s) {sorted(unknown)}")
        if "id" not in data:
            raise StoreError("toggle needs an 'id'")
        default_value = data.get("defaultValue", False)
        if not isinstance(default_value, bool):
            raise StoreError("defaultValue must be a boolean")
        environments = data.get("environments") or [DEFAULT_ENVIRONMENT]
        if isinstance(environments, str) or not all(isinstance(e, str) for e in environments):
            raise StoreError("environments must be a list of names")
        return cls(
            id=data["id"],
            description=data.get("description") or "",
            environments=frozenset(environments),
            rule_ids=tuple(data.get("ruleIds") or ()),
            depends_on=data.get("dependsOn"),
            default_value=default_value,
            origin=data.get("origin", "manual"),
        )


@dataclass(frozen=True)
class Rule:
    id: str
    expression_source: str
    attached_features: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "attached_features", frozenset(self.attached_features))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "expressionSource": self.expression_source,
            "attachedFeatures": sorted(self.attached_features),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Rule":
        unknown = set(data) - {"id", "expressionSource", "attachedFeatures"}
        if unknown:
            raise StoreError(f"unknown rule field(s) {sorted(unknown)}")
        if "id" not in data or "expressionSource" not in data:
            raise StoreError("rule needs 'id' and 'expressionSource'")
        return cls(data["id"], data["expressionSource"], frozenset(data.get("attachedFeatures") or ()))


@dataclass(frozen=True)
class ChangeEvent:
    kind: str  # "pricingReloaded" | "storeMutated"
    revision: int
    pricing_version: str | None
    timestamp: float

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "revision": self.revision,
                "pricingVersion": self.pricing_version, "timestamp": self.timestamp}


@dataclass(frozen=True)
class StoreSnapshot:
    revision: int
    toggles: Mapping[str, FeatureToggle]
    rules: Mapping[str, Rule]
    context_schema: ContextSchema
    pricing_version: str | None = None
    compiled: Mapping[str, TypedExpression] = field(default_factory=dict, compare=False, repr=False)

    def toggle(self, toggle_id: str) -> FeatureToggle:
        try:
            return self.toggles[toggle_id]
        except KeyError:
            raise NotFound(f"feature {toggle_id!r} not found") from None

    def rule(self, rule_id: str) -> Rule:
        try:
            return self.rules[rule_id]
        except KeyError:
            raise NotFound(f"rule {rule_id!r} not found") from None

    def to_dict(self) -> dict[str, Any]:
        return {
            "revision": self.revision,
            "contextSchema": self.context_schema.to_dict(),
            "pricingVersion": self.pricing_version,
            "toggles": [self.toggles[k].to_dict() for k in sorted(self.toggles)],
            "rules": [self.rules[k].to_dict() for k in sorted(self.rules)],
        }


def empty_snapshot() -> StoreSnapshot:
    return StoreSnapshot(0, MappingProxyType({}), MappingProxyType({}), ContextSchema())


def audit(snapshot: StoreSnapshot) -> list[str]:
    """Referential-integrity problems in a snapshot; empty when consistent."""
    problems = []
    toggles, rules = snapshot.toggles, snapshot.rules
    for tid, toggle in toggles.items():
        if toggle.id != tid:
            problems.append(f"toggle keyed {tid!r} has id {toggle.id!r}")
        if toggle.origin not in ORIGINS:
            problems.append(f"toggle {tid!r} has unknown origin {toggle.origin!r}")
        for rid in toggle.rule_ids:
            if rid not in rules:
                problems.append(f"toggle {tid!r} references missing rule {rid!r}")
            elif tid not in rules[rid].attached_features:
                problems.append(f"rule {rid!r} does not list toggle {tid!r}")
        if len(set(toggle.rule_ids)) != len(toggle.rule_ids):
            problems.append(f"toggle {tid!r} lists a rule twice")
        if toggle.depends_on is not None and toggle.depends_on not in toggles:
            problems.append(f"toggle {tid!r} depends on missing toggle {toggle.depends_on!r}")
    for rid, rule in rules.items():
        if rule.id != rid:
            problems.append(f"rule keyed {rid!r} has id {rule.id!r}")
        for tid in rule.attached_features:
            if tid not in toggles:
                problems.append(f"rule {rid!r} attached to missing toggle {tid!r}")
            elif rid not in toggles[tid].rule_ids:
                problems.append(f"toggle {tid!r} does not list rule {rid!r}")
        if rid not in snapshot.compiled:
            problems.append(f"rule {rid!r} has no compiled expression")
    for tid in toggles:
        if _find_cycle(toggles, tid):
            problems.append(f"dependency cycle through {tid!r}")
            break
    return problems


def _find_cycle(toggles: Mapping[str, FeatureToggle], start: str) -> bool:
    seen = set()
    current: str | None = start
    while current is not None and current in toggles:
        if current in seen:
            return True
        seen.add(current)
        current = toggles[current].depends_on
    return False


# -- persistence -------------------------------------------------------------


class JsonFileStorage:
    """Whole-store JSON file, replaced atomically on every commit."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)

    def load(self) -> dict[str, Any] | None:
        try:
            return json.loads(self.path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except ValueError as exc:
            raise StoreError(f"store file {self.path} is corrupt: {exc}") from exc

    def save(self, data: dict[str, Any]) -> None:
        payload = json.dumps(data, indent=2, ensure_ascii=False).encode("utf-8")
        directory = self.path.parent.resolve()
        directory.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{self.path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        dir_fd = os.open(directory, os.O_RDONLY)
        try:
            os.fsync(dir_fd)
        finally:
            os.close(dir_fd)


class MemoryStorage:
    def __init__(self):
        self.data: dict[str, Any] | None = None

    def load(self):
        return json.loads(json.dumps(self.data)) if self.data is not None else None

    def save(self, data):
        self.data = json.loads(json.dumps(data))


def snapshot_from_dict(data: Mapping[str, Any]) -> StoreSnapshot:
    unknown = set(data) - {"revision", "contextSchema", "pricingVersion", "toggles", "rules"}
    if unknown:
        raise StoreError(f"unknown store field(s) {sorted(unknown)}")
    schema = ContextSchema.from_dict(data.get("contextSchema"))
    toggles = {}
    for raw in data.get("toggles", []):
        toggle = FeatureToggle.from_dict(raw)
        toggles[toggle.id] = toggle
    rules, compiled = {}, {}
    for raw in data.get("rules", []):
        rule = Rule.from_dict(raw)
        rules[rule.id] = rule
        try:
            compiled[rule.id] = compile_rule(rule.expression_source, schema)
        except ExpressionError as exc:
            raise ConsistencyError(f"stored rule {rule.id!r} is invalid: {exc}") from exc
    snapshot = StoreSnapshot(
        int(data.get("revision", 0)),
        MappingProxyType(toggles),
        MappingProxyType(rules),
        schema,
        data.get("pricingVersion"),
        MappingProxyType(compiled),
    )
    problems = audit(snapshot)
    if problems:
        raise ConsistencyError("; ".join(problems))
    return snapshot


# -- mutation ----------------------------------------------------------------


class Draft:
    """Mutable working copy of a snapshot.

    Each method enforces its own preconditions immediately, so a draft is
    consistent after every call.
    """

    def __init__(self, base: StoreSnapshot, deletion_enabled: bool = True):
        self.base = base
        self.toggles = dict(base.toggles)
        self.rules = dict(base.rules)
        self.compiled = dict(base.compiled)
        self.schema = base.context_schema
        self.pricing_version = base.pricing_version
        self.deletion_enabled = deletion_enabled
        self.changed = False

    # features

    def upsert_feature(self, toggle: FeatureToggle) -> None:
        _check_id("feature", toggle.id)
        if toggle.origin not in ORIGINS:
            raise StoreError(f"unknown origin {toggle.origin!r}")
        if not toggle.environments:
            raise StoreError(f"toggle {toggle.id!r} needs at least one environment")
        if len(set(toggle.rule_ids)) != len(toggle.rule_ids):
            raise ConsistencyError(f"toggle {toggle.id!r} lists a rule twice")
        for rid in toggle.rule_ids:
            if rid not in self.rules:
                raise DanglingReference(f"toggle {toggle.id!r} references unknown rule {rid!r}")
        if toggle.depends_on is not None:
            self._check_parent(toggle.id, toggle.depends_on)
        old = self.toggles.get(toggle.id)
        self.toggles[toggle.id] = toggle
        previous = set(old.rule_ids) if old else set()
        for rid in toggle.rule_ids:
            rule = self.rules[rid]
            self.rules[rid] = replace(rule, attached_features=rule.attached_features | {toggle.id})
        for rid in previous - set(toggle.rule_ids):
            rule = self.rules[rid]
            self.rules[rid] = replace(rule, attached_features=rule.attached_features - {toggle.id})
        self.changed = True

    def delete_feature(self, toggle_id: str) -> None:
        if not self.deletion_enabled:
            raise OperationDisabled("feature deletion is disabled")
        if toggle_id not in self.toggles:
            raise NotFound(f"feature {toggle_id!r} not found")
        dependents = tuple(sorted(t.id for t in self.toggles.values() if t.depends_on == toggle_id))
        if dependents:
            raise DependencyViolation(
                f"cannot delete {toggle_id!r}: {', '.join(dependents)} depend(s) on it", dependents
            )
        toggle = self.toggles.pop(toggle_id)
        for rid in toggle.rule_ids:
            rule = self.rules[rid]
            self.rules[rid] = replace(rule, attached_features=rule.attached_features - {toggle_id})
        self.changed = True

    def link_dependency(self, child: str, parent: str | None) -> None:
        if child not in self.toggles:
            raise NotFound(f"feature {child!r} not found")
        if parent is not None:
            if parent not in self.toggles:
                raise NotFound(f"feature {parent!r} not found")
            self._check_parent(child, parent)
        self.toggles[child] = replace(self.toggles[child], depends_on=parent)
        self.changed = True

    def _check_parent(self, child: str, parent: str) -> None:
        if parent not in self.toggles and parent != child:
            raise DanglingReference(f"toggle {child!r} depends on unknown toggle {parent!r}")
        current: str | None = parent
        while current is not None:
            if current == child:
                raise CycleError(f"linking {child!r} -> {parent!r} would create a dependency cycle")
            current = self.toggles[current].depends_on if current in self.toggles else None

    # rules

    def upsert_rule(self, rule: Rule) -> None:
        _check_id("rule", rule.id)
        typed = compile_rule(rule.expression_source, self.schema)
        for tid in rule.attached_features:
            if tid not in self.toggles:
                raise DanglingReference(f"rule {rule.id!r} attached to unknown feature {tid!r}")
        old = self.rules.get(rule.id)
        self.rules[rule.id] = rule
        self.compiled[rule.id] = typed
        for tid in sorted(rule.attached_features):
            toggle = self.toggles[tid]
            if rule.id not in toggle.rule_ids:
                self.toggles[tid] = replace(toggle, rule_ids=toggle.rule_ids + (rule.id,))
        if old is not None:
            for tid in old.attached_features - rule.attached_features:
                toggle = self.toggles[tid]
                self.toggles[tid] = replace(
                    toggle, rule_ids=tuple(r for r in toggle.rule_ids if r != rule.id)
                )
        self.changed = True

    def delete_rule(self, rule_id: str, force: bool = False) -> None:
        if rule_id not in self.rules:
            raise NotFound(f"rule {rule_id!r} not found")
        rule = self.rules[rule_id]
        if not force:
            for tid in sorted(rule.attached_features):
                toggle = self.toggles[tid]
                if toggle.origin == "pricingGenerated" and toggle.rule_ids == (rule_id,):
                    raise ConsistencyError(
                        f"rule {rule_id!r} is the only rule of generated toggle {tid!r}; use force"
                    )
        del self.rules[rule_id]
        self.compiled.pop(rule_id, None)
        for tid in rule.attached_features:
            toggle = self.toggles[tid]
            self.toggles[tid] = replace(toggle, rule_ids=tuple(r for r in toggle.rule_ids if r != rule_id))
        self.changed = True

    # schema

    def set_context_schema(self, schema: ContextSchema) -> None:
        compiled = {}
        for rid, rule in self.rules.items():
            try:
                compiled[rid] = compile_rule(rule.expression_source, schema)
            except ExpressionError as exc:
                raise ConsistencyError(f"rule {rid!r} no longer typechecks: {exc}") from exc
        self.schema = schema
        self.compiled = compiled
        self.changed = True

    def declare_attributes(self, attributes: Mapping[str, str]) -> None:
        self.set_context_schema(self.schema.merged(attributes))

    def set_pricing_version(self, version: str | None) -> None:
        if version != self.pricing_version:
            self.pricing_version = version
            self.changed = True

    def build(self, revision: int) -> StoreSnapshot:
        return StoreSnapshot(
            revision,
            MappingProxyType(dict(self.toggles)),
            MappingProxyType(dict(self.rules)),
            self.schema,
            self.pricing_version,
            MappingProxyType(dict(self.compiled)),
        )


class ToggleStore:
    """Single-writer toggle registry backed by a JSON file (or memory)."""

    def __init__(self, path: str | os.PathLike | None = None, *, storage=None,
                 deletion_enabled: bool = True):
        if storage is None:
            storage = JsonFileStorage(path) if path is not None else MemoryStorage()
        self.storage = storage
        self.deletion_enabled = deletion_enabled
        self._lock = threading.RLock()
        self._listeners: list[Callable[[ChangeEvent], None]] = []
        data = storage.load()
        self._snapshot = snapshot_from_dict(data) if data is not None else empty_snapshot()

    @property
    def revision(self) -> int:
        return self._snapshot.revision

    def snapshot(self) -> StoreSnapshot:
        return self._snapshot

    def subscribe(self, listener: Callable[[ChangeEvent], None]) -> None:
        self._listeners.append(listener)

    @contextmanager
    def transaction(self) -> Iterator[Draft]:
        """Batch several mutations into one revision.

        Nothing is persisted or published if the block raises.
        """
        with self._lock:
            draft = Draft(self._snapshot, self.deletion_enabled)
            yield draft
            if draft.changed:
                self._commit(draft)

    def _commit(self, draft: Draft) -> int:
        snapshot = draft.build(self._snapshot.revision + 1)
        problems = audit(snapshot)
        if problems:
            raise ConsistencyError("; ".join(problems))
        self.storage.save(snapshot.to_dict())
        self._snapshot = snapshot
        event = ChangeEvent("storeMutated", snapshot.revision, snapshot.pricing_version, time.time())
        for listener in list(self._listeners):
            try:
                listener(event)
            except Exception:  # listeners must not break commits
                log.exception("change listener failed")
        return snapshot.revision

    def _apply(self, op: Callable[[Draft], None]) -> int:
        with self.transaction() as draft:
            op(draft)
        return self._snapshot.revision

    # reads

    def read_feature(self, toggle_id: str) -> FeatureToggle:
        return self._snapshot.toggle(toggle_id)

    def list_features(self) -> list[FeatureToggle]:
        snap = self._snapshot
        return [snap.toggles[k] for k in sorted(snap.toggles)]

    def read_rule(self, rule_id: str) -> Rule:
        return self._snapshot.rule(rule_id)

    def list_rules(self) -> list[Rule]:
        snap = self._snapshot
        return [snap.rules[k] for k in sorted(snap.rules)]

    # writes

    def upsert_feature(self, toggle: FeatureToggle) -> int:
        return self._apply(lambda d: d.upsert_feature(toggle))

    def delete_feature(self, toggle_id: str) -> int:
        return self._apply(lambda d: d.delete_feature(toggle_id))

    def link_dependency(self, child: str, parent: str | None) -> int:
        return self._apply(lambda d: d.link_dependency(child, parent))

    def upsert_rule(self, rule: Rule) -> int:
        return self._apply(lambda d: d.upsert_rule(rule))

    def delete_rule(self, rule_id: str, force: bool = False) -> int:
        return self._apply(lambda d: d.delete_rule(rule_id, force))

    def set_context_schema(self, schema: ContextSchema) -> int:
        return self._apply(lambda d: d.set_context_schema(schema))

    def declare_attributes(self, attributes: Mapping[str, str]) -> int:
        return self._apply(lambda d: d.declare_attributes(attributes))


"""Feature evaluation over store snapshots."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from types import MappingProxyType
from typing import Any, Iterable, Mapping

from .errors import EvaluationError, RevisionMismatch, UnknownFeature
from .expressions import EvaluationContext, evaluate, references
from .store import DEFAULT_ENVIRONMENT, StoreSnapshot

RULE_MATCHED = "ruleMatched"
RULE_FAILED = "ruleFailed"
PARENT_DISABLED = "parentDisabled"
DEFAULT_USED = "defaultUsed"
ENVIRONMENT_EXCLUDED = "environmentExcluded"
REASONS = (RULE_MATCHED, RULE_FAILED, PARENT_DISABLED, DEFAULT_USED, ENVIRONMENT_EXCLUDED)


@dataclass(frozen=True)
class EvaluationResult:
    feature_id: str
    value: bool
    reason: str
    rule_id: str | None = None
    diagnostics: str | None = None
    snapshot_revision: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "featureId": self.feature_id,
            "value": self.value,
            "reason": self.reason,
            "ruleId": self.rule_id,
            "diagnostics": self.diagnostics,
            "snapshotRevision": self.snapshot_revision,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EvaluationResult":
        return cls(data["featureId"], data["value"], data["reason"], data.get("ruleId"),
                   data.get("diagnostics"), data.get("snapshotRevision", 0))


@dataclass(frozen=True)
class BootstrapPayload:
    results: Mapping[str, EvaluationResult]
    context_digest: str
    pricing_version: str | None
    issued_at: float
    snapshot_revision: int
    environment: str = DEFAULT_ENVIRONMENT

    def to_dict(self) -> dict[str, Any]:
        return {
            "results": {k: self.results[k].to_dict() for k in sorted(self.results)},
            "contextDigest": self.context_digest,
            "pricingVersion": self.pricing_version,
            "issuedAt": self.issued_at,
            "snapshotRevision": self.snapshot_revision,
            "environment": self.environment,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BootstrapPayload":
        return cls(
            MappingProxyType({k: EvaluationResult.from_dict(v) for k, v in data["results"].items()}),
            data["contextDigest"],
            data.get("pricingVersion"),
            data["issuedAt"],
            data["snapshotRevision"],
            data.get("environment", DEFAULT_ENVIRONMENT),
        )

    def values(self) -> dict[str, bool]:
        return {k: r.value for k, r in self.results.items()}


def context_digest(ctx: EvaluationContext) -> str:
    canonical = json.dumps(ctx.to_dict(), sort_keys=True, separators=(",", ":"),
                           ensure_ascii=False, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class _Run:
    """One evaluation pass; memoizes per-toggle results so parents run once."""

    def __init__(self, snapshot: StoreSnapshot, ctx: EvaluationContext, environment: str,
                 memo: dict[str, EvaluationResult] | None = None):
        self.snapshot = snapshot
        self.ctx = ctx
        self.environment = environment
        self.memo = memo if memo is not None else {}

    def result(self, feature_id: str) -> EvaluationResult:
        cached = self.memo.get(feature_id)
        if cached is None:
            cached = self.memo[feature_id] = self._evaluate(feature_id)
        return cached

    def _evaluate(self, feature_id: str) -> EvaluationResult:
        snap = self.snapshot
        toggle = snap.toggles.get(feature_id)
        if toggle is None:
            raise UnknownFeature(feature_id)
        rev = snap.revision
        if self.environment not in toggle.environments:
            return EvaluationResult(feature_id, False, ENVIRONMENT_EXCLUDED, None,
                                    f"not enabled in environment {self.environment!r}", rev)
        if toggle.depends_on is not None:
            parent = self.result(toggle.depends_on)
            if not parent.value:
                return EvaluationResult(feature_id, False, PARENT_DISABLED, None,
                                        f"parent {toggle.depends_on!r} is disabled", rev)
        rule_id = None
        for rule_id in toggle.rule_ids:
            try:
                passed = evaluate(snap.compiled[rule_id], self.ctx)
            except EvaluationError as exc:
                return EvaluationResult(feature_id, toggle.default_value, DEFAULT_USED, rule_id,
                                        str(exc), rev)
            if not passed:
                return EvaluationResult(feature_id, False, RULE_FAILED, rule_id, None, rev)
        return EvaluationResult(feature_id, True, RULE_MATCHED, rule_id, None, rev)


def evaluate_feature(snapshot: StoreSnapshot, feature_id: str,
                     ctx: EvaluationContext | Mapping[str, Any] | None,
                     environment: str = DEFAULT_ENVIRONMENT) -> EvaluationResult:
    """Evaluate one toggle.

    Unknown ids raise :class:`UnknownFeature`; that is a configuration error
    and is never replaced by a default value.
    """
    return _Run(snapshot, EvaluationContext.of(ctx), environment).result(feature_id)


def visible_features(snapshot: StoreSnapshot, environment: str) -> list[str]:
    return sorted(t.id for t in snapshot.toggles.values() if environment in t.environments)


def evaluate_all(snapshot: StoreSnapshot, ctx: EvaluationContext | Mapping[str, Any] | None,
                 environment: str = DEFAULT_ENVIRONMENT, *, now: float | None = None) -> BootstrapPayload:
    ctx = EvaluationContext.of(ctx)
    run = _Run(snapshot, ctx, environment)
    results = {fid: run.result(fid) for fid in visible_features(snapshot, environment)}
    return BootstrapPayload(
        MappingProxyType(results),
        context_digest(ctx),
        snapshot.pricing_version,
        time.time() if now is None else now,
        snapshot.revision,
        environment,
    )


def affected_features(snapshot: StoreSnapshot, changed: Iterable[str]) -> set[str]:
    """Toggles whose rules, or whose ancestors' rules, read a changed attribute."""
    changed = set(changed)
    direct = set()
    for toggle in snapshot.toggles.values():
        for rid in toggle.rule_ids:
            typed = snapshot.compiled[rid]
            if any(references(typed, path) for path in changed):
                direct.add(toggle.id)
                break
    affected = set()
    for toggle in snapshot.toggles.values():
        current = toggle
        while current is not None:
            if current.id in direct:
                affected.add(toggle.id)
                break
            current = snapshot.toggles.get(current.depends_on) if current.depends_on else None
    return affected


def reevaluate_subset(snapshot: StoreSnapshot, ctx: EvaluationContext | Mapping[str, Any] | None,
                      changed_attributes: Iterable[str], previous: BootstrapPayload,
                      *, now: float | None = None) -> BootstrapPayload:
    """Refresh a bootstrap payload after some context attributes changed.

    Only toggles that can observe a changed attribute are recomputed; the
    rest are carried over from ``previous``.
    """
    if previous.snapshot_revision != snapshot.revision:
        raise RevisionMismatch(
            f"payload is from revision {previous.snapshot_revision}, snapshot is {snapshot.revision}"
        )
    ctx = EvaluationContext.of(ctx)
    affected = affected_features(snapshot, changed_attributes)
    memo = {fid: r for fid, r in previous.results.items() if fid not in affected}
    run = _Run(snapshot, ctx, previous.environment, memo)
    results = {fid: run.result(fid) for fid in visible_features(snapshot, previous.environment)}
    return BootstrapPayload(
        MappingProxyType(results),
        context_digest(ctx),
        snapshot.pricing_version,
        time.time() if now is None else now,
        snapshot.revision,
        previous.environment,
    )

"""SaaS pricing model: plans, add-ons, features and usage limits.

A pricing document is YAML with the top-level keys ``saasName``, ``version``,
``features``, ``usageLimits``, ``plans`` and ``addOns``.  Parsing is strict:
unknown or duplicated keys are rejected rather than ignored, because the
pricing is the source of truth for everything generated from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

import yaml

from .errors import (
    AddOnUnavailable,
    PricingSyntaxError,
    SchemaError,
    SemanticError,
    UnknownAddOn,
    UnknownPlan,
)
from .expressions import is_attribute_path

FEATURE_KINDS = ("functional", "extraFunctional")

ZOOM_PRICING_PATH = Path(__file__).parent / "fixtures" / "zoom.pricing.yaml"

Number = float | int


@dataclass(frozen=True)
class FeatureDef:
    name: str
    kind: str = "functional"
    description: str = ""


@dataclass(frozen=True)
class UsageLimitDef:
    name: str
    feature: str
    unit: str
    context_attribute: str


@dataclass(frozen=True)
class Plan:
    name: str
    price: Number | None = None
    feature_values: dict[str, bool] = field(default_factory=dict)
    usage_limit_values: dict[str, Number] = field(default_factory=dict)


@dataclass(frozen=True)
class AddOn:
    name: str
    available_for: tuple[str, ...]
    price: Number | None = None
    feature_values: dict[str, bool] = field(default_factory=dict)
    usage_limit_extensions: dict[str, Number] = field(default_factory=dict)


@dataclass(frozen=True)
class PricingModel:
    name: str
    version: str
    plans: tuple[Plan, ...]
    add_ons: tuple[AddOn, ...] = ()
    features: tuple[FeatureDef, ...] = ()
    usage_limits: tuple[UsageLimitDef, ...] = ()

    def plan(self, name: str) -> Plan:
        for plan in self.plans:
            if plan.name == name:
                return plan
        raise UnknownPlan(f"unknown plan {name!r}")

    def add_on(self, name: str) -> AddOn:
        for add_on in self.add_ons:
            if add_on.name == name:
                return add_on
        raise UnknownAddOn(f"unknown add-on {name!r}")

    def feature(self, name: str) -> FeatureDef:
        for feature in self.features:
            if feature.name == name:
                return feature
        raise KeyError(name)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @property
    def limit_names(self) -> tuple[str, ...]:
        return tuple(u.name for u in self.usage_limits)

    def available_add_ons(self, plan: str) -> tuple[AddOn, ...]:
        return tuple(a for a in self.add_ons if plan in a.available_for)

    def limits_for(self, feature: str) -> tuple[UsageLimitDef, ...]:
        return tuple(u for u in self.usage_limits if u.feature == feature)


@dataclass(frozen=True)
class Subscription:
    plan: str
    add_ons: frozenset[str] = frozenset()

    def __init__(self, plan: str, add_ons: Iterable[str] = ()):
        object.__setattr__(self, "plan", plan)
        object.__setattr__(self, "add_ons", frozenset(add_ons))


@dataclass(frozen=True)
class EntitlementMap:
    features: dict[str, bool]
    limits: dict[str, Number]
    pricing_version: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "features": dict(self.features),
            "limits": dict(self.limits),
            "pricingVersion": self.pricing_version,
        }


# -- parsing -----------------------------------------------------------------


class _StrictLoader(yaml.SafeLoader):
    """SafeLoader that refuses duplicate mapping keys."""


def _construct_mapping(loader: _StrictLoader, node: yaml.MappingNode, deep: bool = False):
    loader.flatten_mapping(node)
    seen: dict[Any, yaml.Node] = {}
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            mark = key_node.start_mark
            raise SchemaError(
                f"duplicate key {key!r} (line {mark.line + 1}, column {mark.column + 1})"
            )
        seen[key] = key_node
    return loader.construct_mapping(node, deep=deep)


_StrictLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping
)


def _load_yaml(source: bytes | str) -> Any:
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise PricingSyntaxError(f"document is not UTF-8: {exc}") from exc
    try:
        return yaml.load(source, Loader=_StrictLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        column = mark.column + 1 if mark else None
        raise PricingSyntaxError(str(exc.problem or exc), line, column) from exc
    except yaml.YAMLError as exc:
        raise PricingSyntaxError(str(exc)) from exc


def _mapping(obj: Any, path: str, required: Iterable[str], optional: Iterable[str] = ()) -> dict:
    if not isinstance(obj, dict):
        raise SchemaError(f"expected a mapping, got {type(obj).__name__}", path)
    required = tuple(required)
    allowed = set(required) | set(optional)
    for key in obj:
        if key not in allowed:
            raise SchemaError(f"unknown key {key!r}", path)
    for key in required:
        if key not in obj:
            raise SchemaError(f"missing key {key!r}", path)
    return obj


def _sequence(obj: Any, path: str) -> list:
    if not isinstance(obj, list):
        raise SchemaError(f"expected a list, got {type(obj).__name__}", path)
    return obj


def _string(obj: Any, path: str) -> str:
    if not isinstance(obj, str) or not obj:
        raise SchemaError("expected a non-empty string", path)
    return obj


def _number(obj: Any, path: str) -> Number:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise SchemaError(f"expected a number, got {obj!r}", path)
    return obj


def _price(obj: Any, path: str) -> Number | None:
    if obj is None:
        return None
    value = _number(obj, path)
    if not value >= 0:
        raise SchemaError(f"price must be non-negative, got {value!r}", path)
    return value


def _bool_map(obj: Any, path: str) -> dict[str, bool]:
    if not isinstance(obj, dict):
        raise SchemaError("expected a mapping of name to boolean", path)
    out = {}
    for key, value in obj.items():
        if not isinstance(value, bool):
            raise SchemaError(f"expected a boolean, got {value!r}", f"{path}.{key}")
        out[_string(key, path)] = value
    return out


def _number_map(obj: Any, path: str) -> dict[str, Number]:
    if not isinstance(obj, dict):
        raise SchemaError("expected a mapping of name to number", path)
    return {_string(key, path): _number(value, f"{path}.{key}") for key, value in obj.items()}


def pricing_from_document(doc: Any) -> PricingModel:
    """Build and validate a model from an already-decoded document."""
    doc = _mapping(doc, "", ("saasName", "version", "features", "usageLimits", "plans", "addOns"))
    version = doc["version"]
    if isinstance(version, (int, float)) and not isinstance(version, bool):
        version = str(version)

    features = []
    for i, raw in enumerate(_sequence(doc["features"], "features")):
        path = f"features[{i}]"
        raw = _mapping(raw, path, ("name", "kind"), ("description",))
        kind = raw["kind"]
        if kind not in FEATURE_KINDS:
            raise SchemaError(f"kind must be one of {FEATURE_KINDS}, got {kind!r}", path)
        description = raw.get("description") or ""
        if not isinstance(description, str):
            raise SchemaError("description must be a string", path)
        features.append(FeatureDef(_string(raw["name"], path), kind, description))

    limits = []
    for i, raw in enumerate(_sequence(doc["usageLimits"], "usageLimits")):
        path = f"usageLimits[{i}]"
        raw = _mapping(raw, path, ("name", "feature", "unit", "contextAttribute"))
        limits.append(
            UsageLimitDef(
                _string(raw["name"], path),
                _string(raw["feature"], path),
                _string(raw["unit"], path),
                _string(raw["contextAttribute"], path),
            )
        )

    plans = []
    for i, raw in enumerate(_sequence(doc["plans"], "plans")):
        path = f"plans[{i}]"
        raw = _mapping(raw, path, ("name", "features", "usageLimits"), ("price",))
        plans.append(
            Plan(
                _string(raw["name"], path),
                _price(raw.get("price"), f"{path}.price"),
                _bool_map(raw["features"], f"{path}.features"),
                _number_map(raw["usageLimits"], f"{path}.usageLimits"),
            )
        )

    add_ons = []
    for i, raw in enumerate(_sequence(doc["addOns"], "addOns")):
        path = f"addOns[{i}]"
        raw = _mapping(
            raw, path, ("name", "availableFor"), ("price", "features", "usageLimitExtensions")
        )
        available = tuple(
            _string(p, f"{path}.availableFor") for p in _sequence(raw["availableFor"], f"{path}.availableFor")
        )
        add_ons.append(
            AddOn(
                _string(raw["name"], path),
                available,
                _price(raw.get("price"), f"{path}.price"),
                _bool_map(raw.get("features") or {}, f"{path}.features"),
                _number_map(raw.get("usageLimitExtensions") or {}, f"{path}.usageLimitExtensions"),
            )
        )

    return build_pricing(_string(doc["saasName"], "saasName"), _string(version, "version"),
                         plans, add_ons, features, limits)


def build_pricing(
    name: str,
    version: str,
    plans: Iterable[Plan],
    add_ons: Iterable[AddOn] = (),
    features: Iterable[FeatureDef] = (),
    usage_limits: Iterable[UsageLimitDef] = (),
) -> PricingModel:
    """Validate invariants and return a normalized model.

    Plans get explicit ``False``/``0`` entries for every feature and limit they
    leave out, and each add-on's ``available_for`` is reordered to follow plan
    declaration order, so that equal pricings compare equal.
    """
    plans, add_ons = list(plans), list(add_ons)
    features, usage_limits = list(features), list(usage_limits)

    for label, items in (("plan", plans), ("add-on", add_ons), ("feature", features),
                         ("usage limit", usage_limits)):
        seen: set[str] = set()
        for item in items:
            if item.name in seen:
                raise SemanticError(f"duplicate {label} name {item.name!r}", item.name)
            seen.add(item.name)
    if not plans:
        raise SemanticError("a pricing needs at least one plan")

    feature_names = [f.name for f in features]
    limit_names = [u.name for u in usage_limits]
    plan_names = [p.name for p in plans]

    for feature in features:
        if feature.kind not in FEATURE_KINDS:
            raise SemanticError(f"feature {feature.name!r} has unknown kind {feature.kind!r}", feature.name)
    for limit in usage_limits:
        if limit.feature not in feature_names:
            raise SemanticError(
                f"usage limit {limit.name!r} references unknown feature {limit.feature!r}", limit.name
            )
        if not is_attribute_path(limit.context_attribute):
            raise SemanticError(
                f"usage limit {limit.name!r} has invalid contextAttribute {limit.context_attribute!r}",
                limit.name,
            )

    normalized_plans = []
    for plan in plans:
        _check_keys(plan.name, "features", plan.feature_values, feature_names)
        _check_keys(plan.name, "usageLimits", plan.usage_limit_values, limit_names)
        _check_limits(plan.name, plan.usage_limit_values)
        normalized_plans.append(
            Plan(
                plan.name,
                plan.price,
                {f: bool(plan.feature_values.get(f, False)) for f in feature_names},
                {u: plan.usage_limit_values.get(u, 0) for u in limit_names},
            )
        )

    normalized_add_ons = []
    for add_on in add_ons:
        if not add_on.available_for:
            raise SemanticError(f"add-on {add_on.name!r} is not available for any plan", add_on.name)
        if len(set(add_on.available_for)) != len(add_on.available_for):
            raise SemanticError(f"add-on {add_on.name!r} lists a plan twice", add_on.name)
        unknown = [p for p in add_on.available_for if p not in plan_names]
        if unknown:
            raise SemanticError(
                f"add-on {add_on.name!r} is available for unknown plan(s) {unknown}", add_on.name
            )
        _check_keys(add_on.name, "features", add_on.feature_values, feature_names)
        _check_keys(add_on.name, "usageLimitExtensions", add_on.usage_limit_extensions, limit_names)
        _check_limits(add_on.name, add_on.usage_limit_extensions)
        normalized_add_ons.append(
            AddOn(
                add_on.name,
                tuple(p for p in plan_names if p in add_on.available_for),
                add_on.price,
                {f: add_on.feature_values[f] for f in feature_names if f in add_on.feature_values},
                {u: add_on.usage_limit_extensions[u] for u in limit_names
                 if u in add_on.usage_limit_extensions},
            )
        )

    for feature in feature_names:
        governed = any(p.feature_values[feature] for p in normalized_plans) or any(
            a.feature_values.get(feature) for a in normalized_add_ons
        )
        if not governed:
            raise SemanticError(f"feature {feature!r} is not granted by any plan or add-on", feature)

    return PricingModel(
        name,
        version,
        tuple(normalized_plans),
        tuple(normalized_add_ons),
        tuple(features),
        tuple(usage_limits),
    )


def _check_keys(owner: str, what: str, values: Mapping[str, Any], declared: list[str]) -> None:
    unknown = sorted(set(values) - set(declared))
    if unknown:
        raise SemanticError(f"{owner!r} sets undeclared {what} {unknown}", owner)


def _check_limits(owner: str, values: Mapping[str, Number]) -> None:
    for key, value in values.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not value >= 0:
            raise SemanticError(f"{owner!r} has invalid value {value!r} for limit {key!r}", owner)


def parse_pricing(source: bytes | str) -> PricingModel:
    """Parse a YAML pricing document into a validated :class:`PricingModel`."""
    return pricing_from_document(_load_yaml(source))


def load_pricing(path) -> PricingModel:
    with open(path, "rb") as fh:
        return parse_pricing(fh.read())


# -- serialization -----------------------------------------------------------


def pricing_to_document(pricing: PricingModel) -> dict[str, Any]:
    features = []
    for f in pricing.features:
        entry: dict[str, Any] = {"name": f.name, "kind": f.kind}
        if f.description:
            entry["description"] = f.description
        features.append(entry)
    plans = []
    for p in pricing.plans:
        entry = {"name": p.name}
        if p.price is not None:
            entry["price"] = p.price
        entry["features"] = dict(p.feature_values)
        entry["usageLimits"] = dict(p.usage_limit_values)
        plans.append(entry)
    add_ons = []
    for a in pricing.add_ons:
        entry = {"name": a.name}
        if a.price is not None:
            entry["price"] = a.price
        entry["availableFor"] = list(a.available_for)
        if a.feature_values:
            entry["features"] = dict(a.feature_values)
        if a.usage_limit_extensions:
            entry["usageLimitExtensions"] = dict(a.usage_limit_extensions)
        add_ons.append(entry)
    return {
        "saasName": pricing.name,
        "version": pricing.version,
        "features": features,
        "usageLimits": [
            {"name": u.name, "feature": u.feature, "unit": u.unit,
             "contextAttribute": u.context_attribute}
            for u in pricing.usage_limits
        ],
        "plans": plans,
        "addOns": add_ons,
    }


def serialize_pricing(pricing: PricingModel) -> str:
    return yaml.safe_dump(pricing_to_document(pricing), sort_keys=False, allow_unicode=True)


# -- subscriptions -----------------------------------------------------------


def configuration_space(pricing: PricingModel) -> int:
    """Number of distinct valid subscriptions.

    Each plan contributes one subscription per subset of the add-ons available
    for it.
    """
    return sum(2 ** len(pricing.available_add_ons(plan.name)) for plan in pricing.plans)


def iter_subscriptions(pricing: PricingModel) -> Iterator[Subscription]:
    for plan in pricing.plans:
        names = [a.name for a in pricing.available_add_ons(plan.name)]
        for size in range(len(names) + 1):
            for chosen in combinations(names, size):
                yield Subscription(plan.name, chosen)


def validate_subscription(pricing: PricingModel, sub: Subscription) -> None:
    pricing.plan(sub.plan)
    for name in sorted(sub.add_ons):
        add_on = pricing.add_on(name)
        if sub.plan not in add_on.available_for:
            raise AddOnUnavailable(f"add-on {name!r} is not available for plan {sub.plan!r}")


def resolve_entitlements(pricing: PricingModel, sub: Subscription) -> EntitlementMap:
    """Flatten a subscription into feature flags and limit values.

    Features are granted if the plan or any contracted add-on grants them;
    a limit is the largest of the plan value and the add-on extensions.
    """
    validate_subscription(pricing, sub)
    plan = pricing.plan(sub.plan)
    add_ons = [pricing.add_on(name) for name in sorted(sub.add_ons)]
    features = {}
    for name in pricing.feature_names:
        features[name] = plan.feature_values[name] or any(
            a.feature_values.get(name, False) for a in add_ons
        )
    limits = {}
    for name in pricing.limit_names:
        values = [plan.usage_limit_values[name]]
        values += [a.usage_limit_extensions[name] for a in add_ons if name in a.usage_limit_extensions]
        limits[name] = max(values)
    return EntitlementMap(features, limits, pricing.version)


def format_number(value: Number) -> str:
    if isinstance(value, float) and value.is_integer() and math.isfinite(value):
        return str(int(value))
    return str(value)

"""Pricing-driven feature toggles: pricing models compiled into toggle rules,
a persistent toggle store, an evaluator with HTTP and in-process front ends,
and a capability scorecard for feature-toggling tools."""

from .compiler import compile_pricing, entitlement_context, sync_store, PricingWatcher
from .errors import HorizonError
from .evaluator import EvaluationResult, BootstrapPayload, evaluate_all, evaluate_feature, reevaluate_subset
from .expressions import ContextSchema, EvaluationContext, compile_rule, evaluate, parse_expression, typecheck
from .pricing import (
    PricingModel,
    Subscription,
    configuration_space,
    load_pricing,
    parse_pricing,
    resolve_entitlements,
)
from .sdk import ClientCache, FeatureClient
from .store import FeatureToggle, Rule, StoreSnapshot, ToggleStore

__version__ = "0.1.0"

__all__ = [
    "BootstrapPayload", "ClientCache", "ContextSchema", "EvaluationContext", "EvaluationResult",
    "FeatureClient", "FeatureToggle", "HorizonError", "PricingModel", "PricingWatcher", "Rule",
    "StoreSnapshot", "Subscription", "ToggleStore", "compile_pricing", "compile_rule",
    "configuration_space", "entitlement_context", "evaluate", "evaluate_all", "evaluate_feature",
    "load_pricing", "parse_expression", "parse_pricing", "reevaluate_subset", "resolve_entitlements",
    "sync_store", "typecheck",
]

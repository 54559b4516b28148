"""In-process SDKs: a server-side facade and a client-side result cache."""

from __future__ import annotations

import logging
from typing import Any, Callable, Iterable, Mapping

from .errors import UnknownFeature
from .evaluator import BootstrapPayload, EvaluationResult, evaluate_all, evaluate_feature, reevaluate_subset
from .expressions import EvaluationContext, merge_values
from .store import DEFAULT_ENVIRONMENT, StoreSnapshot, ToggleStore

log = logging.getLogger(__name__)


class FeatureClient:
    """Server-side facade: every call evaluates against the latest snapshot."""

    def __init__(self, store: ToggleStore, environment: str = DEFAULT_ENVIRONMENT):
        self.store = store
        self.environment = environment

    def evaluate(self, feature_id: str, context: Mapping[str, Any] | None = None) -> EvaluationResult:
        return evaluate_feature(self.store.snapshot(), feature_id, context, self.environment)

    def is_feature_available(self, feature_id: str, context: Mapping[str, Any] | None = None) -> bool:
        return self.evaluate(feature_id, context).value

    def evaluate_all(self, context: Mapping[str, Any] | None = None) -> BootstrapPayload:
        return evaluate_all(self.store.snapshot(), context, self.environment)


class ClientCache:
    """Client-side cache seeded from a bootstrap payload.

    ``is_enabled`` never touches the store.  ``update_context`` recomputes
    only the toggles that read a changed attribute, unless the store moved to
    a new revision, in which case everything is recomputed.
    """

    def __init__(self, source: ToggleStore | Callable[[], StoreSnapshot],
                 context: Mapping[str, Any] | None = None, environment: str = DEFAULT_ENVIRONMENT):
        self._snapshot_fn = source.snapshot if isinstance(source, ToggleStore) else source
        self.environment = environment
        self.context: dict[str, Any] = dict(EvaluationContext.of(context).values)
        self.full_refreshes = 0
        self.partial_refreshes = 0
        self.payload = self._bootstrap(self._snapshot_fn())

    def _bootstrap(self, snapshot: StoreSnapshot) -> BootstrapPayload:
        self.full_refreshes += 1
        return evaluate_all(snapshot, self.context, self.environment)

    @property
    def revision(self) -> int:
        return self.payload.snapshot_revision

    def is_enabled(self, feature_id: str) -> bool:
        result = self.payload.results.get(feature_id)
        if result is None:
            raise UnknownFeature(feature_id)
        return result.value

    def result(self, feature_id: str) -> EvaluationResult:
        result = self.payload.results.get(feature_id)
        if result is None:
            raise UnknownFeature(feature_id)
        return result

    def values(self) -> dict[str, bool]:
        return self.payload.values()

    def update_context(self, changes: Mapping[str, Any]) -> BootstrapPayload:
        """Merge ``changes`` into the context and refresh affected results.

        Keys of ``changes`` may be nested mappings or dotted paths; each leaf
        path is treated as a changed attribute.
        """
        self.context = merge_values(self.context, EvaluationContext(changes).values)
        snapshot = self._snapshot_fn()
        if snapshot.revision != self.payload.snapshot_revision:
            self.payload = self._bootstrap(snapshot)
        else:
            self.partial_refreshes += 1
            self.payload = reevaluate_subset(snapshot, self.context, _leaf_paths(changes), self.payload)
        return self.payload

    def refresh(self) -> BootstrapPayload:
        """Re-evaluate everything if the store revision changed."""
        snapshot = self._snapshot_fn()
        if snapshot.revision != self.payload.snapshot_revision:
            self.payload = self._bootstrap(snapshot)
        return self.payload


def _leaf_paths(changes: Mapping[str, Any], prefix: str = "") -> Iterable[str]:
    paths = []
    for key, value in changes.items():
        path = f"{prefix}{key}"
        paths.append(path)
        if isinstance(value, Mapping) and value:
            paths.extend(_leaf_paths(value, path + "."))
    return paths

"""HTTP+JSON front end for the store, the evaluator and pricing sync.

Endpoints::

    GET    /healthz
    GET    /features                  GET /rules
    GET    /features/{id}             GET /rules/{id}
    PUT    /features/{id}             PUT /rules/{id}
    DELETE /features/{id}             DELETE /rules/{id}[?force=true]
    POST   /features/{id}/dependency  {"parent": id | null}
    POST   /evaluate                  {featureId, context, subscription?, environment?, subject?}
    POST   /evaluate-all              {context, subscription?, environment?, subject?}
    POST   /pricing/sync              {"pricing": yaml-text}?  (defaults to the watched file)

A ``subscription`` (``{"plan", "addOns"}``) is resolved against the pricing
currently loaded by the service and merged into the context, so pricing
changes take effect on the next request.

Errors are ``{"code", "message", "detail"?}``.  Management endpoints require
``Authorization: Bearer <token>`` when a bearer token is configured.
Evaluation responses are always signed.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any
from urllib.parse import parse_qs, unquote, urlsplit

from . import errors
from .compiler import DEFAULT_POLL_SECONDS, PricingWatcher, entitlement_context, sync_store
from .errors import ConfigError, HorizonError
from .evaluator import evaluate_all, evaluate_feature
from .pricing import PricingModel, Subscription, load_pricing, parse_pricing
from .store import DEFAULT_ENVIRONMENT, FeatureToggle, Rule, ToggleStore
from .tokens import DEFAULT_TTL, sign_result

log = logging.getLogger(__name__)

_STATUS = {
    errors.UnknownFeature: HTTPStatus.NOT_FOUND,
    errors.NotFound: HTTPStatus.NOT_FOUND,
    errors.ExpressionError: HTTPStatus.UNPROCESSABLE_ENTITY,
    errors.PricingError: HTTPStatus.UNPROCESSABLE_ENTITY,
    errors.SchemaConflict: HTTPStatus.CONFLICT,
    errors.ConflictError: HTTPStatus.CONFLICT,
    errors.CycleError: HTTPStatus.CONFLICT,
    errors.DanglingReference: HTTPStatus.CONFLICT,
    errors.DependencyViolation: HTTPStatus.CONFLICT,
    errors.ConsistencyError: HTTPStatus.CONFLICT,
    errors.OperationDisabled: HTTPStatus.FORBIDDEN,
    errors.StoreError: HTTPStatus.BAD_REQUEST,
}


def status_for(exc: HorizonError) -> HTTPStatus:
    for cls in type(exc).__mro__:
        if cls in _STATUS:
            return _STATUS[cls]
    return HTTPStatus.BAD_REQUEST


class ApiError(Exception):
    def __init__(self, status: HTTPStatus, code: str, message: str, detail: Any = None):
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail
        super().__init__(message)


@dataclass
class ServiceConfig:
    secret: str
    port: int = 8080
    host: str = "127.0.0.1"
    store_path: str | None = None
    pricing_path: str | None = None
    bearer: str | None = None
    poll_interval: float = DEFAULT_POLL_SECONDS
    token_ttl: float = DEFAULT_TTL
    watch: bool = True

    def __post_init__(self):
        if not self.secret:
            raise ConfigError("a signing secret is required (HORIZON_SECRET)")
        if self.pricing_path and not os.path.isfile(self.pricing_path):
            raise ConfigError(f"pricing file {self.pricing_path!r} is not readable")

    @classmethod
    def from_env(cls, **overrides) -> "ServiceConfig":
        values = {
            "secret": os.environ.get("HORIZON_SECRET", ""),
            "bearer": os.environ.get("HORIZON_BEARER") or None,
            "pricing_path": os.environ.get("HORIZON_PRICING_PATH") or None,
        }
        if os.environ.get("HORIZON_POLL_MS"):
            values["poll_interval"] = int(os.environ["HORIZON_POLL_MS"]) / 1000.0
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


class HorizonService:
    """Owns the store, the optional pricing watcher and the HTTP server."""

    def __init__(self, config: ServiceConfig, store: ToggleStore | None = None):
        self.config = config
        self.store = store if store is not None else ToggleStore(config.store_path)
        self.pricing: PricingModel | None = None
        self.watcher = None
        if config.pricing_path and config.watch:
            self.watcher = PricingWatcher(config.pricing_path, self.store, config.poll_interval,
                                          on_pricing=self._set_pricing)
        elif config.pricing_path:
            self.pricing = load_pricing(config.pricing_path)
        try:
            self.httpd = ThreadingHTTPServer((config.host, config.port), _make_handler(self))
        except OSError as exc:
            raise errors.ConfigError(f"cannot bind {config.host}:{config.port}: {exc}") from exc
        self.httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    def _set_pricing(self, pricing: PricingModel) -> None:
        self.pricing = pricing

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    @property
    def url(self) -> str:
        return f"http://{self.config.host}:{self.port}"

    def _start_watcher(self) -> None:
        if self.watcher is not None:
            # apply the current file before accepting traffic
            self.watcher.poll_once()
            self.watcher.start()

    def start(self) -> "HorizonService":
        self._start_watcher()
        self._thread = threading.Thread(target=self.httpd.serve_forever, name="horizon-http", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._start_watcher()
        try:
            self.httpd.serve_forever()
        finally:
            self.close()

    def stop(self) -> None:
        self.httpd.shutdown()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        self.close()

    def close(self) -> None:
        if self.watcher is not None:
            self.watcher.stop()
        self.httpd.server_close()

    # request handling

    def handle(self, method: str, raw_path: str, headers, body: bytes) -> tuple[int, Any]:
        url = urlsplit(raw_path)
        parts = [unquote(p) for p in url.path.strip("/").split("/") if p]
        query = parse_qs(url.query)

        if parts == ["healthz"] and method == "GET":
            snap = self.store.snapshot()
            return 200, {"status": "ok", "revision": snap.revision, "pricingVersion": snap.pricing_version}
        if parts == ["evaluate"] and method == "POST":
            return 200, self._evaluate(_json(body))
        if parts == ["evaluate-all"] and method == "POST":
            return 200, self._evaluate_all(_json(body))

        if parts and parts[0] in ("features", "rules", "pricing"):
            self._authorize(headers)
        if parts == ["features"] and method == "GET":
            return 200, {"features": [t.to_dict() for t in self.store.list_features()]}
        if parts == ["rules"] and method == "GET":
            return 200, {"rules": [r.to_dict() for r in self.store.list_rules()]}
        if len(parts) == 2 and parts[0] == "features":
            return self._feature(method, parts[1], body)
        if len(parts) == 2 and parts[0] == "rules":
            force = query.get("force", ["false"])[0].lower() == "true"
            return self._rule(method, parts[1], body, force)
        if len(parts) == 3 and parts[0] == "features" and parts[2] == "dependency" and method == "POST":
            doc = _json(body)
            if "parent" not in doc:
                raise ApiError(HTTPStatus.BAD_REQUEST, "BAD_REQUEST", "body needs 'parent'")
            revision = self.store.link_dependency(parts[1], doc["parent"])
            return 200, {"revision": revision, "feature": self.store.read_feature(parts[1]).to_dict()}
        if parts == ["pricing", "sync"] and method == "POST":
            return 200, self._sync(body)
        raise ApiError(HTTPStatus.NOT_FOUND, "NOT_FOUND", f"no route for {method} {url.path}")

    def _authorize(self, headers) -> None:
        expected = self.config.bearer
        if expected and headers.get("Authorization", "") != f"Bearer {expected}":
            raise ApiError(HTTPStatus.UNAUTHORIZED, "UNAUTHORIZED", "missing or invalid bearer token")

    def _feature(self, method: str, feature_id: str, body: bytes) -> tuple[int, Any]:
        if method == "GET":
            return 200, self.store.read_feature(feature_id).to_dict()
        if method == "PUT":
            doc = _json(body)
            if doc.get("id", feature_id) != feature_id:
                raise ApiError(HTTPStatus.BAD_REQUEST, "BAD_REQUEST", "body id does not match the URL")
            toggle = FeatureToggle.from_dict({**doc, "id": feature_id})
            revision = self.store.upsert_feature(toggle)
            return 200, {"revision": revision, "feature": self.store.read_feature(feature_id).to_dict()}
        if method == "DELETE":
            return 200, {"revision": self.store.delete_feature(feature_id)}
        raise ApiError(HTTPStatus.METHOD_NOT_ALLOWED, "METHOD_NOT_ALLOWED", method)

    def _rule(self, method: str, rule_id: str, body: bytes, force: bool) -> tuple[int, Any]:
        if method == "GET":
            return 200, self.store.read_rule(rule_id).to_dict()
        if method == "PUT":
            doc = _json(body)
            if doc.get("id", rule_id) != rule_id:
                raise ApiError(HTTPStatus.BAD_REQUEST, "BAD_REQUEST", "body id does not match the URL")
            rule = Rule.from_dict({**doc, "id": rule_id})
            revision = self.store.upsert_rule(rule)
            return 200, {"revision": revision, "rule": self.store.read_rule(rule_id).to_dict()}
        if method == "DELETE":
            return 200, {"revision": self.store.delete_rule(rule_id, force=force)}
        raise ApiError(HTTPStatus.METHOD_NOT_ALLOWED, "METHOD_NOT_ALLOWED", method)

    def _subject(self, doc: dict) -> str:
        if doc.get("subject"):
            return str(doc["subject"])
        user = (doc.get("context") or {}).get("user")
        if isinstance(user, dict) and user.get("id") is not None:
            return str(user["id"])
        return "anonymous"

    def _context(self, doc: dict) -> dict:
        ctx = doc.get("context")
        if ctx is None:
            ctx = {}
        if not isinstance(ctx, dict):
            raise ApiError(HTTPStatus.BAD_REQUEST, "BAD_REQUEST", "context must be an object")
        sub = doc.get("subscription")
        if sub is None:
            return ctx
        if not isinstance(sub, dict) or not isinstance(sub.get("plan"), str):
            raise ApiError(HTTPStatus.BAD_REQUEST, "BAD_REQUEST", "subscription needs a 'plan'")
        pricing = self.pricing
        if pricing is None:
            raise ApiError(HTTPStatus.CONFLICT, "NO_PRICING", "no pricing is loaded")
        return entitlement_context(pricing, Subscription(sub["plan"], sub.get("addOns") or ()), ctx)

    def _evaluate(self, doc: dict) -> dict:
        if "featureId" not in doc:
            raise ApiError(HTTPStatus.BAD_REQUEST, "BAD_REQUEST", "body needs 'featureId'")
        snap = self.store.snapshot()
        result = evaluate_feature(snap, doc["featureId"], self._context(doc),
                                  doc.get("environment") or DEFAULT_ENVIRONMENT)
        return sign_result(result.to_dict(), self._subject(doc), self.config.secret,
                           pricing_version=snap.pricing_version, ttl=self.config.token_ttl)

    def _evaluate_all(self, doc: dict) -> dict:
        snap = self.store.snapshot()
        payload = evaluate_all(snap, self._context(doc), doc.get("environment") or DEFAULT_ENVIRONMENT)
        return sign_result(payload.to_dict(), self._subject(doc), self.config.secret,
                           pricing_version=snap.pricing_version, ttl=self.config.token_ttl)

    def _sync(self, body: bytes) -> dict:
        doc = _json(body) if body.strip() else {}
        if doc.get("pricing"):
            pricing = parse_pricing(doc["pricing"])
        elif self.config.pricing_path:
            pricing = load_pricing(self.config.pricing_path)
        else:
            raise ApiError(HTTPStatus.BAD_REQUEST, "BAD_REQUEST", "no pricing given and none configured")
        plan, revision = sync_store(self.store, pricing)
        self.pricing = pricing
        return {"revision": revision, "plan": plan.to_dict()}


def _json(body: bytes) -> dict:
    try:
        doc = json.loads(body or b"{}")
    except ValueError as exc:
        raise ApiError(HTTPStatus.BAD_REQUEST, "BAD_REQUEST", f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ApiError(HTTPStatus.BAD_REQUEST, "BAD_REQUEST", "expected a JSON object")
    return doc


def _make_handler(service: HorizonService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _dispatch(self, method: str) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else b""
            try:
                status, doc = service.handle(method, self.path, self.headers, body)
            except ApiError as exc:
                status, doc = exc.status, _error_doc(exc.code, exc.message, exc.detail)
            except HorizonError as exc:
                status, doc = status_for(exc), _error_doc(exc.code, str(exc), _detail(exc))
            except Exception as exc:  # last-resort 500, never a dropped connection
                log.exception("unhandled error for %s %s", method, self.path)
                status, doc = 500, _error_doc("INTERNAL", str(exc))
            data = json.dumps(doc, ensure_ascii=False).encode("utf-8")
            self.send_response(int(status))
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            self._dispatch("GET")

        def do_PUT(self):
            self._dispatch("PUT")

        def do_POST(self):
            self._dispatch("POST")

        def do_DELETE(self):
            self._dispatch("DELETE")

        def log_message(self, format, *args):
            log.debug("%s - %s", self.address_string(), format % args)

    return Handler


def _error_doc(code: str, message: str, detail: Any = None) -> dict:
    doc = {"code": code, "message": message}
    if detail is not None:
        doc["detail"] = detail
    return doc


def _detail(exc: HorizonError) -> Any:
    if isinstance(exc, errors.ExpressionSyntaxError):
        return {"line": exc.line, "column": exc.column, "expected": exc.expected}
    if isinstance(exc, errors.DependencyViolation):
        return {"dependents": list(exc.dependents)}
    return None


def serve(config: ServiceConfig, store: ToggleStore | None = None) -> HorizonService:
    """Start the service in background threads and return it."""
    return HorizonService(config, store).start()

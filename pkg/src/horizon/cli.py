"""Command-line entry point.

Exit codes: 0 success, 1 validation or evaluation error, 2 usage error.
Machine-readable output goes to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
from pathlib import Path
from typing import Any, Sequence

from .compiler import entitlement_context, sync_store
from .errors import ConfigError, HorizonError
from .evaluator import evaluate_all, evaluate_feature
from .pricing import Subscription, configuration_space, load_pricing
from .scorecard import (
    bundled_assessments,
    check_compliance,
    derive_level,
    load_assessments,
    render_report,
)
from .store import DEFAULT_ENVIRONMENT, FeatureToggle, Rule, ToggleStore

DEFAULT_STORE = "horizon-store.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="horizon", description="Pricing-driven feature toggles.")
    parser.add_argument("--store", default=os.environ.get("HORIZON_STORE", DEFAULT_STORE),
                        help="toggle store file (default: $HORIZON_STORE or %(default)s)")
    parser.add_argument("--output", choices=("text", "json"), default="text")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pricing = sub.add_parser("pricing", help="inspect pricing files")
    psub = pricing.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for name in ("validate", "space"):
        p = psub.add_parser(name)
        p.add_argument("file")

    p = sub.add_parser("compile", help="sync the store with a pricing file")
    p.add_argument("pricing")
    p.add_argument("--store", dest="compile_store")

    for name in ("eval", "eval-all"):
        p = sub.add_parser(name, help="evaluate toggles")
        if name == "eval":
            p.add_argument("--feature", required=True)
        p.add_argument("--context", default="{}", help="inline JSON, a JSON file, or - for stdin")
        p.add_argument("--env", default=DEFAULT_ENVIRONMENT)
        p.add_argument("--pricing", help="resolve --plan/--addon against this pricing")
        p.add_argument("--plan")
        p.add_argument("--addon", action="append", default=[])

    feature = sub.add_parser("feature", help="manage toggles")
    fsub = feature.add_subparsers(dest="action", required=True, parser_class=_Parser)
    fsub.add_parser("list")
    fsub.add_parser("get").add_argument("id")
    p = fsub.add_parser("put")
    p.add_argument("id")
    p.add_argument("--json", help="full toggle document (inline JSON or file)")
    p.add_argument("--description")
    p.add_argument("--rule", action="append", dest="rules")
    p.add_argument("--environment", action="append", dest="environments")
    p.add_argument("--depends-on")
    p.add_argument("--default", choices=("true", "false"))
    fsub.add_parser("delete").add_argument("id")

    rule = sub.add_parser("rule", help="manage rules")
    rsub = rule.add_subparsers(dest="action", required=True, parser_class=_Parser)
    rsub.add_parser("list")
    rsub.add_parser("get").add_argument("id")
    p = rsub.add_parser("put")
    p.add_argument("id")
    p.add_argument("--expr", required=True)
    p.add_argument("--attach", action="append", default=[])
    p = rsub.add_parser("delete")
    p.add_argument("id")
    p.add_argument("--force", action="store_true")

    schema = sub.add_parser("schema", help="context attribute declarations")
    ssub = schema.add_subparsers(dest="action", required=True, parser_class=_Parser)
    ssub.add_parser("show")
    ssub.add_parser("declare").add_argument("attributes", nargs="+", metavar="PATH=TYPE")

    p = sub.add_parser("depend", help="make CHILD depend on PARENT")
    p.add_argument("child")
    p.add_argument("parent", nargs="?")
    p.add_argument("--clear", action="store_true", help="remove CHILD's parent")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--secret", default=None, help="signing secret (default: $HORIZON_SECRET)")
    p.add_argument("--bearer", default=None, help="management token (default: $HORIZON_BEARER)")
    p.add_argument("--watch", metavar="PRICING", help="poll this pricing file and sync on change")
    p.add_argument("--pricing", help="load this pricing once, without watching")
    p.add_argument("--poll-ms", type=int)

    p = sub.add_parser("score", help="render the capability comparison")
    p.add_argument("--assessments", help="assessment file or directory (default: bundled tools)")
    p.add_argument("--format", choices=("md", "markdown", "csv", "json"), default="md")

    p = sub.add_parser("self-assess", help="probe this engine against the capability matrix")
    p.add_argument("--no-watcher", action="store_true")
    p.add_argument("--no-delete", action="store_true")
    p.add_argument("--format", choices=("md", "markdown", "csv", "json"), default="md")
    return parser


# -- helpers -----------------------------------------------------------------


def _read_json_arg(value: str) -> Any:
    if value == "-":
        text = sys.stdin.read()
    elif value.lstrip().startswith(("{", "[")):
        text = value
    else:
        path = Path(value)
        if not path.is_file():
            raise ConfigError(f"{value!r} is neither JSON nor a readable file")
        text = path.read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"invalid JSON in {value[:40]!r}: {exc}") from None


def _context(args) -> dict:
    ctx = _read_json_arg(args.context)
    if not isinstance(ctx, dict):
        raise ConfigError("the context must be a JSON object")
    if args.plan or args.addon:
        if not args.pricing:
            raise UsageError("--plan/--addon need --pricing")
        if not args.plan:
            raise UsageError("--addon needs --plan")
        ctx = entitlement_context(load_pricing(args.pricing), Subscription(args.plan, args.addon), ctx)
    return ctx


def _store(path: str) -> ToggleStore:
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise ConfigError(f"store directory {str(parent)!r} does not exist")
    return ToggleStore(path)


def _emit(args, doc: Any, text: str) -> None:
    if args.output == "json":
        print(json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True))
    else:
        print(text)


def _toggle_line(t: FeatureToggle) -> str:
    extra = f" <- {t.depends_on}" if t.depends_on else ""
    rules = ", ".join(t.rule_ids) or "-"
    return f"{t.id}{extra}  [{t.origin}] envs={','.join(sorted(t.environments))} rules={rules} default={str(t.default_value).lower()}"


def _result_line(r) -> str:
    text = f"{r.feature_id}: {str(r.value).lower()} ({r.reason}"
    if r.rule_id:
        text += f", rule {r.rule_id}"
    text += ")"
    if r.diagnostics:
        text += f" {r.diagnostics}"
    return text


# -- commands ----------------------------------------------------------------


def cmd_pricing(args) -> int:
    pricing = load_pricing(args.file)
    space = configuration_space(pricing)
    if args.action == "space":
        _emit(args, {"configurationSpace": space}, str(space))
        return 0
    doc = {
        "valid": True,
        "saasName": pricing.name,
        "version": pricing.version,
        "features": len(pricing.features),
        "usageLimits": len(pricing.usage_limits),
        "plans": [p.name for p in pricing.plans],
        "addOns": [a.name for a in pricing.add_ons],
        "configurationSpace": space,
    }
    _emit(args, doc, f"valid: {pricing.name} {pricing.version} ({len(pricing.features)} features, "
                     f"{len(pricing.usage_limits)} usage limits, {len(pricing.plans)} plans, "
                     f"{len(pricing.add_ons)} add-ons, {space} subscriptions)")
    return 0


def cmd_compile(args) -> int:
    store = _store(args.compile_store or args.store)
    plan, revision = sync_store(store, load_pricing(args.pricing))
    doc = {"revision": revision, "plan": plan.to_dict()}
    counts = ", ".join(f"{k}={len(v)}" for k, v in plan.to_dict().items() if isinstance(v, list))
    _emit(args, doc, f"revision {revision}: {counts}" if not plan.is_empty else f"revision {revision}: up to date")
    return 0


def cmd_eval(args) -> int:
    snapshot = _store(args.store).snapshot()
    ctx = _context(args)
    if args.command == "eval":
        result = evaluate_feature(snapshot, args.feature, ctx, args.env)
        _emit(args, result.to_dict(), _result_line(result))
    else:
        payload = evaluate_all(snapshot, ctx, args.env)
        _emit(args, payload.to_dict(), "\n".join(_result_line(payload.results[f]) for f in sorted(payload.results)))
    return 0


def cmd_feature(args) -> int:
    store = _store(args.store)
    if args.action == "list":
        toggles = store.list_features()
        _emit(args, [t.to_dict() for t in toggles], "\n".join(_toggle_line(t) for t in toggles))
    elif args.action == "get":
        t = store.read_feature(args.id)
        _emit(args, t.to_dict(), _toggle_line(t))
    elif args.action == "put":
        if args.json:
            doc = _read_json_arg(args.json)
            if not isinstance(doc, dict):
                raise ConfigError("toggle document must be a JSON object")
            toggle = FeatureToggle.from_dict({**doc, "id": args.id})
        else:
            try:
                base = store.read_feature(args.id).to_dict()
            except HorizonError:
                base = {"id": args.id}
            if args.description is not None:
                base["description"] = args.description
            if args.rules is not None:
                base["ruleIds"] = args.rules
            if args.environments is not None:
                base["environments"] = args.environments
            if args.depends_on is not None:
                base["dependsOn"] = args.depends_on or None
            if args.default is not None:
                base["defaultValue"] = args.default == "true"
            toggle = FeatureToggle.from_dict(base)
        revision = store.upsert_feature(toggle)
        t = store.read_feature(args.id)
        _emit(args, {"revision": revision, "feature": t.to_dict()}, f"revision {revision}: {_toggle_line(t)}")
    elif args.action == "delete":
        revision = store.delete_feature(args.id)
        _emit(args, {"revision": revision, "deleted": args.id}, f"revision {revision}: deleted {args.id}")
    else:
        raise UsageError("feature needs an action: list, get, put or delete")
    return 0


def cmd_rule(args) -> int:
    store = _store(args.store)
    if args.action == "list":
        rules = store.list_rules()
        _emit(args, [r.to_dict() for r in rules], "\n".join(f"{r.id}: {r.expression_source}" for r in rules))
    elif args.action == "get":
        r = store.read_rule(args.id)
        _emit(args, r.to_dict(), f"{r.id}: {r.expression_source}")
    elif args.action == "put":
        revision = store.upsert_rule(Rule(args.id, args.expr, frozenset(args.attach)))
        r = store.read_rule(args.id)
        _emit(args, {"revision": revision, "rule": r.to_dict()}, f"revision {revision}: {r.id}: {r.expression_source}")
    elif args.action == "delete":
        revision = store.delete_rule(args.id, force=args.force)
        _emit(args, {"revision": revision, "deleted": args.id}, f"revision {revision}: deleted {args.id}")
    else:
        raise UsageError("rule needs an action: list, get, put or delete")
    return 0


def cmd_schema(args) -> int:
    store = _store(args.store)
    if args.action == "declare":
        attributes = {}
        for item in args.attributes:
            path, sep, type_name = item.partition("=")
            if not sep:
                raise UsageError(f"expected PATH=TYPE, got {item!r}")
            attributes[path.strip()] = type_name.strip()
        store.declare_attributes(attributes)
    elif args.action != "show":
        raise UsageError("schema needs an action: show or declare")
    schema = store.snapshot().context_schema.to_dict()
    _emit(args, schema, "\n".join(f"{k}: {v}" for k, v in sorted(schema["attributes"].items())))
    return 0


def cmd_depend(args) -> int:
    if args.clear == (args.parent is not None):
        raise UsageError("give either PARENT or --clear")
    store = _store(args.store)
    revision = store.link_dependency(args.child, None if args.clear else args.parent)
    t = store.read_feature(args.child)
    _emit(args, {"revision": revision, "feature": t.to_dict()}, f"revision {revision}: {_toggle_line(t)}")
    return 0


def cmd_serve(args) -> int:
    from .service import HorizonService, ServiceConfig

    overrides: dict[str, Any] = {
        "host": args.host, "port": args.port, "store_path": args.store,
        "secret": args.secret, "bearer": args.bearer,
    }
    if args.watch:
        overrides.update(pricing_path=args.watch, watch=True)
    elif args.pricing:
        overrides.update(pricing_path=args.pricing, watch=False)
    if args.poll_ms is not None:
        if args.poll_ms <= 0:
            raise UsageError("--poll-ms must be positive")
        overrides["poll_interval"] = args.poll_ms / 1000.0
    service = HorizonService(ServiceConfig.from_env(**overrides))
    signal.signal(signal.SIGTERM, lambda *_: sys.exit(0))
    print(f"listening on {service.url}", flush=True)
    if service.watcher is not None:
        print(f"watching {service.watcher.path} every {service.watcher.interval:g}s", file=sys.stderr, flush=True)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def _report(args, assessments) -> None:
    fmt = "markdown" if args.format == "md" else args.format
    sys.stdout.write(render_report(assessments, fmt))


def cmd_score(args) -> int:
    assessments = load_assessments(args.assessments) if args.assessments else bundled_assessments()
    if not assessments:
        raise ConfigError(f"no assessments found in {args.assessments!r}")
    _report(args, assessments)
    return 0


def cmd_self_assess(args) -> int:
    from .selfassess import self_assess

    assessment = self_assess(watcher=not args.no_watcher, deletion=not args.no_delete)
    _report(args, [assessment])
    compliance = check_compliance(assessment)
    print(f"level {derive_level(assessment)}, compliant={str(compliance.compliant).lower()}"
          + (f", gaps: {', '.join(compliance.gaps)}" if compliance.gaps else ""), file=sys.stderr)
    return 0


COMMANDS = {
    "pricing": cmd_pricing,
    "compile": cmd_compile,
    "eval": cmd_eval,
    "eval-all": cmd_eval,
    "feature": cmd_feature,
    "rule": cmd_rule,
    "schema": cmd_schema,
    "depend": cmd_depend,
    "serve": cmd_serve,
    "score": cmd_score,
    "self-assess": cmd_self_assess,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"horizon {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except HorizonError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

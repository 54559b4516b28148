import json
import shutil
import urllib.error
import urllib.request

import pytest

from horizon.errors import ConfigError
from horizon.pricing import ZOOM_PRICING_PATH
from horizon.service import HorizonService, ServiceConfig
from horizon.tokens import verify_token

SECRET = "test-secret"
BEARER = "admin-token"


def call(service, method, path, body=None, auth=True):
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(service.url + path, data=data, method=method)
    if auth:
        req.add_header("Authorization", f"Bearer {BEARER}")
    try:
        with urllib.request.urlopen(req, timeout=5) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


@pytest.fixture
def service(tmp_path):
    pricing = tmp_path / "zoom.yaml"
    shutil.copy(ZOOM_PRICING_PATH, pricing)
    config = ServiceConfig(secret=SECRET, port=0, store_path=str(tmp_path / "store.json"),
                           pricing_path=str(pricing), bearer=BEARER, poll_interval=0.05)
    svc = HorizonService(config).start()
    yield svc
    svc.stop()


def test_health(service):
    status, doc = call(service, "GET", "/healthz", auth=False)
    assert status == 200 and doc["pricingVersion"] == "2024-11" and doc["revision"] >= 1


@pytest.mark.parametrize("plan, add_ons, assistants, expected", [
    ("PRO", [], 150, False),
    ("PRO", ["huge-meetings"], 150, True),
    ("BUSINESS", [], 300, True),
])
def test_evaluate_with_subscription(service, plan, add_ons, assistants, expected):
    body = {"featureId": "meetings", "subscription": {"plan": plan, "addOns": add_ons},
            "context": {"meeting": {"assistants": assistants}, "user": {"currentTime": 30, "id": "u-7"}}}
    status, token = call(service, "POST", "/evaluate", body, auth=False)
    assert status == 200
    result = verify_token(token, SECRET)
    assert result["value"] is expected and token["subject"] == "u-7"


def test_evaluate_all_is_signed(service):
    body = {"subscription": {"plan": "BASIC"}, "context": {"meeting.assistants": 5, "user.currentTime": 5}}
    status, token = call(service, "POST", "/evaluate-all", body, auth=False)
    payload = verify_token(token, SECRET)
    assert status == 200 and len(payload["results"]) == 11
    assert payload["results"]["meetings"]["value"] is True
    assert payload["results"]["reports"]["value"] is False


@pytest.mark.parametrize("body, status, code", [
    ({"featureId": "ghost"}, 404, "UNKNOWN_FEATURE"),
    ({}, 400, "BAD_REQUEST"),
    ({"featureId": "meetings", "subscription": {"plan": "GOLD"}}, 422, None),
    ({"featureId": "meetings", "context": []}, 400, "BAD_REQUEST"),
])
def test_evaluate_errors(service, body, status, code):
    got, doc = call(service, "POST", "/evaluate", body, auth=False)
    assert got == status and "message" in doc
    if code:
        assert doc["code"] == code


def test_management_requires_bearer(service):
    status, doc = call(service, "GET", "/features", auth=False)
    assert status == 401 and doc["code"] == "UNAUTHORIZED"
    status, doc = call(service, "GET", "/features")
    assert status == 200 and len(doc["features"]) == 11


def test_feature_and_rule_crud(service):
    status, doc = call(service, "PUT", "/features/beta-ui", {"description": "new UI", "environments": ["prod"]})
    assert status == 200 and doc["feature"]["id"] == "beta-ui"
    status, doc = call(service, "PUT", "/rules/pro", {"expressionSource": "user.currentTime < 60", "attachedFeatures": ["beta-ui"]})
    assert status == 200, doc
    assert call(service, "GET", "/features/beta-ui")[1]["ruleIds"] == ["pro"]
    status, doc = call(service, "POST", "/features/beta-ui/dependency", {"parent": "meetings"})
    assert status == 200 and doc["feature"]["dependsOn"] == "meetings"
    status, doc = call(service, "DELETE", "/features/meetings")
    assert status == 409 and "beta-ui" in doc["message"]
    status, doc = call(service, "PUT", "/rules/bad", {"expressionSource": "user.currentTime <"})
    assert status == 422
    status, doc = call(service, "PUT", "/features/other", {"id": "mismatch"})
    assert status == 400
    assert call(service, "DELETE", "/features/beta-ui")[0] == 200
    assert call(service, "GET", "/features/beta-ui")[0] == 404
    assert call(service, "DELETE", "/rules/pro")[0] == 200


def test_generated_rule_delete_needs_force(service):
    status, _ = call(service, "DELETE", "/rules/pricing:feature:reports")
    assert status == 409
    status, _ = call(service, "DELETE", "/rules/pricing:feature:reports?force=true")
    assert status == 200


def test_sync_from_body(service):
    text = ZOOM_PRICING_PATH.read_text().replace('version: "2024-11"', 'version: "2025-02"')
    status, doc = call(service, "POST", "/pricing/sync", {"pricing": text})
    assert status == 200 and doc["plan"]["sourceVersion"] == "2025-02"
    status, doc = call(service, "POST", "/pricing/sync", {"pricing": "plans: [x"})
    assert status == 422


def test_unknown_route(service):
    assert call(service, "GET", "/nope", auth=False)[0] == 404


def test_config_validation(tmp_path, monkeypatch):
    with pytest.raises(ConfigError):
        ServiceConfig(secret="")
    with pytest.raises(ConfigError):
        ServiceConfig(secret="x", pricing_path=str(tmp_path / "absent.yaml"))
    monkeypatch.setenv("HORIZON_SECRET", "env-secret")
    monkeypatch.setenv("HORIZON_POLL_MS", "200")
    config = ServiceConfig.from_env(port=0)
    assert (config.secret, config.poll_interval, config.port) == ("env-secret", 0.2, 0)


def test_no_pricing_loaded(tmp_path):
    svc = HorizonService(ServiceConfig(secret=SECRET, port=0)).start()
    try:
        status, doc = call(svc, "POST", "/evaluate", {"featureId": "x", "subscription": {"plan": "PRO"}})
        assert status == 409 and doc["code"] == "NO_PRICING"
    finally:
        svc.stop()

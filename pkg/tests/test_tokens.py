import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from horizon.errors import ConfigError, SignatureInvalid, TokenExpired
from horizon.tokens import CLOCK_SKEW, canonical_json, encode_token, sign_result, verify_token

SECRET = "s3cret"
PAYLOAD = {"featureId": "meetings", "value": True, "reason": "ruleMatched"}


def token(**kw):
    return sign_result(PAYLOAD, "u-1", SECRET, pricing_version="2024-11", ttl=60, now=1000.0, **kw)


def test_round_trip_dict_and_bytes():
    t = token()
    assert verify_token(t, SECRET, now=1000.0) == PAYLOAD
    assert verify_token(encode_token(t), SECRET, now=1000.0) == PAYLOAD
    assert verify_token(encode_token(t).decode(), SECRET, now=1000.0) == PAYLOAD
    assert t["expiresAt"] == 1060.0 and t["pricingVersion"] == "2024-11"


def test_wrong_secret():
    with pytest.raises(SignatureInvalid):
        verify_token(token(), "other", now=1000.0)


def test_empty_secret():
    with pytest.raises(ConfigError):
        sign_result(PAYLOAD, "u", "")


@pytest.mark.parametrize("field, value", [
    ("payload", {**PAYLOAD, "value": False}),
    ("subject", "u-2"),
    ("pricingVersion", "2025-01"),
    ("expiresAt", 99999.0),
    ("alg", "none"),
])
def test_tampered_fields(field, value):
    t = {**token(), field: value}
    with pytest.raises(SignatureInvalid):
        verify_token(t, SECRET, now=1000.0)


def test_missing_or_extra_fields():
    t = token()
    with pytest.raises(SignatureInvalid):
        verify_token({k: v for k, v in t.items() if k != "subject"}, SECRET, now=1000.0)
    with pytest.raises(SignatureInvalid):
        verify_token({**t, "extra": 1}, SECRET, now=1000.0)


def test_non_canonical_bytes_rejected():
    t = token()
    pretty = json.dumps(t, indent=2).encode()
    with pytest.raises(SignatureInvalid):
        verify_token(pretty, SECRET, now=1000.0)
    with pytest.raises(SignatureInvalid):
        verify_token(b"{not json", SECRET, now=1000.0)


def test_expiry_with_skew():
    t = token()
    assert verify_token(t, SECRET, now=1060.0 + CLOCK_SKEW) == PAYLOAD
    with pytest.raises(TokenExpired):
        verify_token(t, SECRET, now=1060.0 + CLOCK_SKEW + 0.001)


def test_canonical_json_sorts_and_rejects_nan():
    assert canonical_json({"b": 1, "a": "é"}) == '{"a":"é","b":1}'.encode()
    with pytest.raises(ValueError):
        canonical_json({"x": float("nan")})


json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-10**6, 10**6) | st.text(max_size=8)
    | st.floats(allow_nan=False, allow_infinity=False),
    lambda children: st.lists(children, max_size=3) | st.dictionaries(st.text(max_size=5), children, max_size=3),
    max_leaves=10,
)


@settings(max_examples=200, deadline=None)
@given(json_values, st.text(min_size=1, max_size=10))
def test_any_payload_round_trips(payload, subject):
    t = sign_result(payload, subject, SECRET, now=0.0)
    assert verify_token(encode_token(t), SECRET, now=0.0) == payload


@settings(max_examples=200, deadline=None)
@given(json_values, st.data())
def test_any_bit_flip_is_rejected(payload, data):
    raw = bytearray(encode_token(sign_result(payload, "s", SECRET, now=0.0)))
    bit = data.draw(st.integers(0, len(raw) * 8 - 1))
    raw[bit // 8] ^= 1 << (bit % 8)
    with pytest.raises((SignatureInvalid, TokenExpired)):
        verify_token(bytes(raw), SECRET, now=0.0)

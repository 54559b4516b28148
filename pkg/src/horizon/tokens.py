"""HMAC-signed evaluation results.

A signed evaluation is a JSON object; the signature is HMAC-SHA256 over the
canonical JSON (UTF-8, sorted keys, no whitespace) of every other field.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import time
from typing import Any, Mapping

from .errors import ConfigError, SignatureInvalid, TokenExpired

ALGORITHM = "HS256"
DEFAULT_TTL = 300.0
CLOCK_SKEW = 30.0

_FIELDS = ("alg", "payload", "subject", "pricingVersion", "issuedAt", "expiresAt")


def canonical_json(value: Any) -> bytes:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False).encode("utf-8")


def _key(secret: str | bytes) -> bytes:
    if not secret:
        raise ConfigError("signing secret must not be empty")
    return secret.encode("utf-8") if isinstance(secret, str) else secret


def _mac(body: Mapping[str, Any], secret: str | bytes) -> str:
    return hmac.new(_key(secret), canonical_json(dict(body)), hashlib.sha256).hexdigest()


def sign_result(payload: Mapping[str, Any], subject: str, secret: str | bytes, *,
                pricing_version: str | None = None, ttl: float = DEFAULT_TTL,
                now: float | None = None) -> dict[str, Any]:
    """Wrap an evaluation result or bootstrap payload (as a dict) in a token."""
    issued = time.time() if now is None else now
    body = {
        "alg": ALGORITHM,
        "payload": payload,
        "subject": subject,
        "pricingVersion": pricing_version,
        "issuedAt": issued,
        "expiresAt": issued + ttl,
    }
    return {**body, "signature": _mac(body, secret)}


def encode_token(token: Mapping[str, Any]) -> bytes:
    return canonical_json(dict(token))


def verify_token(token: Mapping[str, Any] | str | bytes, secret: str | bytes, *,
                 now: float | None = None, skew: float = CLOCK_SKEW) -> Any:
    """Check signature and expiry; return the signed payload."""
    if isinstance(token, (bytes, str)):
        raw = token.encode("utf-8", "surrogatepass") if isinstance(token, str) else token
        try:
            token = json.loads(raw)
        except ValueError as exc:
            raise SignatureInvalid(f"token is not valid JSON: {exc}") from None
        # only the canonical byte form is accepted, so equivalent re-encodings fail too
        try:
            canonical = encode_token(token) if isinstance(token, Mapping) else None
        except ValueError:
            canonical = None
        if canonical != raw:
            raise SignatureInvalid("token is not in canonical form")
    if not isinstance(token, Mapping) or set(token) != set(_FIELDS) | {"signature"}:
        raise SignatureInvalid("token has missing or unexpected fields")
    if token["alg"] != ALGORITHM:
        raise SignatureInvalid(f"unsupported algorithm {token['alg']!r}")
    signature = token["signature"]
    if not isinstance(signature, str):
        raise SignatureInvalid("signature must be a string")
    body = {k: token[k] for k in _FIELDS}
    try:
        expected = _mac(body, secret)
    except ValueError as exc:
        raise SignatureInvalid(f"token cannot be canonicalized: {exc}") from None
    if not hmac.compare_digest(expected.encode(), signature.encode("utf-8", "replace")):
        raise SignatureInvalid("signature does not match")
    expires = token["expiresAt"]
    if isinstance(expires, bool) or not isinstance(expires, (int, float)):
        raise SignatureInvalid("expiresAt must be a number")
    current = time.time() if now is None else now
    if current > expires + skew:
        raise TokenExpired(f"token expired at {expires}")
    return token["payload"]

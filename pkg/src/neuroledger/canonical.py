"""Deterministic record encoding shared by hashing, block files and the wire format.

A record is a JSON-compatible value built from dicts with string keys,
lists, strings, ints, bools and None. Raw bytes are accepted and encoded
as lowercase hex strings. The encoding is UTF-8, keys sorted by code
point, no insignificant whitespace, so independent implementations
produce identical bytes for the same logical record. Floats are rejected:
their textual form is not portable across languages.
"""

from __future__ import annotations

import json
from typing import Any


class EncodingError(ValueError):
    """Value cannot be represented in the canonical encoding."""


def _normalize(value: Any) -> Any:
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        raise EncodingError("floats are not canonical; use int or string")
    if isinstance(value, str):
        return value
    if isinstance(value, dict):
        out = {}
        for key, item in value.items():
            if not isinstance(key, str):
                raise EncodingError(f"map keys must be strings, got {type(key).__name__}")
            out[key] = _normalize(item)
        return out
    if isinstance(value, (list, tuple)):
        return [_normalize(item) for item in value]
    raise EncodingError(f"unsupported type {type(value).__name__}")


def canonical_bytes(record: Any) -> bytes:
    """Encode a record to its canonical UTF-8 byte form."""
    normalized = _normalize(record)
    text = json.dumps(
        normalized,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    )
    return text.encode("utf-8")


def canonical_loads(data: bytes | str) -> Any:
    """Parse canonical bytes back into a record (plain json load)."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return json.loads(data)

"""
Canonical JSON used for every content-addressed record.

Keys keep the order in which the serializer declares them (the documented
field order); free-form maps are sorted by key before they get here. The
output is compact UTF-8 with no newline, so equal records hash equally.
"""
import hashlib
import json
from typing import Any


def canonical_dumps(data: Any) -> str:
    return json.dumps(data, ensure_ascii=False, separators=(',', ':'), allow_nan=False)


def canonical_bytes(data: Any) -> bytes:
    return canonical_dumps(data).encode('utf-8')


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def content_id(data: Any) -> str:
    """SHA-256 of the canonical serialization of *data*."""
    return sha256_hex(canonical_bytes(data))


def sorted_map(mapping) -> dict:
    return {key: mapping[key] for key in sorted(mapping)}

import os
import time
from typing import Iterable

from django.conf import settings

from .exceptions import AmbiguousQuery, NotFound, ValidationError
from .validators import HEX_PATTERN

CROCKFORD32 = '0123456789ABCDEFGHJKMNPQRSTVWXYZ'
MIN_PREFIX_LENGTH = 4


def new_run_id(now: float | None = None) -> str:
    """ULID-style id: 48-bit millisecond timestamp then 80 random bits, Crockford base32.

    Ids sort lexicographically by creation time.
    """
    millis = int((time.time() if now is None else now) * 1000)
    value = (millis << 80) | int.from_bytes(os.urandom(10), 'big')
    chars = []
    for _ in range(26):
        chars.append(CROCKFORD32[value & 31])
        value >>= 5
    return ''.join(reversed(chars))


def short_id(full_id: str) -> str:
    return full_id[:getattr(settings, 'DSR_SHORT_ID_LENGTH', 12)]


def resolve_prefix(prefix: str, candidates: Iterable[str], kind: str = 'commit') -> str:
    """Expand an abbreviated hex id; ambiguity is an error, never a guess."""
    prefix = prefix.strip().lower()
    if len(prefix) < MIN_PREFIX_LENGTH or not HEX_PATTERN.match(prefix):
        raise ValidationError(f"invalid {kind} id {prefix!r}")
    matches = [candidate for candidate in candidates if candidate.startswith(prefix)]
    if not matches:
        raise NotFound(f"unknown {kind} {prefix}")
    if len(matches) > 1:
        raise AmbiguousQuery(f"{kind} id {prefix} is ambiguous ({len(matches)} matches)")
    return matches[0]

"""
Query expressions as typed on the command line.

    dataset=img-* tag=golden attr.split=train after=2026-01-01 before=1767225600

Tokens are ``key=value`` pairs joined by spaces and combined with AND. Keys:
``dataset`` (glob), ``tag``, ``attr.<KEY>``, ``after`` (inclusive) and
``before`` (exclusive), plus ``head=true`` and ``revoked=true``.
"""
import shlex
from datetime import timezone

from dateutil import parser as date_parser

from repository.exceptions import ValidationError
from repository.validators import validate_name
from .models import DatasetHead, DatasetVersion, QueryExpr

TRUE_VALUES = {'1', 'true', 'yes', 'on'}
FALSE_VALUES = {'0', 'false', 'no', 'off'}


def validate_glob(pattern: str) -> str:
    if not pattern:
        raise ValidationError("empty dataset glob")
    depth = 0
    for char in pattern:
        if char == '[':
            if depth:
                raise ValidationError(f"malformed glob {pattern!r}: nested '['")
            depth = 1
        elif char == ']' and depth:
            depth = 0
    if depth:
        raise ValidationError(f"malformed glob {pattern!r}: unterminated '['")
    return pattern


def parse_timestamp(value) -> int:
    if isinstance(value, bool):
        raise ValidationError(f"invalid timestamp {value!r}")
    if isinstance(value, int):
        return value
    text = str(value).strip()
    if text.lstrip('-').isdigit():
        return int(text)
    try:
        moment = date_parser.isoparse(text)
    except (ValueError, OverflowError) as exc:
        raise ValidationError(f"invalid timestamp {value!r}: use epoch seconds or ISO-8601") from exc
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return int(moment.timestamp())


def _parse_bool(key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in TRUE_VALUES:
        return True
    if lowered in FALSE_VALUES:
        return False
    raise ValidationError(f"{key} expects true or false, got {value!r}")


def parse_query(text: str | list[str]) -> QueryExpr:
    tokens = shlex.split(text) if isinstance(text, str) else [t for part in text for t in shlex.split(part)]
    fields = {}
    attrs = {}
    for token in tokens:
        key, sep, value = token.partition('=')
        if not sep or not key:
            raise ValidationError(f"query term {token!r} is not key=value")
        if key == 'dataset':
            fields['dataset_glob'] = validate_glob(value)
        elif key == 'tag':
            fields['tag_equals'] = value
        elif key.startswith('attr.') and len(key) > 5:
            attrs[key[5:]] = value
        elif key == 'after':
            fields['committed_after'] = parse_timestamp(value)
        elif key == 'before':
            fields['committed_before'] = parse_timestamp(value)
        elif key == 'head':
            fields['head_only'] = _parse_bool(key, value)
        elif key == 'revoked':
            fields['include_revoked'] = _parse_bool(key, value)
        else:
            raise ValidationError(f"unknown query key {key!r}")
    return QueryExpr(attr_equals=tuple(sorted(attrs.items())), **fields)


def parse_dataset_selector(text: str) -> DatasetHead | DatasetVersion:
    """``NAME`` selects the head, ``NAME@vN`` the N-th version."""
    name, sep, version = text.partition('@')
    validate_name(name, 'dataset name')
    if not sep:
        return DatasetHead(dataset=name)
    if not version.startswith('v') or not version[1:].isdigit() or int(version[1:]) < 1:
        raise ValidationError(f"invalid version selector {text!r}: expected NAME@vN")
    return DatasetVersion(dataset=name, number=int(version[1:]))

import re

from .exceptions import ValidationError

NAME_PATTERN = re.compile(r'^[A-Za-z0-9._-]+$')
HEX_PATTERN = re.compile(r'^[0-9a-f]+$')


def validate_name(value: str, kind: str = 'name') -> str:
    """Dataset, tag, principal and workflow names share one charset."""
    if not isinstance(value, str) or not NAME_PATTERN.match(value) or value in {'.', '..'}:
        raise ValidationError(f"invalid {kind} {value!r}: use letters, digits, '.', '_' or '-'")
    return value


def validate_relative_path(value: str) -> str:
    """Repository paths are forward-slash separated with no '.' or '..' segments."""
    if not value or value.startswith('/') or '\\' in value or '\x00' in value:
        raise ValidationError(f"invalid repository path {value!r}")
    if any(part in {'', '.', '..'} for part in value.split('/')):
        raise ValidationError(f"invalid repository path {value!r}")
    return value


def validate_hex_digest(value: str) -> str:
    if len(value) != 64 or not HEX_PATTERN.match(value):
        raise ValidationError(f"invalid SHA-256 digest {value!r}")
    return value

"""
repository/exceptions.py

Every domain failure raised by the services is a ``RepositoryError`` carrying
a machine-readable ``code``. The CLI prints ``error: <code>: <message>`` and
exits with ``exit_code``; callers inside Python catch the specific classes.
"""
from django.core import exceptions as django_exceptions


class RepositoryError(Exception):
    code = 'ERROR'
    exit_code = 1

    def __init__(self, message: str = '', **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def __str__(self):
        return self.message


class UsageError(RepositoryError):
    code = 'USAGE'
    exit_code = 2


class ValidationError(RepositoryError):
    code = 'VALIDATION'


class PermissionDenied(RepositoryError, django_exceptions.PermissionDenied):
    code = 'PERMISSION_DENIED'


class NotFound(RepositoryError, django_exceptions.ObjectDoesNotExist):
    code = 'NOT_FOUND'


class EmptyCommit(RepositoryError):
    code = 'EMPTY_COMMIT'


class RevokedData(RepositoryError):
    code = 'REVOKED_DATA'


class AmbiguousQuery(RepositoryError):
    code = 'AMBIGUOUS_QUERY'


class NoMatch(RepositoryError):
    code = 'NO_MATCH'


class ConflictError(RepositoryError):
    """Head moved underneath the writer. Safe to retry."""
    code = 'CONFLICT'
    retryable = True


class TagExists(RepositoryError):
    code = 'TAG_EXISTS'


class CorruptionError(RepositoryError):
    code = 'CORRUPTION'


class IntegrityError(RepositoryError):
    code = 'INTEGRITY'


class ConcurrencyError(RepositoryError):
    code = 'CONCURRENCY'


class StoreError(RepositoryError):
    code = 'STORE'


class WorkflowError(RepositoryError):
    code = 'INVALID_WORKFLOW'


class InvalidState(RepositoryError):
    code = 'INVALID_STATE'

"""
Advisory file locks for the repository.

Locks are ``flock``-style locks taken through ``django.core.files.locks`` on
files under ``.dsr/locks/``. A lock is reentrant for the thread that holds
it; other threads and processes block (or fail fast with ``blocking=False``).
"""
import logging
import threading
from pathlib import Path

from django.core.files import locks

from .exceptions import ConcurrencyError

logger = logging.getLogger(__name__)

_state = threading.local()


def _held() -> dict:
    if not hasattr(_state, 'held'):
        _state.held = {}
    return _state.held


class _Holding:
    __slots__ = ('handle', 'shared', 'count')

    def __init__(self, handle, shared):
        self.handle = handle
        self.shared = shared
        self.count = 1


class FileLock:
    def __init__(self, path: Path, *, shared: bool = False, blocking: bool = True):
        self.path = Path(path)
        self.shared = shared
        self.blocking = blocking

    @property
    def _key(self) -> str:
        return str(self.path.resolve())

    def acquire(self) -> None:
        held = _held()
        holding = held.get(self._key)
        if holding is not None:
            if holding.shared and not self.shared:
                raise ConcurrencyError(f"cannot upgrade shared lock on {self.path.name} to exclusive")
            holding.count += 1
            return

        self.path.parent.mkdir(parents=True, exist_ok=True)
        handle = open(self.path, 'a+b')
        flags = locks.LOCK_SH if self.shared else locks.LOCK_EX
        if not self.blocking:
            flags |= locks.LOCK_NB
        if not locks.lock(handle, flags):
            handle.close()
            raise ConcurrencyError(f"lock {self.path.name} is held by another process")
        held[self._key] = _Holding(handle, self.shared)

    def release(self) -> None:
        held = _held()
        holding = held.get(self._key)
        if holding is None:
            raise ConcurrencyError(f"lock {self.path.name} is not held")
        holding.count -= 1
        if holding.count == 0:
            del held[self._key]
            locks.unlock(holding.handle)
            holding.handle.close()

    def __enter__(self):
        self.acquire()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.release()
        return False

    @staticmethod
    def is_held(path: Path, *, exclusive: bool = True) -> bool:
        """Whether the current thread holds the lock on *path*."""
        holding = _held().get(str(Path(path).resolve()))
        if holding is None:
            return False
        return not holding.shared if exclusive else True

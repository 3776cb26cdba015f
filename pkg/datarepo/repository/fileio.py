"""
Crash-safe file primitives.

Whole files are written to a temp file in the destination directory, fsynced
and moved into place with ``os.replace``; journals are appended one canonical
JSON record per line and fsynced after each record. A reader never sees a
half-written file. A torn trailing journal line is ignored on read and dropped
by the next append.
"""
import json
import logging
import os
import tempfile
import uuid
from pathlib import Path
from typing import Any, Iterator

from .canonical import canonical_dumps

logger = logging.getLogger(__name__)

TEMP_PREFIX = '.tmp-'


def _fsync_dir(directory: Path) -> None:
    try:
        dir_fd = os.open(str(directory), os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(dir_fd)
    except OSError:
        # Not every filesystem supports fsync on directories.
        pass
    finally:
        os.close(dir_fd)


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=path.parent, prefix=f'{TEMP_PREFIX}{path.name}.')
    try:
        with os.fdopen(fd, 'wb') as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        try:
            os.unlink(tmp_path)
        except OSError:
            pass
        raise
    _fsync_dir(path.parent)


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode('utf-8'))


def atomic_write_json(path: Path, data: Any) -> None:
    atomic_write_text(path, canonical_dumps(data))


def temp_path_for(path: Path) -> Path:
    """A unique sibling name for streaming writes that finish with ``os.replace``."""
    return path.parent / f'{TEMP_PREFIX}{path.name}.{uuid.uuid4().hex}'


def is_temp_file(path: Path) -> bool:
    return path.name.startswith(TEMP_PREFIX)


def read_json(path: Path) -> Any:
    with open(path, 'r', encoding='utf-8') as handle:
        return json.load(handle)


def read_text_line(path: Path) -> str | None:
    try:
        return Path(path).read_text(encoding='utf-8').strip() or None
    except FileNotFoundError:
        return None


def _drop_torn_tail(handle) -> None:
    """Truncate an unterminated last line so the next record starts on its own line."""
    end = handle.seek(0, os.SEEK_END)
    if end == 0:
        return
    handle.seek(end - 1)
    if handle.read(1) == b'\n':
        return
    handle.seek(0)
    content = handle.read()
    keep = content.rfind(b'\n') + 1
    logger.warning("Dropping torn trailing record in %s (%d bytes)", handle.name, end - keep)
    handle.truncate(keep)


def append_jsonl(path: Path, record: Any) -> None:
    """Append one record. Callers serialize appends with a lock."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    line = (canonical_dumps(record) + '\n').encode('utf-8')
    with open(path, 'a+b') as handle:
        _drop_torn_tail(handle)
        handle.write(line)
        handle.flush()
        os.fsync(handle.fileno())


def iter_jsonl(path: Path) -> Iterator[dict]:
    try:
        handle = open(path, 'r', encoding='utf-8', errors='replace')
    except FileNotFoundError:
        return
    with handle:
        for number, line in enumerate(handle, start=1):
            if not line.endswith('\n'):
                logger.warning("Ignoring torn trailing record in %s (line %d)", path, number)
                return
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError:
                logger.warning("Skipping unreadable record in %s (line %d)", path, number)


def read_jsonl(path: Path) -> list[dict]:
    return list(iter_jsonl(path))

"""
Records of the content-addressed store.

These are plain immutable values persisted as canonical JSON (see
``storage.serializers``); nothing here touches a database.
"""
from dataclasses import dataclass, field
from typing import NamedTuple

from repository.exceptions import IntegrityError

EMPTY_SHA256 = 'e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855'


class ChunkRef(NamedTuple):
    chunk_id: str
    length: int


@dataclass(frozen=True)
class FileEntry:
    path: str | None
    size: int
    file_hash: str
    chunks: tuple[ChunkRef, ...] = ()

    def __post_init__(self):
        if sum(ref.length for ref in self.chunks) != self.size:
            raise IntegrityError(f"chunk lengths of {self.path or 'blob'} do not add up to {self.size}")
        if (self.size == 0) != (not self.chunks):
            raise IntegrityError(f"{self.path or 'blob'}: empty files have no chunks and vice versa")

    def with_path(self, path: str) -> 'FileEntry':
        return FileEntry(path=path, size=self.size, file_hash=self.file_hash, chunks=self.chunks)


@dataclass(frozen=True)
class Manifest:
    manifest_id: str
    entries: tuple[FileEntry, ...] = ()

    @property
    def paths(self) -> list[str]:
        return [entry.path for entry in self.entries]

    def by_path(self) -> dict[str, FileEntry]:
        return {entry.path: entry for entry in self.entries}

    @property
    def total_size(self) -> int:
        return sum(entry.size for entry in self.entries)

    def chunk_ids(self) -> set[str]:
        return {ref.chunk_id for entry in self.entries for ref in entry.chunks}


@dataclass
class PutStats:
    """Accumulates what a series of writes added to the object store."""
    files: int = 0
    chunks: int = 0
    bytes: int = 0
    new_chunks: int = 0
    new_bytes: int = 0


@dataclass(frozen=True)
class GcReport:
    scanned: int
    retained: int
    deleted: int
    deleted_bytes: int = 0
    temp_files_removed: int = 0


@dataclass(frozen=True)
class VerifyReport:
    scanned: int
    corrupt: tuple[str, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.corrupt

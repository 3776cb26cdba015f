"""
storage/services.py

The content-addressed store: chunks under ``objects/<2 hex>/<62 hex>``,
manifests under ``manifests/<id>.json``. Chunk writes are idempotent and
atomic (temp file + rename), so concurrent writers never expose a partial
chunk. Deleting chunks is reserved to ``gc`` under the exclusive lock.
"""
import hashlib
import io
import logging
import os
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

from repository.canonical import canonical_bytes
from repository.exceptions import (
    ConcurrencyError,
    CorruptionError,
    IntegrityError,
    NotFound,
    StoreError,
)
from repository.fileio import atomic_write_bytes, is_temp_file, read_json, temp_path_for
from repository.layout import Repository
from .chunking import ChunkingParams, iter_chunks
from .models import ChunkRef, FileEntry, GcReport, Manifest, PutStats, VerifyReport
from .serializers import build_manifest, load_manifest, manifest_record

logger = logging.getLogger(__name__)


class ContentStore:
    def __init__(self, repo: Repository, params: ChunkingParams | None = None):
        self.repo = repo
        self.params = params or ChunkingParams.from_dict(repo.config['chunking'])

    # -- chunks ----------------------------------------------------------

    def object_path(self, chunk_id: str) -> Path:
        return self.repo.objects_dir / chunk_id[:2] / chunk_id[2:]

    def has_chunk(self, chunk_id: str) -> bool:
        return self.object_path(chunk_id).is_file()

    def _write_chunk(self, chunk_id: str, data: bytes) -> bool:
        path = self.object_path(chunk_id)
        if path.exists():
            return False
        try:
            atomic_write_bytes(path, data)
        except OSError as exc:
            raise StoreError(f"failed to write chunk {chunk_id}: {exc}") from exc
        return True

    def iter_chunk_ids(self) -> Iterator[str]:
        if not self.repo.objects_dir.is_dir():
            return
        for fan_dir in sorted(self.repo.objects_dir.iterdir()):
            if not fan_dir.is_dir() or len(fan_dir.name) != 2:
                continue
            for path in sorted(fan_dir.iterdir()):
                if not is_temp_file(path):
                    yield fan_dir.name + path.name

    def stored_bytes(self) -> int:
        return sum(self.object_path(chunk_id).stat().st_size for chunk_id in self.iter_chunk_ids())

    # -- blobs -----------------------------------------------------------

    def put_blob(self, stream: BinaryIO | bytes, stats: PutStats | None = None) -> FileEntry:
        """Chunk and store a byte stream; returns its entry with no path."""
        if isinstance(stream, (bytes, bytearray, memoryview)):
            stream = io.BytesIO(stream)
        file_digest = hashlib.sha256()
        refs = []
        size = 0
        new_chunks = new_bytes = 0
        with self.repo.shared_lock():
            for chunk in iter_chunks(stream, self.params):
                chunk_id = hashlib.sha256(chunk).hexdigest()
                file_digest.update(chunk)
                if self._write_chunk(chunk_id, chunk):
                    new_chunks += 1
                    new_bytes += len(chunk)
                refs.append(ChunkRef(chunk_id, len(chunk)))
                size += len(chunk)

        if stats is not None:
            stats.files += 1
            stats.chunks += len(refs)
            stats.bytes += size
            stats.new_chunks += new_chunks
            stats.new_bytes += new_bytes
        return FileEntry(path=None, size=size, file_hash=file_digest.hexdigest(), chunks=tuple(refs))

    def put_file(self, path: Path, stats: PutStats | None = None) -> FileEntry:
        with open(path, 'rb') as handle:
            return self.put_blob(handle, stats)

    def iter_blob(self, entry: FileEntry) -> Iterator[bytes]:
        """Yield the chunks of *entry*; raises after the last chunk if the file hash is wrong."""
        missing = [ref.chunk_id for ref in entry.chunks if not self.has_chunk(ref.chunk_id)]
        if missing:
            raise CorruptionError(f"missing chunk {missing[0]} for {entry.path or 'blob'}", chunk_id=missing[0])
        file_digest = hashlib.sha256()
        for ref in entry.chunks:
            try:
                data = self.object_path(ref.chunk_id).read_bytes()
            except FileNotFoundError as exc:
                raise CorruptionError(
                    f"missing chunk {ref.chunk_id} for {entry.path or 'blob'}", chunk_id=ref.chunk_id
                ) from exc
            if len(data) != ref.length:
                raise IntegrityError(f"chunk {ref.chunk_id} has length {len(data)}, expected {ref.length}")
            file_digest.update(data)
            yield data
        if file_digest.hexdigest() != entry.file_hash:
            raise IntegrityError(f"{entry.path or 'blob'} does not hash to {entry.file_hash}")

    def get_blob(self, entry: FileEntry) -> bytes:
        return b''.join(self.iter_blob(entry))

    def write_blob(self, entry: FileEntry, dest: Path) -> None:
        """Materialize *entry* at *dest*; nothing is left behind on failure."""
        dest.parent.mkdir(parents=True, exist_ok=True)
        tmp = temp_path_for(dest)
        try:
            with open(tmp, 'wb') as handle:
                for data in self.iter_blob(entry):
                    handle.write(data)
            os.replace(tmp, dest)
        except BaseException:
            tmp.unlink(missing_ok=True)
            raise

    # -- manifests -------------------------------------------------------

    def manifest_path(self, manifest_id: str) -> Path:
        return self.repo.manifests_dir / f'{manifest_id}.json'

    def put_manifest(self, entries: Iterable[FileEntry]) -> Manifest:
        manifest = build_manifest(entries)
        path = self.manifest_path(manifest.manifest_id)
        if not path.exists():
            atomic_write_bytes(path, canonical_bytes(manifest_record(manifest.entries)))
        return manifest

    def get_manifest(self, manifest_id: str) -> Manifest:
        try:
            payload = read_json(self.manifest_path(manifest_id))
        except FileNotFoundError as exc:
            raise NotFound(f"unknown manifest {manifest_id}") from exc
        return load_manifest(manifest_id, payload)

    # -- maintenance -----------------------------------------------------

    def reachable_chunks(self, live_roots: Iterable[str]) -> set[str]:
        reachable = set()
        for manifest_id in set(live_roots):
            reachable |= self.get_manifest(manifest_id).chunk_ids()
        return reachable

    def gc(self, live_roots: Iterable[str]) -> GcReport:
        """Mark chunks reachable from *live_roots*, sweep the rest."""
        if not self.repo.holds_exclusive_lock():
            raise ConcurrencyError("gc requires the exclusive repository lock")

        reachable = self.reachable_chunks(live_roots)
        scanned = retained = deleted = deleted_bytes = temp_removed = 0
        for fan_dir in sorted(self.repo.objects_dir.iterdir()):
            if not fan_dir.is_dir():
                continue
            for path in sorted(fan_dir.iterdir()):
                if is_temp_file(path):
                    # Leftover of an interrupted writer; nobody else can be writing now.
                    path.unlink(missing_ok=True)
                    temp_removed += 1
                    continue
                scanned += 1
                if fan_dir.name + path.name in reachable:
                    retained += 1
                    continue
                deleted_bytes += path.stat().st_size
                path.unlink()
                deleted += 1
            if not any(fan_dir.iterdir()):
                fan_dir.rmdir()

        report = GcReport(
            scanned=scanned,
            retained=retained,
            deleted=deleted,
            deleted_bytes=deleted_bytes,
            temp_files_removed=temp_removed,
        )
        logger.info(
            "gc scanned %d chunks: retained %d, deleted %d (%d bytes)",
            scanned, retained, deleted, deleted_bytes,
        )
        return report

    def verify(self) -> VerifyReport:
        """Re-hash every object against its name."""
        corrupt = []
        scanned = 0
        for chunk_id in self.iter_chunk_ids():
            scanned += 1
            digest = hashlib.sha256(self.object_path(chunk_id).read_bytes()).hexdigest()
            if digest != chunk_id:
                corrupt.append(chunk_id)
        if corrupt:
            logger.error("%d corrupt objects found", len(corrupt))
        return VerifyReport(scanned=scanned, corrupt=tuple(corrupt))

"""
Append-only lineage and revocation journals.

``lineage.jsonl`` is the single source of provenance; ``revocations.jsonl``
holds revocation marks. Appends serialize under the journal lock; reads are
lock-free over the already-written prefix.
"""
import logging

from repository.exceptions import IntegrityError
from repository.fileio import append_jsonl, iter_jsonl
from repository.layout import Repository
from .models import ProvenanceRecord, RevocationMark
from .serializers import ProvenanceRecordSerializer, RevocationMarkSerializer

logger = logging.getLogger(__name__)


def _load(serializer_class, payload, path):
    serializer = serializer_class(data=payload)
    if not serializer.is_valid():
        raise IntegrityError(f"malformed record in {path.name}: {serializer.errors}")
    return serializer.save()


class LineageJournal:
    def __init__(self, repo: Repository):
        self.repo = repo

    def provenance_records(self) -> list[ProvenanceRecord]:
        path = self.repo.lineage_path
        return [_load(ProvenanceRecordSerializer, payload, path) for payload in iter_jsonl(path)]

    def append_provenance(self, record: ProvenanceRecord) -> ProvenanceRecord:
        with self.repo.journal_lock():
            if any(existing.output_commit == record.output_commit for existing in self.provenance_records()):
                raise IntegrityError(f"provenance for {record.output_commit} is already recorded")
            append_jsonl(self.repo.lineage_path, ProvenanceRecordSerializer(record).data)
        logger.info("Recorded provenance of %s from run %s", record.output_commit, record.run_id)
        return record

    def revocation_marks(self) -> list[RevocationMark]:
        path = self.repo.revocations_path
        return [_load(RevocationMarkSerializer, payload, path) for payload in iter_jsonl(path)]

    def append_revocation(self, mark: RevocationMark) -> RevocationMark:
        append_jsonl(self.repo.revocations_path, RevocationMarkSerializer(mark).data)
        return mark

    def revoked_ids(self) -> set[str]:
        revoked = set()
        for mark in self.revocation_marks():
            revoked |= mark.revoked
        return revoked

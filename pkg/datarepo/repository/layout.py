"""
On-disk layout of a repository.

    <root>/.dsr/
        config.json                 chunking parameters frozen at init
        objects/<2 hex>/<62 hex>    raw chunk bytes, named by SHA-256
        manifests/<id>.json         canonical manifests
        commits/<id>.json           canonical commits
        refs/datasets/<name>        one-line head commit id
        refs/tags/<name>            one-line commit id
        logs/refs/datasets/<name>.jsonl   reflog of head moves
        acl.json                    access-control table
        events.jsonl                new-commit events consumed by triggers
        tombstones.jsonl            deleted datasets
        lineage.jsonl               provenance records
        revocations.jsonl           revocation marks
        workflows/                  registered definitions
        runs/<run_id>/              run journals and working directories
        triggers/                   trigger cursors and schedule bookkeeping
        locks/                      advisory lock files
"""
import logging
import os
from functools import cached_property
from pathlib import Path

from django.conf import settings

from .exceptions import UsageError, ValidationError
from .fileio import atomic_write_json, read_json
from .locks import FileLock
from .validators import validate_name

logger = logging.getLogger(__name__)

DSR_DIR = '.dsr'
FORMAT_VERSION = 1


class Repository:
    def __init__(self, root: Path):
        self.root = Path(root).resolve()
        self.dsr = self.root / DSR_DIR

    def __repr__(self):
        return f"Repository({str(self.root)!r})"

    # -- discovery -------------------------------------------------------

    @classmethod
    def discover(cls, start: Path | None = None) -> 'Repository':
        configured = getattr(settings, 'DSR_REPO', None)
        if configured and start is None:
            repo = cls(Path(configured))
            if not repo.dsr.is_dir():
                raise UsageError(f"DSR_REPO={configured} is not a dsr repository")
            return repo

        current = Path(start or os.getcwd()).resolve()
        for candidate in (current, *current.parents):
            if (candidate / DSR_DIR).is_dir():
                return cls(candidate)
        raise UsageError("not a dsr repository (or any parent directory); run `dsr init`")

    @classmethod
    def initialize(cls, root: Path, chunking: dict) -> 'Repository':
        repo = cls(root)
        if repo.dsr.exists():
            raise ValidationError(f"repository already initialized at {repo.root}")
        for directory in (
            repo.objects_dir,
            repo.manifests_dir,
            repo.commits_dir,
            repo.dataset_refs_dir,
            repo.tag_refs_dir,
            repo.reflog_dir,
            repo.workflows_dir,
            repo.runs_dir,
            repo.triggers_dir,
            repo.locks_dir,
        ):
            directory.mkdir(parents=True, exist_ok=True)
        atomic_write_json(repo.config_path, {'format': FORMAT_VERSION, 'chunking': chunking})
        logger.info("Initialized repository at %s", repo.root)
        return repo

    # -- paths -----------------------------------------------------------

    @property
    def config_path(self) -> Path:
        return self.dsr / 'config.json'

    @property
    def objects_dir(self) -> Path:
        return self.dsr / 'objects'

    @property
    def manifests_dir(self) -> Path:
        return self.dsr / 'manifests'

    @property
    def commits_dir(self) -> Path:
        return self.dsr / 'commits'

    @property
    def dataset_refs_dir(self) -> Path:
        return self.dsr / 'refs' / 'datasets'

    @property
    def tag_refs_dir(self) -> Path:
        return self.dsr / 'refs' / 'tags'

    @property
    def reflog_dir(self) -> Path:
        return self.dsr / 'logs' / 'refs' / 'datasets'

    @property
    def acl_path(self) -> Path:
        return self.dsr / 'acl.json'

    @property
    def events_path(self) -> Path:
        return self.dsr / 'events.jsonl'

    @property
    def tombstones_path(self) -> Path:
        return self.dsr / 'tombstones.jsonl'

    @property
    def lineage_path(self) -> Path:
        return self.dsr / 'lineage.jsonl'

    @property
    def revocations_path(self) -> Path:
        return self.dsr / 'revocations.jsonl'

    @property
    def workflows_dir(self) -> Path:
        return self.dsr / 'workflows'

    @property
    def runs_dir(self) -> Path:
        return self.dsr / 'runs'

    @property
    def triggers_dir(self) -> Path:
        return self.dsr / 'triggers'

    @property
    def locks_dir(self) -> Path:
        return self.dsr / 'locks'

    @cached_property
    def config(self) -> dict:
        return read_json(self.config_path)

    # -- locks -----------------------------------------------------------

    @property
    def _repository_lock_path(self) -> Path:
        return self.locks_dir / 'repository.lock'

    def exclusive_lock(self, *, blocking: bool = True) -> FileLock:
        """Held by gc; excludes every object writer."""
        return FileLock(self._repository_lock_path, blocking=blocking)

    def shared_lock(self) -> FileLock:
        """Held by object writers (check-in) so gc cannot sweep their chunks."""
        return FileLock(self._repository_lock_path, shared=True)

    def holds_exclusive_lock(self) -> bool:
        return FileLock.is_held(self._repository_lock_path, exclusive=True)

    def journal_lock(self) -> FileLock:
        """Serializes ACL writes and lineage/revocation/event journal appends."""
        return FileLock(self.locks_dir / 'journal.lock')

    def dataset_lock(self, dataset: str) -> FileLock:
        validate_name(dataset, 'dataset name')
        return FileLock(self.locks_dir / 'datasets' / f'{dataset}.lock')

    def named_lock(self, *parts: str, blocking: bool = True) -> FileLock:
        return FileLock(self.locks_dir.joinpath(*parts[:-1]) / f'{parts[-1]}.lock', blocking=blocking)

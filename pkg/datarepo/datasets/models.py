"""
Dataset catalog records.

Commits are immutable and content-addressed; ``revoked`` is not part of a
commit's identity and is filled in from the revocation journal on load.
"""
from dataclasses import dataclass, field, replace
from fnmatch import fnmatchcase
from pathlib import Path

from immutabledict import immutabledict


@dataclass(frozen=True)
class Commit:
    commit_id: str
    dataset: str
    manifest_id: str
    parents: tuple[str, ...]
    author: str
    timestamp: int
    message: str
    attributes: immutabledict = field(default_factory=immutabledict)
    revoked: bool = False

    def mark_revoked(self, revoked: bool = True) -> 'Commit':
        return replace(self, revoked=revoked)

    @property
    def first_parent(self) -> str | None:
        return self.parents[0] if self.parents else None


@dataclass(frozen=True)
class Tag:
    name: str
    target: str


@dataclass(frozen=True)
class QueryExpr:
    """AND of every filter that is set; the empty expression matches everything.

    ``committed_after`` is inclusive, ``committed_before`` exclusive.
    """
    dataset_glob: str | None = None
    tag_equals: str | None = None
    attr_equals: tuple[tuple[str, str], ...] = ()
    committed_after: int | None = None
    committed_before: int | None = None
    head_only: bool = False
    include_revoked: bool = False

    def matches(self, commit: Commit, tags: frozenset | set = frozenset(), is_head: bool = False) -> bool:
        if commit.revoked and not self.include_revoked:
            return False
        if self.dataset_glob is not None and not fnmatchcase(commit.dataset, self.dataset_glob):
            return False
        if self.tag_equals is not None and self.tag_equals not in tags:
            return False
        for key, value in self.attr_equals:
            if commit.attributes.get(key) != value:
                return False
        if self.committed_after is not None and commit.timestamp < self.committed_after:
            return False
        if self.committed_before is not None and commit.timestamp >= self.committed_before:
            return False
        if self.head_only and not is_head:
            return False
        return True


@dataclass(frozen=True)
class CommitRef:
    """A full or abbreviated commit id."""
    ref: str


@dataclass(frozen=True)
class DatasetHead:
    dataset: str


@dataclass(frozen=True)
class DatasetVersion:
    """``NAME@vN``: the N-th commit on the dataset's first-parent chain."""
    dataset: str
    number: int


Selector = CommitRef | DatasetHead | DatasetVersion | QueryExpr


@dataclass(frozen=True)
class DiffReport:
    added: tuple[str, ...] = ()
    deleted: tuple[str, ...] = ()
    modified: tuple[str, ...] = ()
    unchanged_count: int = 0

    @property
    def is_empty(self) -> bool:
        return not (self.added or self.deleted or self.modified)


@dataclass(frozen=True)
class Tombstone:
    dataset: str
    deleted_by: str
    deleted_at: int
    head: str
    commits: tuple[str, ...] = ()


@dataclass(frozen=True)
class CommitEvent:
    """A new dataset version, as seen by event triggers."""
    commit_id: str
    dataset: str
    depth: int = 0
    root: str | None = None


@dataclass(frozen=True)
class CheckedOut:
    commit: Commit
    manifest_id: str
    path: Path

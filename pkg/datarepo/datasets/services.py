"""
datasets/services.py

Versioned dataset catalog over the content store.

Heads advance by compare-and-swap under a per-dataset lock: a writer reads
the head before building its commit and publishes only if the head is still
the same, otherwise it gets a retryable ``ConflictError``. Check-in holds the
shared repository lock from the first chunk write until the head moves, so a
concurrent gc can never sweep chunks of a commit that is being published.
"""
import logging
from dataclasses import replace
from pathlib import Path
from typing import Iterable

from django.utils import timezone
from immutabledict import immutabledict

from access.services import AccessControl
from lineage.journal import LineageJournal
from repository.canonical import sorted_map
from repository.exceptions import (
    AmbiguousQuery,
    ConflictError,
    EmptyCommit,
    NoMatch,
    NotFound,
    RevokedData,
    TagExists,
    ValidationError,
)
from repository.fileio import (
    append_jsonl,
    atomic_write_json,
    atomic_write_text,
    iter_jsonl,
    read_json,
    read_text_line,
)
from repository.ids import MIN_PREFIX_LENGTH, resolve_prefix, short_id
from repository.layout import Repository
from repository.validators import HEX_PATTERN, validate_name
from storage.models import Manifest, PutStats
from storage.services import ContentStore
from .models import (
    CheckedOut,
    Commit,
    CommitEvent,
    CommitRef,
    DatasetHead,
    DatasetVersion,
    DiffReport,
    QueryExpr,
    Selector,
    Tag,
    Tombstone,
)
from .serializers import (
    CommitEventSerializer,
    TombstoneSerializer,
    commit_record,
    compute_commit_id,
    load_commit_record,
)
from .query import parse_dataset_selector
from .worktree import make_read_only, prepare_destination, scan_worktree

logger = logging.getLogger(__name__)


def _now() -> int:
    return int(timezone.now().timestamp())


class DatasetManager:
    def __init__(self, repo: Repository, store: ContentStore | None = None):
        self.repo = repo
        self.store = store or ContentStore(repo)
        self.access = AccessControl(repo)
        self.journal = LineageJournal(repo)

    # -- commits ---------------------------------------------------------

    def _commit_path(self, commit_id: str) -> Path:
        return self.repo.commits_dir / f'{commit_id}.json'

    def published_ids(self) -> set[str]:
        """Commits a head or tag points at now or that any reflog recorded as a head.

        A commit record whose head move never landed is not published.
        """
        published = set(self.heads().values()) | set(self.tags().values())
        for path in self.repo.reflog_dir.glob('*.jsonl'):
            for entry in iter_jsonl(path):
                published.update(commit_id for commit_id in (entry.get('old'), entry.get('new')) if commit_id)
        return published

    def load_commit(self, commit_id: str, revoked: set[str] | None = None) -> Commit:
        try:
            commit = load_commit_record(read_json(self._commit_path(commit_id)))
        except FileNotFoundError as exc:
            raise NotFound(f"unknown commit {commit_id}") from exc
        revoked = self.journal.revoked_ids() if revoked is None else revoked
        return commit.mark_revoked(commit.commit_id in revoked)

    def all_commits(self) -> list[Commit]:
        """Every published commit, ordered by id."""
        revoked = self.journal.revoked_ids()
        return [self.load_commit(commit_id, revoked) for commit_id in sorted(self.published_ids())]

    def resolve_commit_id(self, ref: str) -> str:
        ref = ref.strip().lower()
        published = self.published_ids()
        if len(ref) == 64 and ref in published:
            return ref
        return resolve_prefix(ref, sorted(published), kind='commit')

    def get_commit(self, ref: str) -> Commit:
        return self.load_commit(self.resolve_commit_id(ref))

    # -- refs ------------------------------------------------------------

    def _head_path(self, dataset: str) -> Path:
        return self.repo.dataset_refs_dir / validate_name(dataset, 'dataset name')

    def head(self, dataset: str) -> str | None:
        return read_text_line(self._head_path(dataset))

    def heads(self) -> dict[str, str]:
        heads = {}
        for path in sorted(self.repo.dataset_refs_dir.iterdir()):
            if path.is_file() and not path.name.startswith('.'):
                target = read_text_line(path)
                if target:
                    heads[path.name] = target
        return heads

    def datasets(self) -> list[str]:
        return sorted(self.heads())

    def _advance_head(self, dataset: str, expected: str | None, new: str | None, principal: str, reason: str) -> None:
        with self.repo.dataset_lock(dataset):
            current = self.head(dataset)
            if current != expected:
                raise ConflictError(
                    f"head of {dataset} moved from {expected and short_id(expected)} "
                    f"to {current and short_id(current)}; retry"
                )
            path = self._head_path(dataset)
            if new is None:
                path.unlink(missing_ok=True)
            else:
                atomic_write_text(path, new + '\n')
            append_jsonl(self.repo.reflog_dir / f'{dataset}.jsonl', {
                'old': expected,
                'new': new,
                'principal': principal,
                'timestamp': _now(),
                'reason': reason,
            })

    def reflog(self, dataset: str) -> list[dict]:
        validate_name(dataset, 'dataset name')
        return list(iter_jsonl(self.repo.reflog_dir / f'{dataset}.jsonl'))

    def tags(self) -> dict[str, str]:
        tags = {}
        for path in sorted(self.repo.tag_refs_dir.iterdir()):
            if path.is_file() and not path.name.startswith('.'):
                target = read_text_line(path)
                if target:
                    tags[path.name] = target
        return tags

    def tags_by_commit(self) -> dict[str, set[str]]:
        by_commit: dict[str, set[str]] = {}
        for name, target in self.tags().items():
            by_commit.setdefault(target, set()).add(name)
        return by_commit

    # -- tombstones and events -------------------------------------------

    def tombstones(self) -> list[Tombstone]:
        records = []
        for payload in iter_jsonl(self.repo.tombstones_path):
            serializer = TombstoneSerializer(data=payload)
            if not serializer.is_valid():
                logger.warning("Skipping malformed tombstone %s", payload)
                continue
            records.append(serializer.save())
        return records

    def deleted_commits(self) -> set[str]:
        return {commit_id for tombstone in self.tombstones() for commit_id in tombstone.commits}

    def events(self, offset: int = 0) -> list[CommitEvent]:
        events = []
        for index, payload in enumerate(iter_jsonl(self.repo.events_path)):
            if index < offset:
                continue
            events.append(CommitEventSerializer().create(payload))
        return events

    def _record_event(self, event: CommitEvent) -> None:
        with self.repo.journal_lock():
            append_jsonl(self.repo.events_path, CommitEventSerializer(event).data)

    # -- check-in --------------------------------------------------------

    def checkin(
        self,
        principal: str,
        dataset: str,
        worktree_dir: Path,
        message: str = '',
        attributes: dict | None = None,
        tags: Iterable[str] = (),
        parent_override: str | None = None,
        allow_empty: bool = False,
        move_tags: bool = False,
        extra_parents: Iterable[str] = (),
        event_depth: int = 0,
        event_root: str | None = None,
        stats: PutStats | None = None,
    ) -> Commit:
        validate_name(dataset, 'dataset name')
        self.access.require_operation(principal, 'checkin', dataset)
        tags = [validate_name(tag, 'tag name') for tag in tags]
        existing_tags = {} if move_tags else self.tags()
        for tag in tags:
            if tag in existing_tags:
                raise TagExists(f"tag {tag} already points at {short_id(existing_tags[tag])}")
        attributes = {str(key): str(value) for key, value in (attributes or {}).items()}
        files = scan_worktree(Path(worktree_dir))

        stats = stats if stats is not None else PutStats()
        with self.repo.shared_lock():
            entries = [self.store.put_file(path, stats).with_path(relative) for relative, path in files]
            manifest = self.store.put_manifest(entries)

            expected_head = self.head(dataset)
            first_parent = self.resolve_commit_id(parent_override) if parent_override else expected_head
            parents = []
            for parent in (first_parent, *(self.resolve_commit_id(ref) for ref in extra_parents)):
                if parent and parent not in parents:
                    parents.append(parent)
            if first_parent and not allow_empty:
                if self.load_commit(first_parent, set()).manifest_id == manifest.manifest_id:
                    raise EmptyCommit(f"tree is identical to {short_id(first_parent)}; nothing to commit")

            draft = Commit(
                commit_id='',
                dataset=dataset,
                manifest_id=manifest.manifest_id,
                parents=tuple(parents),
                author=principal,
                timestamp=_now(),
                message=message,
                attributes=immutabledict(sorted_map(attributes)),
            )
            commit = replace(draft, commit_id=compute_commit_id(draft))
            path = self._commit_path(commit.commit_id)
            written = not path.exists()
            if written:
                atomic_write_json(path, commit_record(commit))
            try:
                self._advance_head(dataset, expected_head, commit.commit_id, principal, 'checkin')
            except ConflictError:
                if written:
                    path.unlink(missing_ok=True)
                raise

        for tag in tags:
            self._write_tag(tag, commit.commit_id, principal, force=move_tags)
        self._record_event(CommitEvent(
            commit_id=commit.commit_id,
            dataset=dataset,
            depth=event_depth,
            root=event_root or commit.commit_id,
        ))
        logger.info(
            "%s checked in %s as %s (%d files, %d new chunks)",
            principal, dataset, short_id(commit.commit_id), len(entries), stats.new_chunks,
        )
        return commit

    # -- resolution and checkout -----------------------------------------

    def first_parent_chain(self, commit_id: str) -> list[Commit]:
        """Head-first walk that stays inside the commit's dataset."""
        revoked = self.journal.revoked_ids()
        chain = []
        current = self.load_commit(commit_id, revoked)
        while True:
            chain.append(current)
            parent = current.first_parent
            if parent is None:
                break
            parent_commit = self.load_commit(parent, revoked)
            if parent_commit.dataset != current.dataset:
                break
            current = parent_commit
        return chain

    def version_number(self, commit_id: str) -> int:
        return len(self.first_parent_chain(commit_id))

    def resolve(self, principal: str, selector: Selector, multi_ok: bool = False) -> list[Commit]:
        if isinstance(selector, QueryExpr):
            commits = self.query(principal, selector)
            if not commits:
                raise NoMatch("query matched no commit")
            if len(commits) > 1 and not multi_ok:
                ids = ', '.join(short_id(commit.commit_id) for commit in commits[:5])
                raise AmbiguousQuery(f"query matched {len(commits)} commits ({ids}); refine it")
            return commits
        commit = self.select(selector)
        self.access.require_operation(principal, 'checkout', commit.dataset)
        return [commit]

    def select(self, selector: CommitRef | DatasetHead | DatasetVersion) -> Commit:
        """The single commit a non-query selector names; no permission check."""
        if isinstance(selector, DatasetHead):
            head = self.head(selector.dataset)
            if head is None:
                raise NotFound(f"dataset {selector.dataset} has no commits")
            return self.load_commit(head)
        if isinstance(selector, DatasetVersion):
            head = self.head(selector.dataset)
            if head is None:
                raise NotFound(f"dataset {selector.dataset} has no commits")
            chain = list(reversed(self.first_parent_chain(head)))
            if not 1 <= selector.number <= len(chain):
                raise NotFound(f"{selector.dataset} has no version v{selector.number}")
            return chain[selector.number - 1]
        if isinstance(selector, CommitRef):
            commit = self.get_commit(selector.ref)
            if commit.commit_id in self.deleted_commits():
                raise NotFound(f"commit {short_id(commit.commit_id)} belongs to a deleted dataset")
            return commit
        raise ValidationError(f"unsupported selector {selector!r}")

    def lookup(self, ref: str) -> Commit:
        """A commit id (full or abbreviated), ``NAME`` or ``NAME@vN``."""
        if '@' in ref:
            return self.select(parse_dataset_selector(ref))
        if len(ref) >= MIN_PREFIX_LENGTH and HEX_PATTERN.match(ref.lower()):
            try:
                return self.get_commit(ref)
            except NotFound:
                if self.head(ref) is None:
                    raise
        return self.select(DatasetHead(validate_name(ref, 'dataset name')))

    def materialize(self, commit: Commit, dest: Path, read_only: bool = False) -> Manifest:
        if commit.revoked:
            raise RevokedData(f"commit {short_id(commit.commit_id)} of {commit.dataset} is revoked")
        manifest = self.store.get_manifest(commit.manifest_id)
        prepare_destination(dest)
        for entry in manifest.entries:
            self.store.write_blob(entry, dest / entry.path)
        if read_only:
            make_read_only(dest)
        return manifest

    def checkout(self, principal: str, selector: Selector, dest_dir: Path) -> Manifest:
        (commit,) = self.resolve(principal, selector)
        self.access.require_operation(principal, 'checkout', commit.dataset)
        manifest = self.materialize(commit, Path(dest_dir))
        logger.info("%s checked out %s into %s", principal, short_id(commit.commit_id), dest_dir)
        return manifest

    def checkout_many(self, principal: str, selector: Selector, dest_dir: Path, read_only: bool = False) -> list[CheckedOut]:
        """Materialize every match under ``dest_dir/<dataset>@<short-id>/``."""
        commits = self.resolve(principal, selector, multi_ok=True)
        for commit in commits:
            self.access.require_operation(principal, 'checkout', commit.dataset)
            if commit.revoked:
                raise RevokedData(f"commit {short_id(commit.commit_id)} of {commit.dataset} is revoked")
        dest_dir = prepare_destination(Path(dest_dir))
        results = []
        for commit in commits:
            target = dest_dir / f'{commit.dataset}@{short_id(commit.commit_id)}'
            manifest = self.materialize(commit, target, read_only=read_only)
            results.append(CheckedOut(commit=commit, manifest_id=manifest.manifest_id, path=target))
        return results

    # -- inspection ------------------------------------------------------

    def diff(self, principal: str, commit_a: str, commit_b: str) -> DiffReport:
        a = self.lookup(commit_a)
        b = self.lookup(commit_b)
        for commit in (a, b):
            self.access.require_operation(principal, 'diff', commit.dataset)
        return diff_manifests(self.store.get_manifest(a.manifest_id), self.store.get_manifest(b.manifest_id))

    def query(self, principal: str, expr: QueryExpr) -> list[Commit]:
        heads = set(self.heads().values())
        tags = self.tags_by_commit()
        deleted = self.deleted_commits()
        commits = [commit for commit in self.all_commits() if commit.commit_id not in deleted]
        readable = self.access.readable(principal, {commit.dataset for commit in commits})
        matched = [
            commit for commit in commits
            if commit.dataset in readable
            and expr.matches(commit, tags.get(commit.commit_id, set()), commit.commit_id in heads)
        ]
        matched.sort(key=lambda commit: commit.commit_id)
        matched.sort(key=lambda commit: commit.timestamp, reverse=True)
        return matched

    def log(self, principal: str, dataset: str) -> list[Commit]:
        self.access.require_operation(principal, 'log', dataset)
        head = self.head(dataset)
        if head is None:
            raise NotFound(f"dataset {dataset} has no commits")
        return self.first_parent_chain(head)

    # -- tags and deletion -----------------------------------------------

    def _write_tag(self, name: str, target: str, principal: str, force: bool) -> Tag:
        with self.repo.named_lock('tags', name):
            current = read_text_line(self.repo.tag_refs_dir / name)
            if current and current != target and not force:
                raise TagExists(f"tag {name} already points at {short_id(current)}")
            atomic_write_text(self.repo.tag_refs_dir / name, target + '\n')
        logger.info("%s tagged %s as %s", principal, short_id(target), name)
        return Tag(name=name, target=target)

    def tag(self, principal: str, name: str, commit_ref: str, force: bool = False) -> Tag:
        validate_name(name, 'tag name')
        commit = self.lookup(commit_ref)
        self.access.require_operation(principal, 'tag', commit.dataset)
        if commit.commit_id in self.deleted_commits():
            raise NotFound(f"commit {short_id(commit.commit_id)} belongs to a deleted dataset")
        return self._write_tag(name, commit.commit_id, principal, force)

    def delete_dataset(self, principal: str, dataset: str) -> Tombstone:
        """Drop the head and tags; objects stay until gc, lineage stays forever."""
        validate_name(dataset, 'dataset name')
        self.access.require_operation(principal, 'delete_dataset', dataset)
        head = self.head(dataset)
        if head is None:
            raise NotFound(f"unknown dataset {dataset}")
        members = tuple(commit.commit_id for commit in self.all_commits() if commit.dataset == dataset)
        self._advance_head(dataset, head, None, principal, 'delete')
        member_set = set(members)
        for name, target in self.tags().items():
            if target in member_set:
                (self.repo.tag_refs_dir / name).unlink(missing_ok=True)
        tombstone = Tombstone(dataset=dataset, deleted_by=principal, deleted_at=_now(), head=head, commits=members)
        with self.repo.journal_lock():
            append_jsonl(self.repo.tombstones_path, TombstoneSerializer(tombstone).data)
        logger.info("%s deleted dataset %s (%d commits tombstoned)", principal, dataset, len(members))
        return tombstone

    # -- gc roots --------------------------------------------------------

    def live_manifest_roots(self) -> set[str]:
        """Manifests of every published commit that is neither revoked nor tombstoned.

        Commits off the current head chains, such as branches made with a parent
        override, stay live; gc reclaims only what revoked or deleted commits hold.
        """
        revoked = self.journal.revoked_ids()
        deleted = self.deleted_commits()
        return {
            self.load_commit(commit_id, revoked).manifest_id
            for commit_id in self.published_ids() - revoked - deleted
        }


def diff_manifests(old: Manifest, new: Manifest) -> DiffReport:
    before = old.by_path()
    after = new.by_path()
    added = sorted(set(after) - set(before))
    deleted = sorted(set(before) - set(after))
    common = set(before) & set(after)
    modified = sorted(path for path in common if before[path].file_hash != after[path].file_hash)
    return DiffReport(
        added=tuple(added),
        deleted=tuple(deleted),
        modified=tuple(modified),
        unchanged_count=len(common) - len(modified),
    )

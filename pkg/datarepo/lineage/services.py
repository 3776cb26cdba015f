"""
lineage/services.py

The lineage graph is the union of commit parent edges and provenance
input -> output edges, both pointing from the older commit to the newer one.
Revocation marks a commit (and, with cascade, everything derived from it)
unusable; chunks are reclaimed later by gc.
"""
import logging
from dataclasses import dataclass
from typing import Iterable

import networkx as nx
from django.utils import timezone

from datasets.models import Commit
from datasets.services import DatasetManager
from repository.exceptions import IntegrityError, NotFound
from repository.ids import short_id
from repository.layout import Repository
from .journal import LineageJournal
from .models import ProvenanceRecord, RevocationMark

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LineageNode:
    depth: int
    commit: Commit
    via: ProvenanceRecord | None = None
    repeated: bool = False


def build_graph(commits: Iterable[Commit], records: Iterable[ProvenanceRecord]) -> nx.DiGraph:
    """Parent edges and provenance edges over ``commits``, older to newer."""
    graph = nx.DiGraph()
    for commit in commits:
        graph.add_node(commit.commit_id, dataset=commit.dataset)
        for parent in commit.parents:
            graph.add_edge(parent, commit.commit_id, kind='parent')
    for record in records:
        for source in record.input_commits:
            graph.add_edge(source, record.output_commit, kind='provenance', run_id=record.run_id)
    return graph


class LineageService:
    def __init__(self, repo: Repository, datasets: DatasetManager | None = None):
        self.repo = repo
        self.datasets = datasets or DatasetManager(repo)
        self.journal: LineageJournal = self.datasets.journal

    def graph(self) -> nx.DiGraph:
        return build_graph(self.datasets.all_commits(), self.journal.provenance_records())

    def _node(self, graph: nx.DiGraph, commit_id: str) -> str:
        if commit_id not in graph:
            raise NotFound(f"unknown commit {commit_id}")
        return commit_id

    def ancestors(self, commit_id: str, graph: nx.DiGraph | None = None) -> set[str]:
        graph = self.graph() if graph is None else graph
        return nx.ancestors(graph, self._node(graph, commit_id))

    def descendants(self, commit_id: str, graph: nx.DiGraph | None = None) -> set[str]:
        graph = self.graph() if graph is None else graph
        return nx.descendants(graph, self._node(graph, commit_id))

    def record_provenance(self, record: ProvenanceRecord) -> ProvenanceRecord:
        graph = self.graph()
        for commit_id in (record.output_commit, *record.input_commits):
            if commit_id not in graph:
                raise IntegrityError(f"provenance references unknown commit {commit_id}")
        upstream = set(record.input_commits)
        for source in record.input_commits:
            upstream |= nx.ancestors(graph, source)
        if record.output_commit in upstream:
            raise IntegrityError(f"provenance of {short_id(record.output_commit)} would close a cycle")
        return self.journal.append_provenance(record)

    def provenance_of(self, commit_id: str) -> ProvenanceRecord | None:
        for record in self.journal.provenance_records():
            if record.output_commit == commit_id:
                return record
        return None

    def revoke(self, principal: str, commit_ref: str, reason: str, cascade: bool = True) -> RevocationMark:
        commit = self.datasets.lookup(commit_ref)
        self.datasets.access.require_operation(principal, 'revoke', commit.dataset)
        with self.repo.journal_lock():
            for mark in self.journal.revocation_marks():
                if commit.commit_id in mark.revoked:
                    logger.warning(
                        "Commit %s is already revoked (by %s); nothing to do",
                        short_id(commit.commit_id), short_id(mark.commit_id),
                    )
                    return mark
            closure = sorted(self.descendants(commit.commit_id)) if cascade else []
            mark = RevocationMark(
                commit_id=commit.commit_id,
                reason=reason,
                revoked_by=principal,
                revoked_at=int(timezone.now().timestamp()),
                cascade=cascade,
                closure=tuple(closure),
            )
            self.journal.append_revocation(mark)
        logger.info(
            "%s revoked %s of %s (%d downstream commits)",
            principal, short_id(commit.commit_id), commit.dataset, len(closure),
        )
        return mark

    def tree(self, principal: str, commit_ref: str, upstream: bool = True) -> list[LineageNode]:
        """Depth-first lineage walk; a commit reached twice is listed once more as repeated."""
        root = self.datasets.lookup(commit_ref)
        self.datasets.access.require_operation(principal, 'lineage', root.dataset)
        graph = self.graph()
        revoked = self.journal.revoked_ids()
        provenance = {record.output_commit: record for record in self.journal.provenance_records()}
        neighbours = graph.predecessors if upstream else graph.successors

        nodes = []
        seen = set()
        stack = [(root.commit_id, 0, None)]
        while stack:
            commit_id, depth, via = stack.pop()
            repeated = commit_id in seen
            nodes.append(LineageNode(
                depth=depth,
                commit=self.datasets.load_commit(commit_id, revoked),
                via=via,
                repeated=repeated,
            ))
            if repeated:
                continue
            seen.add(commit_id)
            children = []
            for neighbour in sorted(neighbours(commit_id)):
                source, output = (neighbour, commit_id) if upstream else (commit_id, neighbour)
                record = provenance.get(output)
                edge_via = record if record and source in record.input_commits else None
                children.append((neighbour, depth + 1, edge_via))
            stack.extend(reversed(children))
        return nodes

"""Human and ``--json`` renderings of catalog records for the CLI."""
from datetime import datetime, timezone

from repository.ids import short_id
from .models import Commit, DiffReport
from .serializers import CommitSerializer, DiffReportSerializer


def format_time(timestamp: float | None) -> str:
    if timestamp is None:
        return '-'
    return datetime.fromtimestamp(timestamp, tz=timezone.utc).strftime('%Y-%m-%d %H:%M:%S')


def commit_document(commit: Commit, version: int | None = None, tags=()) -> dict:
    return {**CommitSerializer(commit).data, 'version': version, 'tags': sorted(tags)}


def commit_line(commit: Commit, version: int | None = None, tags=()) -> str:
    parts = []
    if version is not None:
        parts.append(f'v{version}')
    parts += [short_id(commit.commit_id), commit.dataset, format_time(commit.timestamp), commit.author]
    line = ' '.join(parts)
    if commit.message:
        line += f'  {commit.message}'
    if tags:
        line += f"  [{', '.join(sorted(tags))}]"
    if commit.revoked:
        line += '  (revoked)'
    return line


def diff_document(report: DiffReport) -> dict:
    return DiffReportSerializer(report).data


def diff_lines(report: DiffReport) -> list[str]:
    """``A``/``D``/``M`` per path, sorted by path."""
    changes = [('A', path) for path in report.added]
    changes += [('D', path) for path in report.deleted]
    changes += [('M', path) for path in report.modified]
    return [f'{status} {path}' for status, path in sorted(changes, key=lambda change: change[1])]

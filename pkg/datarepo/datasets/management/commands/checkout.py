from pathlib import Path

from datasets.formatting import commit_document
from datasets.models import CommitRef
from datasets.query import parse_dataset_selector, parse_query
from datasets.services import DatasetManager
from repository.cli import DsrCommand
from repository.exceptions import UsageError
from repository.ids import short_id


class Command(DsrCommand):
    help = 'Materialize a version into a directory.'

    def add_arguments(self, parser):
        selector = parser.add_mutually_exclusive_group(required=True)
        selector.add_argument('--commit', help='Full or abbreviated commit id.')
        selector.add_argument('--dataset', help='NAME for the head or NAME@vN.')
        selector.add_argument('--query', help='key=value terms joined by spaces.')
        parser.add_argument('dest')
        parser.add_argument('--multi', action='store_true', help='With --query: check out every match under DEST/<dataset>@<id>/.')

    def selector(self, options):
        if options['commit']:
            return CommitRef(options['commit'])
        if options['dataset']:
            return parse_dataset_selector(options['dataset'])
        return parse_query(options['query'])

    def handle(self, *args, **options):
        principal = self.principal(options)
        if options['multi'] and not options['query']:
            raise UsageError("--multi needs --query")
        manager = DatasetManager(self.repository())
        selector = self.selector(options)
        dest = Path(options['dest'])

        if options['multi']:
            for checked_out in manager.checkout_many(principal, selector, dest):
                commit = checked_out.commit
                self.emit(
                    {**commit_document(commit), 'path': str(checked_out.path)},
                    f"Checked out {commit.dataset} {short_id(commit.commit_id)} into {checked_out.path}",
                )
            return

        (commit,) = manager.resolve(principal, selector)
        manifest = manager.checkout(principal, selector, dest)
        version = manager.version_number(commit.commit_id)
        self.emit(
            {**commit_document(commit, version), 'path': str(dest), 'files': len(manifest.entries)},
            f"Checked out {commit.dataset} v{version} ({short_id(commit.commit_id)}) into {dest}: "
            f"{len(manifest.entries)} files",
        )

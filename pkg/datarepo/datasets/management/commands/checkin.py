from datasets.formatting import commit_document
from datasets.services import DatasetManager
from repository.cli import DsrCommand, existing_dir
from repository.exceptions import UsageError
from repository.ids import short_id
from storage.models import PutStats


def parse_attribute(value: str) -> tuple[str, str]:
    key, sep, attr_value = value.partition('=')
    if not sep or not key:
        raise UsageError(f"--attr expects key=value, got {value!r}")
    return key, attr_value


class Command(DsrCommand):
    help = 'Record a directory as a new version of a dataset.'

    def add_arguments(self, parser):
        parser.add_argument('directory')
        parser.add_argument('-d', '--dataset', required=True)
        parser.add_argument('-m', '--message', default='')
        parser.add_argument('--tag', action='append', default=[], dest='tags')
        parser.add_argument('--attr', action='append', default=[], dest='attrs', help='key=value, repeatable.')
        parser.add_argument('--allow-empty', action='store_true', help='Commit even if the tree equals the head.')

    def handle(self, *args, **options):
        principal = self.principal(options)
        directory = existing_dir(options['directory'])
        attributes = dict(parse_attribute(value) for value in options['attrs'])
        manager = DatasetManager(self.repository())
        stats = PutStats()
        commit = manager.checkin(
            principal,
            options['dataset'],
            directory,
            message=options['message'],
            attributes=attributes,
            tags=options['tags'],
            allow_empty=options['allow_empty'],
            stats=stats,
        )
        version = manager.version_number(commit.commit_id)
        self.emit(
            {
                **commit_document(commit, version, options['tags']),
                'stats': {
                    'files': stats.files,
                    'bytes': stats.bytes,
                    'chunks': stats.chunks,
                    'new_chunks': stats.new_chunks,
                    'new_bytes': stats.new_bytes,
                },
            },
            f"[{commit.dataset} v{version} {short_id(commit.commit_id)}] {commit.message}\n"
            f" {stats.files} files, {stats.bytes} bytes, {stats.new_chunks} new chunks ({stats.new_bytes} bytes)",
        )

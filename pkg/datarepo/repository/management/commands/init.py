from pathlib import Path

from access.services import AccessControl
from repository.cli import DsrCommand
from repository.layout import Repository
from storage.chunking import ChunkingParams


class Command(DsrCommand):
    help = 'Create an empty repository; the initializing principal administers every dataset.'

    def add_arguments(self, parser):
        parser.add_argument('path', nargs='?', default='.', help='Directory to initialize (default: current directory).')

    def handle(self, *args, **options):
        principal = self.principal(options)
        params = ChunkingParams.from_settings()
        repo = Repository.initialize(Path(options['path']), params.to_dict())
        entry = AccessControl(repo).bootstrap(principal)
        self.emit(
            {'root': str(repo.root), 'admin': entry.principal, 'chunking': params.to_dict()},
            f"Initialized empty dsr repository in {repo.dsr}\nadmin: {entry.principal}",
        )

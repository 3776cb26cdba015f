from datasets.services import DatasetManager
from repository.cli import DsrCommand
from repository.exceptions import CorruptionError
from storage.services import ContentStore


class Command(DsrCommand):
    help = 'Delete chunks no live commit references; waits for running check-ins to finish.'

    def add_arguments(self, parser):
        parser.add_argument('--verify', action='store_true', help='Re-hash every remaining object afterwards.')

    def handle(self, *args, **options):
        repo = self.repository()
        store = ContentStore(repo)
        datasets = DatasetManager(repo, store)
        with repo.exclusive_lock():
            report = store.gc(datasets.live_manifest_roots())
        self.emit(
            {
                'scanned': report.scanned,
                'retained': report.retained,
                'deleted': report.deleted,
                'deleted_bytes': report.deleted_bytes,
                'temp_files_removed': report.temp_files_removed,
            },
            f"Scanned {report.scanned} chunks: kept {report.retained}, "
            f"removed {report.deleted} ({report.deleted_bytes} bytes), "
            f"cleaned {report.temp_files_removed} temp files",
        )
        if options['verify']:
            verified = store.verify()
            self.emit({'verified': verified.scanned, 'corrupt': list(verified.corrupt)}, f"Verified {verified.scanned} objects")
            if not verified.ok:
                raise CorruptionError(f"{len(verified.corrupt)} corrupt objects: {', '.join(verified.corrupt[:5])}")

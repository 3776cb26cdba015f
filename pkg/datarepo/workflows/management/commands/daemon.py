from repository.cli import DsrCommand
from workflows.daemon import Daemon
from workflows.formatting import run_document, run_summary


class Command(DsrCommand):
    help = 'Evaluate event and schedule triggers and execute runs until stopped.'

    def add_arguments(self, parser):
        parser.add_argument('--pool', type=int, default=None, help='Worker slots (default: DSR_WORKER_POOL_SIZE).')
        parser.add_argument('--poll', type=float, default=None, help='Seconds between trigger evaluations.')
        parser.add_argument('--once', action='store_true', help='One evaluation pass; wait for the runs it started.')

    def handle(self, *args, **options):
        daemon = Daemon(self.repository(), pool_size=options['pool'], poll_seconds=options['poll'])
        if not options['once']:
            daemon.run_forever()
            return
        try:
            for run in daemon.run_once():
                self.emit(run_document(run), run_summary(run))
        finally:
            daemon.engine.shutdown()

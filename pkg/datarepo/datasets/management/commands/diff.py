from datasets.formatting import diff_document, diff_lines
from datasets.services import DatasetManager
from repository.cli import DsrCommand


class Command(DsrCommand):
    help = 'List files added, deleted and modified between two versions.'

    def add_arguments(self, parser):
        parser.add_argument('a', help='Commit id, NAME or NAME@vN.')
        parser.add_argument('b', help='Commit id, NAME or NAME@vN.')

    def handle(self, *args, **options):
        principal = self.principal(options)
        report = DatasetManager(self.repository()).diff(principal, options['a'], options['b'])
        if self.json_output:
            self.emit(diff_document(report))
            return
        for line in diff_lines(report):
            self.say(line)
        self.say(
            f"{len(report.added)} added, {len(report.deleted)} deleted, "
            f"{len(report.modified)} modified, {report.unchanged_count} unchanged"
        )

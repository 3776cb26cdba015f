from datasets.formatting import commit_document, commit_line, format_time
from datasets.services import DatasetManager
from repository.cli import DsrCommand, short


class Command(DsrCommand):
    help = "Show a dataset's versions, newest first."

    def add_arguments(self, parser):
        parser.add_argument('-d', '--dataset', required=True)
        parser.add_argument('--reflog', action='store_true', help='Show every head move instead.')

    def handle(self, *args, **options):
        principal = self.principal(options)
        manager = DatasetManager(self.repository())
        dataset = options['dataset']
        if options['reflog']:
            # Deleted datasets keep their reflog.
            manager.access.require_operation(principal, 'log', dataset)
            for entry in reversed(manager.reflog(dataset)):
                self.emit(
                    entry,
                    f"{short(entry['old'])} -> {short(entry['new'])} {format_time(entry['timestamp'])} "
                    f"{entry['principal']} {entry['reason']}",
                )
            return
        chain = manager.log(principal, dataset)
        tags = manager.tags_by_commit()
        for index, commit in enumerate(chain):
            version = len(chain) - index
            commit_tags = tags.get(commit.commit_id, ())
            self.emit(commit_document(commit, version, commit_tags), commit_line(commit, version, commit_tags))

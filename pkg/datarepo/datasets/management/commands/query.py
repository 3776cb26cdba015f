from datasets.formatting import commit_document, commit_line
from datasets.query import parse_query
from datasets.services import DatasetManager
from repository.cli import DsrCommand


class Command(DsrCommand):
    help = 'List the readable commits matching every term, newest first.'

    def add_arguments(self, parser):
        parser.add_argument('terms', nargs='*', help='dataset=GLOB tag=T attr.K=V after=TIME before=TIME head=true revoked=true')

    def handle(self, *args, **options):
        principal = self.principal(options)
        expr = parse_query(options['terms'])
        manager = DatasetManager(self.repository())
        tags = manager.tags_by_commit()
        for commit in manager.query(principal, expr):
            commit_tags = tags.get(commit.commit_id, ())
            self.emit(commit_document(commit, tags=commit_tags), commit_line(commit, tags=commit_tags))

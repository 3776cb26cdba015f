from datasets.services import DatasetManager
from repository.cli import DsrCommand
from repository.ids import short_id


class Command(DsrCommand):
    help = 'Point a tag at a commit.'

    def add_arguments(self, parser):
        parser.add_argument('name')
        parser.add_argument('commit', help='Commit id, NAME or NAME@vN.')
        parser.add_argument('--force', action='store_true', help='Move the tag if it already exists.')

    def handle(self, *args, **options):
        principal = self.principal(options)
        tag = DatasetManager(self.repository()).tag(principal, options['name'], options['commit'], force=options['force'])
        self.emit({'name': tag.name, 'target': tag.target}, f"Tagged {short_id(tag.target)} as {tag.name}")

from datasets.serializers import TombstoneSerializer
from datasets.services import DatasetManager
from repository.cli import DsrCommand


class Command(DsrCommand):
    help = "Delete a dataset's head and tags; its chunks are reclaimed by the next gc."

    def add_arguments(self, parser):
        parser.add_argument('name')

    def handle(self, *args, **options):
        principal = self.principal(options)
        tombstone = DatasetManager(self.repository()).delete_dataset(principal, options['name'])
        self.emit(
            TombstoneSerializer(tombstone).data,
            f"Deleted dataset {tombstone.dataset} ({len(tombstone.commits)} commits tombstoned)",
        )

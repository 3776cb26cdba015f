from datasets.serializers import CommitSerializer
from lineage.services import LineageService
from repository.cli import DsrCommand
from repository.ids import short_id


def node_line(node, upstream: bool) -> str:
    commit = node.commit
    line = f"{'  ' * node.depth}{short_id(commit.commit_id)} {commit.dataset}"
    if commit.message:
        line += f"  {commit.message}"
    if node.via is not None:
        arrow = 'via' if upstream else 'into'
        line += f"  ({arrow} {node.via.workflow} run {node.via.run_id})"
    if commit.revoked:
        line += '  [revoked]'
    if node.repeated:
        line += '  ...'
    return line


class Command(DsrCommand):
    help = 'Print the versions a commit derives from (--up) or that derive from it (--down).'

    def add_arguments(self, parser):
        parser.add_argument('commit', help='Commit id, NAME or NAME@vN.')
        direction = parser.add_mutually_exclusive_group()
        direction.add_argument('--up', action='store_true', default=True, help='Ancestors (default).')
        direction.add_argument('--down', action='store_true')

    def handle(self, *args, **options):
        principal = self.principal(options)
        upstream = not options['down']
        for node in LineageService(self.repository()).tree(principal, options['commit'], upstream=upstream):
            self.emit(
                {
                    'depth': node.depth,
                    'commit': CommitSerializer(node.commit).data,
                    'run_id': node.via.run_id if node.via else None,
                    'workflow': node.via.workflow if node.via else None,
                    'repeated': node.repeated,
                },
                node_line(node, upstream),
            )

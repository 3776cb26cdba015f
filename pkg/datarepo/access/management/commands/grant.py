from access.models import Role
from access.services import AccessControl
from repository.cli import DsrCommand


class Command(DsrCommand):
    help = 'Give a principal a role on a dataset, or on every dataset with "*".'

    def add_arguments(self, parser):
        parser.add_argument('grantee')
        parser.add_argument('dataset', help='Dataset name or "*".')
        parser.add_argument('role', choices=Role.values)

    def handle(self, *args, **options):
        principal = self.principal(options)
        entry = AccessControl(self.repository()).grant(principal, options['grantee'], options['dataset'], options['role'])
        self.emit(
            {'principal': entry.principal, 'dataset': entry.dataset, 'role': entry.role.value},
            f"Granted {entry.role.value} on {entry.dataset} to {entry.principal}",
        )

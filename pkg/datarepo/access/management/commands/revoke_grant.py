from access.services import AccessControl
from repository.cli import DsrCommand


class Command(DsrCommand):
    help = "Remove a principal's grant on a dataset (or on \"*\")."

    def add_arguments(self, parser):
        parser.add_argument('grantee')
        parser.add_argument('dataset', help='Dataset name or "*".')

    def handle(self, *args, **options):
        principal = self.principal(options)
        grantee, dataset = options['grantee'], options['dataset']
        entry = AccessControl(self.repository()).revoke_grant(principal, grantee, dataset)
        if entry is None:
            self.emit({'principal': grantee, 'dataset': dataset, 'role': None}, f"{grantee} had no grant on {dataset}")
            return
        self.emit(
            {'principal': entry.principal, 'dataset': entry.dataset, 'role': entry.role.value},
            f"Revoked {entry.role.value} on {entry.dataset} from {entry.principal}",
        )

from lineage.serializers import RevocationMarkSerializer
from lineage.services import LineageService
from repository.cli import DsrCommand
from repository.ids import short_id


class Command(DsrCommand):
    help = 'Mark a version, and by default everything derived from it, as unusable.'

    def add_arguments(self, parser):
        parser.add_argument('commit', help='Commit id, NAME or NAME@vN.')
        parser.add_argument('-m', '--message', required=True, dest='reason', help='Reason, kept in the revocation log.')
        parser.add_argument('--no-cascade', action='store_false', dest='cascade', help='Revoke only this commit.')

    def handle(self, *args, **options):
        principal = self.principal(options)
        mark = LineageService(self.repository()).revoke(
            principal, options['commit'], options['reason'], cascade=options['cascade']
        )
        if self.json_output:
            self.emit(RevocationMarkSerializer(mark).data)
            return
        self.say(f"Revoked {short_id(mark.commit_id)}: {mark.reason}")
        for commit_id in mark.closure:
            self.say(f"  and derived {short_id(commit_id)}")

"""
access/services.py

Default-deny role table stored in ``acl.json``. ``authorize`` is a pure
function of the table; writes rewrite the whole file atomically under the
journal lock.
"""
import logging

from repository.canonical import canonical_dumps
from repository.exceptions import IntegrityError, PermissionDenied, ValidationError
from repository.fileio import atomic_write_json, read_json
from repository.layout import Repository
from repository.validators import validate_name
from .models import ANY_DATASET, ROLE_RANK, AclEntry, Action, Decision, Role
from .permissions import action_for
from .serializers import AclEntrySerializer

logger = logging.getLogger(__name__)


class AccessControl:
    def __init__(self, repo: Repository):
        self.repo = repo

    # -- table -----------------------------------------------------------

    def entries(self) -> list[AclEntry]:
        try:
            payload = read_json(self.repo.acl_path)
        except FileNotFoundError:
            return []
        serializer = AclEntrySerializer(data=payload, many=True)
        if not serializer.is_valid():
            raise IntegrityError(f"acl.json is malformed: {serializer.errors}")
        return serializer.save()

    def _table(self) -> dict[tuple[str, str], Role]:
        return {(entry.principal, entry.dataset): entry.role for entry in self.entries()}

    def _write(self, table: dict[tuple[str, str], Role]) -> None:
        entries = [AclEntry(principal, dataset, role) for (principal, dataset), role in sorted(table.items())]
        atomic_write_json(self.repo.acl_path, AclEntrySerializer(entries, many=True).data)

    # -- decisions -------------------------------------------------------

    def effective_role(self, principal: str, dataset: str, table=None) -> Role | None:
        table = self._table() if table is None else table
        candidates = [table.get((principal, dataset)), table.get((principal, ANY_DATASET))]
        candidates = [role for role in candidates if role is not None]
        if not candidates:
            return None
        return max(candidates, key=lambda role: ROLE_RANK[role])

    def authorize(self, principal: str, action: Action, dataset: str, table=None) -> Decision:
        action = Action(action)
        role = self.effective_role(principal, dataset, table)
        if role is None:
            return Decision(False, f"{principal} has no access to {dataset}")
        if ROLE_RANK[role] < ROLE_RANK[action.required_role]:
            return Decision(False, f"{principal} is {role.value} on {dataset}; {action.value} needs {action.required_role.value}")
        return Decision(True)

    def require(self, principal: str, action: Action, dataset: str) -> None:
        decision = self.authorize(principal, action, dataset)
        if not decision:
            raise PermissionDenied(f"permission denied: {decision.reason}")

    def require_operation(self, principal: str, operation: str, dataset: str) -> None:
        self.require(principal, action_for(operation), dataset)

    def readable(self, principal: str, datasets) -> set[str]:
        table = self._table()
        return {dataset for dataset in datasets if self.authorize(principal, Action.READ, dataset, table)}

    # -- administration --------------------------------------------------

    def bootstrap(self, principal: str) -> AclEntry:
        """The principal who initializes the repository administers everything."""
        validate_name(principal, 'principal')
        with self.repo.journal_lock():
            table = self._table()
            table[(principal, ANY_DATASET)] = Role.ADMIN
            self._write(table)
        return AclEntry(principal, ANY_DATASET, Role.ADMIN)

    def grant(self, admin: str, principal: str, dataset: str, role: Role | str) -> AclEntry:
        entry = AclEntrySerializer(data={'principal': principal, 'dataset': dataset, 'role': role})
        if not entry.is_valid():
            raise ValidationError(f"invalid grant: {canonical_dumps(entry.errors)}")
        entry = entry.save()
        with self.repo.journal_lock():
            self.require_operation(admin, 'grant', dataset)
            table = self._table()
            table[(entry.principal, entry.dataset)] = entry.role
            self._write(table)
        logger.info("%s granted %s %s on %s", admin, entry.principal, entry.role.value, entry.dataset)
        return entry

    def revoke_grant(self, admin: str, principal: str, dataset: str) -> AclEntry | None:
        with self.repo.journal_lock():
            self.require_operation(admin, 'revoke_grant', dataset)
            table = self._table()
            role = table.pop((principal, dataset), None)
            if role is None:
                return None
            self._write(table)
        logger.info("%s revoked %s's %s grant on %s", admin, principal, role.value, dataset)
        return AclEntry(principal, dataset, role)

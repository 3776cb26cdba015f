from dataclasses import dataclass

from django.db import models

ANY_DATASET = '*'


class Role(models.TextChoices):
    READER = 'reader', 'Reader'
    WRITER = 'writer', 'Writer'
    ADMIN = 'admin', 'Admin'

    @property
    def rank(self) -> int:
        return ROLE_RANK[self]


ROLE_RANK = {Role.READER: 1, Role.WRITER: 2, Role.ADMIN: 3}


class Action(models.TextChoices):
    READ = 'read', 'Read'
    WRITE = 'write', 'Write'
    ADMIN = 'admin', 'Administer'

    @property
    def required_role(self) -> Role:
        return {Action.READ: Role.READER, Action.WRITE: Role.WRITER, Action.ADMIN: Role.ADMIN}[self]


@dataclass(frozen=True)
class AclEntry:
    principal: str
    dataset: str
    role: Role


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: str = ''

    def __bool__(self):
        return self.allowed

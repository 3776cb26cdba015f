from dataclasses import dataclass


@dataclass(frozen=True)
class ProvenanceRecord:
    output_commit: str
    input_commits: tuple[str, ...]
    workflow: str
    workflow_def: str
    run_id: str
    terminal_step: str
    recorded_at: int


@dataclass(frozen=True)
class RevocationMark:
    commit_id: str
    reason: str
    revoked_by: str
    revoked_at: int
    cascade: bool
    closure: tuple[str, ...] = ()

    @property
    def revoked(self) -> set[str]:
        return {self.commit_id, *self.closure}

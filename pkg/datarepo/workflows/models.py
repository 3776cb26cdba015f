"""
Workflow definitions, runs and their state machine.
"""
from dataclasses import dataclass, field, replace

from django.db import models

from datasets.models import QueryExpr
from repository.exceptions import InvalidState


class StepKind(models.TextChoices):
    PROGRAM = 'program', 'Program'
    HUMAN = 'human', 'Human'


class StepState(models.TextChoices):
    PENDING = 'pending', 'Pending'
    RUNNING = 'running', 'Running'
    AWAITING_HUMAN = 'awaiting_human', 'Awaiting human'
    SUCCEEDED = 'succeeded', 'Succeeded'
    FAILED = 'failed', 'Failed'
    SKIPPED = 'skipped', 'Skipped'

    @property
    def is_terminal(self) -> bool:
        return self in TERMINAL_STEP_STATES


TERMINAL_STEP_STATES = frozenset({StepState.SUCCEEDED, StepState.FAILED, StepState.SKIPPED})

# pending -> skipped is only taken when an ancestor failed; the engine checks that.
STEP_TRANSITIONS = {
    StepState.PENDING: frozenset({StepState.RUNNING, StepState.AWAITING_HUMAN, StepState.SKIPPED}),
    StepState.RUNNING: frozenset({StepState.SUCCEEDED, StepState.FAILED}),
    StepState.AWAITING_HUMAN: frozenset({StepState.SUCCEEDED, StepState.FAILED}),
    StepState.SUCCEEDED: frozenset(),
    StepState.FAILED: frozenset(),
    StepState.SKIPPED: frozenset(),
}


def check_transition(step_id: str, current: StepState, new: StepState) -> None:
    if StepState(new) not in STEP_TRANSITIONS[StepState(current)]:
        raise InvalidState(f"step {step_id} cannot go from {current} to {new}")


class RunState(models.TextChoices):
    PENDING = 'pending', 'Pending'
    RUNNING = 'running', 'Running'
    AWAITING_HUMAN = 'awaiting_human', 'Awaiting human'
    SUCCEEDED = 'succeeded', 'Succeeded'
    FAILED = 'failed', 'Failed'


class TriggerKind(models.TextChoices):
    EVENT = 'event', 'New dataset version'
    SCHEDULE = 'schedule', 'Cron schedule'
    MANUAL = 'manual', 'Manual'


@dataclass(frozen=True)
class StepInput:
    """What a source step checks out at run start.

    Either a query (``multi`` allows several matches) or ``trigger``: the
    commit whose event started the run.
    """
    query: QueryExpr | None = None
    multi: bool = False
    trigger: bool = False


@dataclass(frozen=True)
class Step:
    id: str
    kind: StepKind
    needs: tuple[str, ...] = ()
    input: StepInput | None = None
    argv: tuple[str, ...] = ()
    cpu_slots: int = 1
    instructions: str = ''
    terminal: bool = False
    timeout_seconds: float | None = None

    @property
    def is_source(self) -> bool:
        return not self.needs


@dataclass(frozen=True)
class Trigger:
    kind: TriggerKind
    query: QueryExpr | None = None
    cron: str | None = None


@dataclass(frozen=True)
class OutputSpec:
    dataset: str
    tags: tuple[str, ...] = ()
    message: str = 'output of {workflow} run {run_id}'


@dataclass(frozen=True)
class WorkflowDef:
    name: str
    owner: str
    steps: tuple[Step, ...]
    triggers: tuple[Trigger, ...] = ()
    output: OutputSpec | None = None
    def_id: str = ''

    @property
    def step_map(self) -> dict[str, Step]:
        return {step.id: step for step in self.steps}

    @property
    def terminal_step(self) -> Step | None:
        return next((step for step in self.steps if step.terminal), None)

    def triggers_of(self, kind: TriggerKind) -> list[Trigger]:
        return [trigger for trigger in self.triggers if trigger.kind == kind]


@dataclass(frozen=True)
class WorkflowVersion:
    name: str
    version: int
    def_id: str
    registered_by: str
    registered_at: int


@dataclass(frozen=True)
class RunCause:
    kind: TriggerKind = TriggerKind.MANUAL
    commit_id: str | None = None
    fire_time: int | None = None
    depth: int = 0
    root: str | None = None

    @classmethod
    def manual(cls) -> 'RunCause':
        return cls(TriggerKind.MANUAL)

    @classmethod
    def event(cls, commit_id: str, depth: int = 0, root: str | None = None) -> 'RunCause':
        return cls(TriggerKind.EVENT, commit_id=commit_id, depth=depth, root=root or commit_id)

    @classmethod
    def schedule(cls, fire_time: int) -> 'RunCause':
        return cls(TriggerKind.SCHEDULE, fire_time=fire_time)

    def describe(self) -> str:
        if self.kind == TriggerKind.EVENT:
            return f"event {self.commit_id}"
        if self.kind == TriggerKind.SCHEDULE:
            return f"schedule {self.fire_time}"
        return 'manual'


@dataclass
class StepResult:
    step_id: str
    state: StepState = StepState.PENDING
    exit_code: int | None = None
    started_at: float | None = None
    finished_at: float | None = None
    stderr_tail: str = ''
    error: str = ''
    approved_by: str | None = None


@dataclass
class Run:
    run_id: str
    workflow: str
    def_id: str
    cause: RunCause
    principal: str
    created_at: float
    steps: dict[str, StepResult] = field(default_factory=dict)
    pins: dict[str, tuple[str, ...]] = field(default_factory=dict)
    finished: bool = False
    failed: bool = False
    finished_at: float | None = None
    output_commit: str | None = None
    output_manifest: str | None = None
    error: str = ''

    @property
    def pinned_commits(self) -> tuple[str, ...]:
        commits = []
        for step_id in sorted(self.pins):
            for commit_id in self.pins[step_id]:
                if commit_id not in commits:
                    commits.append(commit_id)
        return tuple(commits)

    @property
    def state(self) -> RunState:
        if self.finished:
            return RunState.FAILED if self.failed else RunState.SUCCEEDED
        states = {result.state for result in self.steps.values()}
        if StepState.RUNNING in states:
            return RunState.RUNNING
        if StepState.AWAITING_HUMAN in states:
            return RunState.AWAITING_HUMAN
        if states and states <= {StepState.PENDING}:
            return RunState.PENDING
        return RunState.RUNNING

    def copy(self) -> 'Run':
        return replace(self, steps={key: replace(value) for key, value in self.steps.items()}, pins=dict(self.pins))

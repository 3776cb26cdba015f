"""
workflows/journal.py

Append-only run journals, ``runs/<run_id>/journal.jsonl``. One record per
state change; the current state of a run is the replay of its journal.

Record kinds::

    created   run_id workflow def_id cause principal steps pins
    step      step_id state [exit_code stderr_tail error approved_by]
    finished  state [output_commit output_manifest error]
"""
import logging
import time
from pathlib import Path

from repository.exceptions import IntegrityError, InvalidState, NotFound
from repository.fileio import append_jsonl, iter_jsonl
from repository.layout import Repository
from .models import Run, RunCause, StepResult, StepState, check_transition
from .serializers import RunCauseSerializer

logger = logging.getLogger(__name__)


class RunJournal:
    def __init__(self, repo: Repository, run_id: str):
        self.repo = repo
        self.run_id = run_id

    @property
    def run_dir(self) -> Path:
        return self.repo.runs_dir / self.run_id

    @property
    def path(self) -> Path:
        return self.run_dir / 'journal.jsonl'

    def step_dir(self, step_id: str) -> Path:
        return self.run_dir / 'steps' / step_id

    def exists(self) -> bool:
        return self.path.exists()

    def lock(self):
        """Serializes appends; held only for a read-check-append."""
        return self.repo.named_lock('runs', self.run_id, 'journal')

    def executor_lock(self):
        """Held by whoever is currently executing the run's steps."""
        return self.repo.named_lock('runs', self.run_id, 'executor', blocking=False)

    def _append(self, record: dict) -> None:
        append_jsonl(self.path, {'timestamp': time.time(), **record})

    # -- writers ---------------------------------------------------------

    def create(
        self,
        workflow: str,
        def_id: str,
        cause: RunCause,
        principal: str,
        step_ids: list[str],
        pins: dict[str, list[str]] | None = None,
    ) -> Run:
        """The first record carries the pinned input commits (step id -> commit ids)."""
        if self.exists():
            raise IntegrityError(f"run {self.run_id} already exists")
        self.run_dir.mkdir(parents=True, exist_ok=True)
        with self.lock():
            self._append({
                'kind': 'created',
                'run_id': self.run_id,
                'workflow': workflow,
                'def_id': def_id,
                'cause': RunCauseSerializer(cause).data,
                'principal': principal,
                'steps': list(step_ids),
                'pins': {key: list(value) for key, value in sorted((pins or {}).items())},
            })
        return self.replay()

    def transition(self, step_id: str, state: StepState, **fields) -> StepResult:
        """Move one step along the state machine; illegal moves raise ``InvalidState``."""
        with self.lock():
            run = self.replay()
            if run.finished:
                raise InvalidState(f"run {self.run_id} is already finished")
            try:
                current = run.steps[step_id]
            except KeyError as exc:
                raise NotFound(f"run {self.run_id} has no step {step_id}") from exc
            check_transition(step_id, current.state, state)
            self._append({'kind': 'step', 'step_id': step_id, 'state': StepState(state).value, **fields})
        return self.replay().steps[step_id]

    def finish(self, failed: bool, output_commit: str | None = None, output_manifest: str | None = None, error: str = '') -> Run:
        with self.lock():
            run = self.replay()
            if run.finished:
                raise InvalidState(f"run {self.run_id} is already finished")
            self._append({
                'kind': 'finished',
                'state': 'failed' if failed else 'succeeded',
                'output_commit': output_commit,
                'output_manifest': output_manifest,
                'error': error,
            })
        return self.replay()

    # -- replay ----------------------------------------------------------

    def records(self) -> list[dict]:
        return list(iter_jsonl(self.path))

    def replay(self) -> Run:
        records = self.records()
        if not records or records[0].get('kind') != 'created':
            raise NotFound(f"unknown run {self.run_id}")
        head = records[0]
        cause = RunCauseSerializer(data=head['cause'])
        if not cause.is_valid():
            raise IntegrityError(f"run {self.run_id} has a malformed cause: {cause.errors}")
        run = Run(
            run_id=head['run_id'],
            workflow=head['workflow'],
            def_id=head['def_id'],
            cause=cause.save(),
            principal=head['principal'],
            created_at=head['timestamp'],
            steps={step_id: StepResult(step_id=step_id) for step_id in head['steps']},
            pins={key: tuple(value) for key, value in head.get('pins', {}).items()},
        )
        for record in records[1:]:
            kind = record.get('kind')
            if kind == 'step':
                result = run.steps[record['step_id']]
                state = StepState(record['state'])
                if state == StepState.RUNNING:
                    result.started_at = record['timestamp']
                elif state == StepState.AWAITING_HUMAN:
                    result.started_at = record['timestamp']
                elif state.is_terminal:
                    result.finished_at = record['timestamp']
                result.state = state
                for key in ('exit_code', 'stderr_tail', 'error', 'approved_by'):
                    if key in record:
                        setattr(result, key, record[key])
            elif kind == 'finished':
                run.finished = True
                run.failed = record['state'] == 'failed'
                run.finished_at = record['timestamp']
                run.output_commit = record.get('output_commit')
                run.output_manifest = record.get('output_manifest')
                run.error = record.get('error') or ''
            else:
                logger.warning("Ignoring unknown record kind %r in run %s", kind, self.run_id)
        return run


def list_run_ids(repo: Repository) -> list[str]:
    if not repo.runs_dir.is_dir():
        return []
    return sorted(path.name for path in repo.runs_dir.iterdir() if (path / 'journal.jsonl').exists())


def read_cause(repo: Repository, run_id: str) -> tuple[str, dict] | None:
    """``(workflow, cause)`` from the first journal record, without a full replay."""
    for record in iter_jsonl(repo.runs_dir / run_id / 'journal.jsonl'):
        if record.get('kind') == 'created':
            return record['workflow'], record['cause']
        return None
    return None

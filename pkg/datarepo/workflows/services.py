"""
workflows/services.py

The workflow engine: starts runs, drives their steps through the worker
pool, waits on human approvals and commits the terminal step's output back
into the repository with a provenance record.

A run is driven by whoever holds its executor lock (a daemon thread or the
CLI process that started or resumed it). Every state change goes through the
run journal, so a run can be resumed by another process after approval.
"""
import logging
import shutil
import time
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings

from access.models import Action
from datasets.services import DatasetManager
from datasets.worktree import make_read_only
from lineage.models import ProvenanceRecord
from lineage.services import LineageService
from repository.exceptions import (
    AmbiguousQuery,
    ConcurrencyError,
    ConflictError,
    EmptyCommit,
    InvalidState,
    NoMatch,
    NotFound,
    PermissionDenied,
    RepositoryError,
    RevokedData,
    ValidationError,
)
from repository.ids import new_run_id, short_id
from repository.layout import Repository
from repository.locks import FileLock
from .executors import ExecutionResult, StepContext, SubprocessStepRunner
from .journal import RunJournal, list_run_ids
from .models import (
    Run,
    RunCause,
    RunState,
    Step,
    StepKind,
    StepResult,
    StepState,
    TriggerKind,
    WorkflowDef,
)
from .pool import SlotPool
from .registry import WorkflowRegistry, topological_order
from .serializers import render_message
from .triggers import initialize_event_cursor

logger = logging.getLogger(__name__)

OUTPUT_COMMIT_ATTEMPTS = 3
IDLE_WAIT_SECONDS = 0.2


@dataclass
class RunHandle:
    run_id: str
    future: Future

    def result(self, timeout: float | None = None) -> Run:
        return self.future.result(timeout)

    def done(self) -> bool:
        return self.future.done()


def _completed(run_id: str, run: Run) -> RunHandle:
    future = Future()
    future.set_result(run)
    return RunHandle(run_id, future)


def _error_text(exc: RepositoryError) -> str:
    return f"{exc.code}: {exc}"


class WorkflowEngine:
    def __init__(
        self,
        repo: Repository,
        pool_size: int | None = None,
        step_runner=None,
        datasets: DatasetManager | None = None,
    ):
        self.repo = repo
        self.datasets = datasets or DatasetManager(repo)
        self.access = self.datasets.access
        self.lineage = LineageService(repo, self.datasets)
        self.registry = WorkflowRegistry(repo)
        self.pool = SlotPool(pool_size or getattr(settings, 'DSR_WORKER_POOL_SIZE', 1))
        self.step_runner = step_runner or SubprocessStepRunner()
        self._step_executor = ThreadPoolExecutor(max_workers=self.pool.capacity, thread_name_prefix='dsr-step')
        self._run_executor = ThreadPoolExecutor(
            max_workers=max(4, self.pool.capacity), thread_name_prefix='dsr-run'
        )

    def shutdown(self, wait: bool = True) -> None:
        self._run_executor.shutdown(wait=wait)
        self._step_executor.shutdown(wait=wait)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.shutdown()
        return False

    # -- registration ----------------------------------------------------

    def register_workflow(self, principal: str, source: Path | dict) -> WorkflowDef:
        payload = source if isinstance(source, dict) else self.registry.load_file(Path(source))
        definition = self.registry.register(principal, payload)
        initialize_event_cursor(self.repo, definition.name, len(self.datasets.events()))
        return definition

    # -- starting runs ---------------------------------------------------

    def run_workflow(self, principal: str, name: str, cause: RunCause | None = None, wait: bool = True) -> Run | RunHandle:
        handle = self.start_run(principal, self.registry.latest(name), cause or RunCause.manual())
        return handle.result() if wait else handle

    def start_run(self, principal: str, definition: WorkflowDef, cause: RunCause) -> RunHandle:
        """Pin inputs and create the run; its steps execute in the background.

        Manual runs check the invoker's authority. Every run reads and writes
        as the workflow owner.
        """
        manual = cause.kind == TriggerKind.MANUAL
        if manual and definition.output is not None:
            self.access.require_operation(principal, 'workflow_run', definition.output.dataset)

        error = None
        pins = {}
        try:
            pins = self.resolve_inputs(definition, cause)
        except (AmbiguousQuery, NoMatch, NotFound, PermissionDenied, RevokedData, ValidationError) as exc:
            error = exc

        if manual and definition.output is None and error is None:
            pinned_datasets = {self.datasets.load_commit(commit_id).dataset for ids in pins.values() for commit_id in ids}
            for dataset in sorted(pinned_datasets):
                self.access.require(principal, Action.READ, dataset)

        run_id = new_run_id()
        journal = RunJournal(self.repo, run_id)
        journal.create(definition.name, definition.def_id, cause, principal, topological_order(definition), pins)
        if error is not None:
            logger.warning("Run %s of %s failed before any step: %s", run_id, definition.name, error)
            return _completed(run_id, journal.finish(failed=True, error=_error_text(error)))

        logger.info("Started run %s of %s (%s)", run_id, definition.name, cause.describe())
        return RunHandle(run_id, self._run_executor.submit(self.advance, run_id))

    def resume(self, run_id: str) -> RunHandle:
        """Continue a run left unfinished by a process that stopped."""
        run = self.report(run_id)
        if run.finished:
            return _completed(run_id, run)
        logger.info("Resuming run %s of %s", run_id, run.workflow)
        return RunHandle(run_id, self._run_executor.submit(self.advance, run_id))

    def resolve_inputs(self, definition: WorkflowDef, cause: RunCause) -> dict[str, list[str]]:
        pins = {}
        for step in definition.steps:
            if step.input is None:
                continue
            if step.input.trigger:
                if cause.kind != TriggerKind.EVENT or not cause.commit_id:
                    raise NoMatch(f"step {step.id} takes the triggering commit but the run was started by {cause.describe()}")
                commit = self.datasets.load_commit(cause.commit_id)
                self.access.require(definition.owner, Action.READ, commit.dataset)
                if commit.revoked:
                    raise RevokedData(f"triggering commit {short_id(commit.commit_id)} is revoked")
                pins[step.id] = [commit.commit_id]
            else:
                commits = self.datasets.resolve(definition.owner, step.input.query, multi_ok=step.input.multi)
                pins[step.id] = [commit.commit_id for commit in commits]
        return pins

    # -- driving runs ----------------------------------------------------

    def definition_for(self, run: Run) -> WorkflowDef:
        return self.registry.get(run.def_id)

    def advance(self, run_id: str) -> Run:
        """Execute whatever is runnable until the run finishes or waits on a human."""
        journal = RunJournal(self.repo, run_id)
        executor_lock = journal.executor_lock()
        try:
            executor_lock.acquire()
        except ConcurrencyError:
            logger.info("Run %s is being executed elsewhere", run_id)
            return journal.replay()
        try:
            return self._drive(journal, executor_lock)
        except BaseException:
            if FileLock.is_held(executor_lock.path):
                executor_lock.release()
            raise

    def _drive(self, journal: RunJournal, executor_lock) -> Run:
        run = journal.replay()
        definition = self.definition_for(run)
        order = topological_order(definition)

        for result in run.steps.values():
            if result.state == StepState.RUNNING:
                journal.transition(result.step_id, StepState.FAILED, error='interrupted: the executing process stopped')

        in_flight: dict[Future, Step] = {}
        try:
            return self._drive_steps(journal, executor_lock, definition, order, in_flight)
        finally:
            for future, step in in_flight.items():
                future.add_done_callback(lambda _future, slots=step.cpu_slots: self.pool.release(slots))

    def _drive_steps(self, journal: RunJournal, executor_lock, definition: WorkflowDef, order: list[str], in_flight: dict[Future, Step]) -> Run:
        steps = definition.step_map
        while True:
            run = journal.replay()
            if run.finished:
                executor_lock.release()
                return run
            self._skip_blocked(journal, run, definition, order)
            run = journal.replay()

            blocked_on_pool = False
            for step_id in self._ready(run, definition, order):
                step = steps[step_id]
                if step.kind == StepKind.HUMAN:
                    self._enter_human_step(journal, run, definition, step)
                    continue
                if not self.pool.fits(step.cpu_slots):
                    journal.transition(step_id, StepState.RUNNING)
                    journal.transition(
                        step_id, StepState.FAILED,
                        error=f"needs {step.cpu_slots} slots but the pool has {self.pool.capacity}",
                    )
                    continue
                if not self.pool.acquire(step.cpu_slots, blocking=False):
                    blocked_on_pool = True
                    continue
                try:
                    journal.transition(step_id, StepState.RUNNING)
                except BaseException:
                    self.pool.release(step.cpu_slots)
                    raise
                in_flight[self._step_executor.submit(self.execute_program_step, run, step)] = step

            if in_flight:
                done, _ = wait(list(in_flight), timeout=IDLE_WAIT_SECONDS, return_when=FIRST_COMPLETED)
                for future in done:
                    step = in_flight.pop(future)
                    try:
                        future.result()
                    except Exception as exc:
                        logger.exception("Run %s: step %s crashed", run.run_id, step.id)
                        self._fail_crashed_step(journal, step, exc)
                    finally:
                        self.pool.release(step.cpu_slots)
                continue
            if blocked_on_pool:
                self.pool.wait_for_release(IDLE_WAIT_SECONDS)
                continue

            run = journal.replay()
            if all(result.state.is_terminal for result in run.steps.values()):
                run = self._finish(journal, run, definition)
                executor_lock.release()
                return run

            # Waiting on a human. Release under the journal lock so an approval
            # appended concurrently is either seen here or finds the lock free.
            with journal.lock():
                if self._ready(journal.replay(), definition, order):
                    continue
                executor_lock.release()
            logger.info("Run %s is waiting for human approval", run.run_id)
            return journal.replay()

    @staticmethod
    def _fail_crashed_step(journal: RunJournal, step: Step, exc: Exception) -> None:
        try:
            journal.transition(step.id, StepState.FAILED, error=f"executor crashed: {exc}")
        except InvalidState:
            # Already terminal.
            pass

    @staticmethod
    def _ready(run: Run, definition: WorkflowDef, order: list[str]) -> list[str]:
        steps = definition.step_map
        return [
            step_id for step_id in order
            if run.steps[step_id].state == StepState.PENDING
            and all(run.steps[need].state == StepState.SUCCEEDED for need in steps[step_id].needs)
        ]

    @staticmethod
    def _skip_blocked(journal: RunJournal, run: Run, definition: WorkflowDef, order: list[str]) -> None:
        steps = definition.step_map
        states = {step_id: result.state for step_id, result in run.steps.items()}
        for step_id in order:
            if states[step_id] != StepState.PENDING:
                continue
            blocking = [need for need in steps[step_id].needs if states[need] in (StepState.FAILED, StepState.SKIPPED)]
            if blocking:
                journal.transition(step_id, StepState.SKIPPED, error=f"upstream step {blocking[0]} did not succeed")
                states[step_id] = StepState.SKIPPED

    # -- steps -----------------------------------------------------------

    def step_context(self, run: Run, step: Step) -> StepContext:
        return StepContext(run_id=run.run_id, step=step, step_dir=RunJournal(self.repo, run.run_id).step_dir(step.id))

    def prepare_step(self, run: Run, step: Step) -> StepContext:
        """Fresh working directory with a read-only ``inputs/`` and an empty ``outputs/``."""
        context = self.step_context(run, step)
        if context.work_dir.exists():
            shutil.rmtree(context.work_dir)
        context.step_dir.mkdir(parents=True, exist_ok=True)
        inputs = context.inputs_dir
        definition = self.definition_for(run)

        if step.is_source:
            pinned = [self.datasets.load_commit(commit_id) for commit_id in run.pins.get(step.id, ())]
            if step.input is not None and step.input.multi:
                inputs.mkdir(parents=True)
                for commit in pinned:
                    self.datasets.materialize(commit, inputs / f'{commit.dataset}@{short_id(commit.commit_id)}')
            elif pinned:
                self.datasets.materialize(pinned[0], inputs)
            else:
                inputs.mkdir(parents=True)
        elif len(step.needs) == 1:
            shutil.copytree(self._outputs_of(run, definition, step.needs[0]), inputs)
        else:
            inputs.mkdir(parents=True)
            for need in step.needs:
                shutil.copytree(self._outputs_of(run, definition, need), inputs / need)

        make_read_only(inputs)
        context.outputs_dir.mkdir(parents=True, exist_ok=True)
        return context

    def _outputs_of(self, run: Run, definition: WorkflowDef, step_id: str) -> Path:
        return self.step_context(run, definition.step_map[step_id]).outputs_dir

    def execute_program_step(self, run: Run, step: Step) -> StepResult:
        """Run one eligible program step; the caller holds its slots and moved it to running."""
        journal = RunJournal(self.repo, run.run_id)
        try:
            context = self.prepare_step(run, step)
        except (RepositoryError, OSError) as exc:
            logger.warning("Run %s: could not prepare step %s: %s", run.run_id, step.id, exc)
            error = _error_text(exc) if isinstance(exc, RepositoryError) else str(exc)
            return journal.transition(step.id, StepState.FAILED, error=f"preparing inputs failed: {error}")

        try:
            outcome: ExecutionResult = self.step_runner(context)
        except Exception as exc:
            logger.error("Run %s: executor crashed on step %s", run.run_id, step.id, exc_info=True)
            outcome = ExecutionResult(state=StepState.FAILED, error=f"executor crashed: {exc}")

        result = journal.transition(
            step.id,
            outcome.state,
            exit_code=outcome.exit_code,
            stderr_tail=outcome.stderr_tail,
            error=outcome.error,
        )
        logger.info("Run %s: step %s %s", run.run_id, step.id, result.state.value)
        return result

    def _enter_human_step(self, journal: RunJournal, run: Run, definition: WorkflowDef, step: Step) -> None:
        try:
            self.prepare_step(run, step)
        except (RepositoryError, OSError) as exc:
            journal.transition(step.id, StepState.AWAITING_HUMAN)
            journal.transition(step.id, StepState.FAILED, error=f"preparing inputs failed: {exc}")
            return
        journal.transition(step.id, StepState.AWAITING_HUMAN)
        logger.info("Run %s: step %s awaits a human: %s", run.run_id, step.id, step.instructions or '(no instructions)')

    def approve_human_step(
        self,
        principal: str,
        run_id: str,
        step_id: str,
        approve: bool = True,
        attached_dir: Path | None = None,
    ) -> StepResult:
        """Record a human decision; the daemon drives whatever it releases."""
        run_id = self.resolve_run_id(run_id)
        journal = RunJournal(self.repo, run_id)
        run = journal.replay()
        definition = self.definition_for(run)
        self._authorize_approver(principal, definition, run)
        step = definition.step_map.get(step_id)
        if step is None:
            raise NotFound(f"run {run_id} has no step {step_id}")
        state = run.steps[step_id].state
        if state != StepState.AWAITING_HUMAN:
            raise InvalidState(f"step {step_id} is {state.value}, not awaiting_human")

        if approve:
            context = self.step_context(run, step)
            source = Path(attached_dir) if attached_dir is not None else context.inputs_dir
            if not source.is_dir():
                raise ValidationError(f"attached directory {source} does not exist")
            if context.outputs_dir.exists():
                shutil.rmtree(context.outputs_dir)
            shutil.copytree(source, context.outputs_dir)
            result = journal.transition(step_id, StepState.SUCCEEDED, approved_by=principal)
        else:
            result = journal.transition(step_id, StepState.FAILED, approved_by=principal, error=f"rejected by {principal}")
        logger.info("%s %s step %s of run %s", principal, 'approved' if approve else 'rejected', step_id, run_id)
        return result

    def released_by_approval(self, run: Run) -> bool:
        """An approval or rejection left work that no executor has picked up yet."""
        if run.finished or any(result.state == StepState.RUNNING for result in run.steps.values()):
            return False
        if not any(result.approved_by for result in run.steps.values()):
            return False
        if all(result.state.is_terminal for result in run.steps.values()):
            return True
        definition = self.definition_for(run)
        return bool(self._ready(run, definition, topological_order(definition)))

    def fail_run(self, run_id: str, error: str) -> Run:
        """Finish a run whose driver crashed; a finished run is returned as is."""
        journal = RunJournal(self.repo, run_id)
        try:
            run = journal.finish(failed=True, error=error)
        except InvalidState:
            return journal.replay()
        logger.warning("Run %s marked failed: %s", run_id, error)
        return run

    def _authorize_approver(self, principal: str, definition: WorkflowDef, run: Run) -> None:
        if principal == definition.owner:
            return
        if definition.output is not None:
            self.access.require_operation(principal, 'approve_human_step', definition.output.dataset)
            return
        for commit_id in run.pinned_commits:
            self.access.require(principal, Action.READ, self.datasets.load_commit(commit_id).dataset)

    # -- completion ------------------------------------------------------

    def _finish(self, journal: RunJournal, run: Run, definition: WorkflowDef) -> Run:
        unsuccessful = sorted(step_id for step_id, result in run.steps.items() if result.state != StepState.SUCCEEDED)
        if unsuccessful:
            run = journal.finish(failed=True, error=f"step(s) did not succeed: {', '.join(unsuccessful)}")
        elif definition.output is None:
            run = journal.finish(failed=False)
        else:
            try:
                output_commit, output_manifest = self.commit_output(run, definition)
            except RepositoryError as exc:
                logger.warning("Run %s could not commit its output: %s", run.run_id, exc)
                run = journal.finish(failed=True, error=_error_text(exc))
            else:
                run = journal.finish(failed=False, output_commit=output_commit, output_manifest=output_manifest)
        logger.info("Run %s of %s %s", run.run_id, run.workflow, run.state.value)
        return run

    def commit_output(self, run: Run, definition: WorkflowDef) -> tuple[str | None, str]:
        """Check the terminal step's outputs into the output dataset as the owner.

        An output identical to the current head is not a new version: no
        commit is made and the head's manifest is reported.
        """
        output = definition.output
        terminal = definition.terminal_step
        outputs_dir = self.step_context(run, terminal).outputs_dir
        chained = run.cause.kind == TriggerKind.EVENT
        message = render_message(output.message, workflow=definition.name, run_id=run.run_id, step=terminal.id)

        for attempt in range(1, OUTPUT_COMMIT_ATTEMPTS + 1):
            try:
                commit = self.datasets.checkin(
                    definition.owner,
                    output.dataset,
                    outputs_dir,
                    message=message,
                    attributes={'workflow': definition.name, 'run_id': run.run_id},
                    tags=output.tags,
                    move_tags=True,
                    extra_parents=run.pinned_commits,
                    event_depth=run.cause.depth + 1 if chained else 0,
                    event_root=run.cause.root if chained else None,
                )
            except ConflictError:
                if attempt == OUTPUT_COMMIT_ATTEMPTS:
                    raise
                logger.info("Run %s: head of %s moved, retrying output commit", run.run_id, output.dataset)
                continue
            except EmptyCommit:
                head = self.datasets.load_commit(self.datasets.head(output.dataset))
                logger.info("Run %s produced the current head of %s; no new commit", run.run_id, output.dataset)
                return None, head.manifest_id
            break

        self.lineage.record_provenance(ProvenanceRecord(
            output_commit=commit.commit_id,
            input_commits=run.pinned_commits,
            workflow=definition.name,
            workflow_def=definition.def_id,
            run_id=run.run_id,
            terminal_step=terminal.id,
            recorded_at=int(time.time()),
        ))
        return commit.commit_id, commit.manifest_id

    # -- reporting -------------------------------------------------------

    def resolve_run_id(self, ref: str) -> str:
        """A full run id or a unique prefix of one."""
        ref = ref.strip().upper()
        matches = [run_id for run_id in list_run_ids(self.repo) if run_id.startswith(ref)]
        if not ref or not matches:
            raise NotFound(f"unknown run {ref}")
        if ref in matches:
            return ref
        if len(matches) > 1:
            raise AmbiguousQuery(f"run id {ref} is ambiguous ({len(matches)} matches)")
        return matches[0]

    def report(self, run_id: str) -> Run:
        return RunJournal(self.repo, self.resolve_run_id(run_id)).replay()

    def runs(self, state: RunState | str | None = None, workflow: str | None = None) -> list[Run]:
        runs = [RunJournal(self.repo, run_id).replay() for run_id in list_run_ids(self.repo)]
        if state is not None:
            runs = [run for run in runs if run.state == RunState(state)]
        if workflow is not None:
            runs = [run for run in runs if run.workflow == workflow]
        return runs

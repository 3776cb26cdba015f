"""
workflows/executors.py

Program steps run as subprocesses in a fresh working directory::

    runs/<run_id>/steps/<step_id>/work/inputs/    read-only input tree
    runs/<run_id>/steps/<step_id>/work/outputs/   the step's output tree
    runs/<run_id>/steps/<step_id>/stdout.log
    runs/<run_id>/steps/<step_id>/stderr.log

The environment carries DSR_RUN_ID, DSR_STEP_ID, DSR_INPUTS and DSR_OUTPUTS;
argv may also use the literal placeholders ``{run_id}``, ``{step_id}``,
``{inputs}`` and ``{outputs}``.
"""
import logging
import os
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings

from .models import Step, StepState

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepContext:
    run_id: str
    step: Step
    step_dir: Path

    @property
    def work_dir(self) -> Path:
        return self.step_dir / 'work'

    @property
    def inputs_dir(self) -> Path:
        return self.work_dir / 'inputs'

    @property
    def outputs_dir(self) -> Path:
        return self.work_dir / 'outputs'

    def environment(self) -> dict[str, str]:
        return {
            'DSR_RUN_ID': self.run_id,
            'DSR_STEP_ID': self.step.id,
            'DSR_INPUTS': str(self.inputs_dir),
            'DSR_OUTPUTS': str(self.outputs_dir),
        }

    def expand_argv(self) -> list[str]:
        placeholders = {
            '{run_id}': self.run_id,
            '{step_id}': self.step.id,
            '{inputs}': str(self.inputs_dir),
            '{outputs}': str(self.outputs_dir),
        }
        argv = []
        for arg in self.step.argv:
            for placeholder, value in placeholders.items():
                arg = arg.replace(placeholder, value)
            argv.append(arg)
        return argv


@dataclass(frozen=True)
class ExecutionResult:
    state: StepState
    exit_code: int | None = None
    stderr_tail: str = ''
    error: str = ''
    started_at: float | None = None
    finished_at: float | None = None


def read_tail(path: Path, limit: int) -> str:
    try:
        with open(path, 'rb') as handle:
            handle.seek(0, os.SEEK_END)
            size = handle.tell()
            handle.seek(max(0, size - limit))
            return handle.read().decode('utf-8', errors='replace')
    except FileNotFoundError:
        return ''


class SubprocessStepRunner:
    """Runs a program step's argv; exit 0 succeeds, anything else fails."""

    def __init__(self, timeout: float | None = None, tail_bytes: int | None = None):
        self.timeout = timeout if timeout is not None else getattr(settings, 'DSR_STEP_TIMEOUT_SECONDS', 3600)
        self.tail_bytes = tail_bytes if tail_bytes is not None else getattr(settings, 'DSR_STDERR_TAIL_BYTES', 65536)

    def __call__(self, context: StepContext) -> ExecutionResult:
        step = context.step
        timeout = step.timeout_seconds or self.timeout
        stderr_path = context.step_dir / 'stderr.log'
        stdout_path = context.step_dir / 'stdout.log'
        env = {**os.environ, **context.environment()}
        argv = context.expand_argv()
        started = time.time()
        logger.info("Run %s: starting step %s: %s", context.run_id, step.id, argv)
        try:
            with open(stdout_path, 'wb') as stdout, open(stderr_path, 'wb') as stderr:
                completed = subprocess.run(
                    argv,
                    cwd=context.work_dir,
                    env=env,
                    stdin=subprocess.DEVNULL,
                    stdout=stdout,
                    stderr=stderr,
                    timeout=timeout,
                    check=False,
                )
        except FileNotFoundError:
            return ExecutionResult(
                state=StepState.FAILED,
                error=f"executable not found: {argv[0]}",
                started_at=started,
                finished_at=time.time(),
            )
        except PermissionError as exc:
            return ExecutionResult(
                state=StepState.FAILED,
                error=f"cannot execute {argv[0]}: {exc.strerror}",
                started_at=started,
                finished_at=time.time(),
            )
        except subprocess.TimeoutExpired:
            return ExecutionResult(
                state=StepState.FAILED,
                stderr_tail=read_tail(stderr_path, self.tail_bytes),
                error=f"timed out after {timeout:g}s",
                started_at=started,
                finished_at=time.time(),
            )

        finished = time.time()
        tail = read_tail(stderr_path, self.tail_bytes)
        if completed.returncode == 0:
            return ExecutionResult(StepState.SUCCEEDED, 0, tail, '', started, finished)
        return ExecutionResult(
            state=StepState.FAILED,
            exit_code=completed.returncode,
            stderr_tail=tail,
            error=f"exited with status {completed.returncode}",
            started_at=started,
            finished_at=finished,
        )

"""
Shared fixtures for the app test suites.

``RepositoryTestCase`` gives every test a freshly initialized repository in
a temporary directory, administered by ``ADMIN``, with small chunking
parameters so multi-chunk files stay cheap to build.
"""
import io
import os
import random
import shutil
import tempfile
import threading
import time
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

from django.core.management import call_command
from django.test import SimpleTestCase, override_settings

from access.services import AccessControl
from datasets.services import DatasetManager
from storage.chunking import ChunkingParams
from .cli import run
from .layout import Repository

ADMIN = 'admin'
TEST_CHUNKING = ChunkingParams(min_size=512, avg_size=2048, max_size=8192)


def write_tree(root: Path, files: dict[str, bytes]) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for relative, data in files.items():
        path = root / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    return root


def read_tree(root: Path) -> dict[str, bytes]:
    root = Path(root)
    return {
        path.relative_to(root).as_posix(): path.read_bytes()
        for path in sorted(root.rglob('*'))
        if path.is_file()
    }


def random_tree(rng: random.Random, max_files: int = 20, max_size: int = 4096) -> dict[str, bytes]:
    files = {}
    for index in range(rng.randint(0, max_files)):
        depth = rng.randint(0, 2)
        parts = [f'd{rng.randint(0, 3)}' for _ in range(depth)] + [f'f{index}.bin']
        files['/'.join(parts)] = rng.randbytes(rng.randint(0, max_size))
    return files


class RepositoryTestCase(SimpleTestCase):
    chunking = TEST_CHUNKING

    def setUp(self):
        super().setUp()
        self._tmp = tempfile.mkdtemp(prefix='dsr-test-')
        self.addCleanup(self._remove_tmp)
        self.tmp = Path(self._tmp)
        self.root = self.tmp / 'repo'
        self.root.mkdir()
        self.repo = Repository.initialize(self.root, self.chunking.to_dict())
        AccessControl(self.repo).bootstrap(ADMIN)
        settings_override = override_settings(
            DSR_REPO=str(self.root),
            DSR_CHUNK_MIN_SIZE=self.chunking.min_size,
            DSR_CHUNK_AVG_SIZE=self.chunking.avg_size,
            DSR_CHUNK_MAX_SIZE=self.chunking.max_size,
        )
        settings_override.enable()
        self.addCleanup(settings_override.disable)
        self.datasets = DatasetManager(self.repo)
        self.access = self.datasets.access
        self._worktrees = 0

    def _remove_tmp(self):
        # Checked-out trees may be read-only.
        for directory, _, _ in os.walk(self._tmp):
            os.chmod(directory, 0o755)
        shutil.rmtree(self._tmp, ignore_errors=True)

    # -- helpers ---------------------------------------------------------

    def path(self, *parts: str) -> Path:
        return self.tmp.joinpath(*parts)

    def checkin_files(self, dataset: str, files: dict[str, bytes], principal: str = ADMIN, **kwargs):
        self._worktrees += 1
        worktree = write_tree(self.path('worktrees', f'{dataset}-{self._worktrees}'), files)
        return self.datasets.checkin(principal, dataset, worktree, **kwargs)

    def call(self, name: str, *args, **options) -> str:
        """``call_command`` with captured stdout; domain errors propagate."""
        options.setdefault('principal', ADMIN)
        stdout = io.StringIO()
        call_command(name, *args, stdout=stdout, stderr=io.StringIO(), **options)
        return stdout.getvalue()

    def dsr(self, *argv: str, principal: str | None = ADMIN) -> tuple[int, str, str]:
        """Run the ``dsr`` entry point; returns ``(exit code, stdout, stderr)``."""
        stdout, stderr = io.StringIO(), io.StringIO()
        previous = os.environ.pop('DSR_PRINCIPAL', None)
        if principal is not None:
            os.environ['DSR_PRINCIPAL'] = principal
        try:
            with redirect_stdout(stdout), redirect_stderr(stderr):
                code = run(['dsr', *argv])
        finally:
            os.environ.pop('DSR_PRINCIPAL', None)
            if previous is not None:
                os.environ['DSR_PRINCIPAL'] = previous
        return code, stdout.getvalue(), stderr.getvalue()


def copy_inputs(context) -> None:
    """Default step body: outputs are a copy of inputs."""
    write_tree(context.outputs_dir, read_tree(context.inputs_dir))


class InProcessStepRunner:
    """Step runner for tests: calls ``bodies[step_id](context)`` in the worker thread.

    A body that raises fails the step; returning normally succeeds it.
    Every call is recorded as ``(step_id, start, end)``.
    """

    def __init__(self, bodies=None, default=copy_inputs):
        self.bodies = dict(bodies or {})
        self.default = default
        self.calls = []
        self._lock = threading.Lock()

    def __call__(self, context):
        from workflows.executors import ExecutionResult
        from workflows.models import StepState

        body = self.bodies.get(context.step.id, self.default)
        started = time.monotonic()
        try:
            body(context)
        except Exception as exc:
            state, error = StepState.FAILED, str(exc)
        else:
            state, error = StepState.SUCCEEDED, ''
        with self._lock:
            self.calls.append((context.step.id, started, time.monotonic()))
        return ExecutionResult(state=state, exit_code=0 if not error else 1, error=error)

    def step_ids(self) -> list[str]:
        with self._lock:
            return [step_id for step_id, _, _ in self.calls]


class WorkflowTestCase(RepositoryTestCase):
    """Adds an engine driven by an ``InProcessStepRunner``."""

    def make_engine(self, bodies=None, pool_size: int = 2, **runner_kwargs):
        from workflows.services import WorkflowEngine

        runner = InProcessStepRunner(bodies, **runner_kwargs)
        engine = WorkflowEngine(self.repo, pool_size=pool_size, step_runner=runner, datasets=self.datasets)
        self.addCleanup(engine.shutdown)
        return engine, runner

    def approve(self, engine, run_id: str, step_id: str, principal: str = ADMIN, **kwargs):
        """Record a decision, then let one daemon pass drive what it released."""
        from workflows.daemon import Daemon

        result = engine.approve_human_step(principal, run_id, step_id, **kwargs)
        Daemon(self.repo, engine=engine).run_once()
        return result

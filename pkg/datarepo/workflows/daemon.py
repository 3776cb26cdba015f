"""
The long-running ``dsr daemon``: polls for new commit events, ticks the
schedule once per minute, resumes runs left unfinished by a previous process
and drives the steps human approvals release. It holds no global lock outside
trigger bookkeeping.
"""
import logging
import signal
import threading
from datetime import datetime, timezone as dt_timezone

from django.conf import settings

from repository.exceptions import RepositoryError
from repository.layout import Repository
from .models import Run, RunState
from .services import WorkflowEngine
from .triggers import TriggerService

logger = logging.getLogger(__name__)


class Daemon:
    def __init__(self, repo: Repository, pool_size: int | None = None, poll_seconds: float | None = None, engine=None):
        self.repo = repo
        self.engine = engine or WorkflowEngine(repo, pool_size=pool_size)
        self.triggers = TriggerService(self.engine)
        self.poll_seconds = poll_seconds if poll_seconds is not None else getattr(settings, 'DSR_DAEMON_POLL_SECONDS', 1.0)
        self._stop = threading.Event()
        self._last_minute = None
        self._pending = []

    def stop(self, *_args) -> None:
        logger.info("Daemon stopping")
        self._stop.set()

    def resume_unfinished(self) -> list:
        """Continue runs whose executor died; runs waiting on a human are left alone."""
        return [
            self.engine.resume(run.run_id)
            for run in self.engine.runs()
            if run.state in (RunState.PENDING, RunState.RUNNING)
        ]

    def resume_approved(self, exclude: set[str] = frozenset()) -> list:
        """Drive the steps that human approvals released since the last pass."""
        return [
            self.engine.resume(run.run_id)
            for run in self.engine.runs()
            if run.run_id not in exclude and self.engine.released_by_approval(run)
        ]

    def _active_run_ids(self) -> set[str]:
        return {handle.run_id for handle in self._pending}

    def _collect(self, handle) -> Run:
        try:
            return handle.result()
        except Exception as exc:
            logger.exception("Run %s crashed while being driven", handle.run_id)
            return self.engine.fail_run(handle.run_id, f"driver crashed: {exc}")

    def reap(self) -> list[Run]:
        """Collect the runs whose driver finished; a driver that raised fails its run."""
        done, pending = [], []
        for handle in self._pending:
            (done if handle.done() else pending).append(handle)
        self._pending = pending
        return [self._collect(handle) for handle in done]

    def cycle(self, now: datetime | None = None) -> list:
        """One evaluation pass; returns the handles of the runs it started or resumed."""
        now = now or datetime.now(dt_timezone.utc)
        handles = []
        try:
            handles.extend(self.resume_approved(exclude=self._active_run_ids()))
        except RepositoryError as exc:
            logger.warning("Resuming approved runs failed: %s", exc)
        try:
            handles.extend(self.triggers.evaluate_event_triggers())
        except RepositoryError as exc:
            logger.warning("Event trigger evaluation failed: %s", exc)
        minute = now.replace(second=0, microsecond=0)
        if minute != self._last_minute:
            self._last_minute = minute
            try:
                handles.extend(self.triggers.schedule_tick(now))
            except RepositoryError as exc:
                logger.warning("Schedule evaluation failed: %s", exc)
        return handles

    def run_once(self) -> list:
        """Resume, evaluate once and wait for every run started."""
        self._pending = self.resume_unfinished()
        self._pending.extend(self.cycle())
        handles, self._pending = self._pending, []
        return [self._collect(handle) for handle in handles]

    def run_forever(self) -> None:
        signal.signal(signal.SIGTERM, self.stop)
        signal.signal(signal.SIGINT, self.stop)
        logger.info("Daemon started on %s with %d worker slots", self.repo.root, self.engine.pool.capacity)
        self._pending.extend(self.resume_unfinished())
        try:
            while not self._stop.is_set():
                try:
                    self._pending.extend(self.cycle())
                except Exception:
                    logger.error("Daemon cycle crashed", exc_info=True)
                self.reap()
                self._stop.wait(self.poll_seconds)
        finally:
            self.engine.shutdown(wait=True)

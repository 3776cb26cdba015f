"""
workflows/triggers.py

Event and schedule triggers.

Event triggers consume ``events.jsonl``. Each workflow has a durable cursor
(``triggers/events/<workflow>.json``) holding the offset of the next event
to evaluate. A run records its cause before the cursor moves, so after a
crash between the two the restarted daemon finds the run and does not fire
again: every (workflow, commit) pair starts at most one run.

Schedule triggers fire when a cron expression matches the current UTC
minute and that minute is later than the durable last-fired minute
(``triggers/schedule/<workflow>.json``). Missed minutes are not replayed.
"""
import logging
from datetime import datetime, timezone as dt_timezone

from croniter import croniter
from django.conf import settings

from repository.exceptions import RepositoryError
from repository.fileio import atomic_write_json, read_json
from repository.ids import short_id
from repository.layout import Repository
from .journal import list_run_ids, read_cause
from .models import RunCause, TriggerKind

logger = logging.getLogger(__name__)


def _events_cursor_path(repo: Repository, workflow: str):
    return repo.triggers_dir / 'events' / f'{workflow}.json'


def _schedule_path(repo: Repository, workflow: str):
    return repo.triggers_dir / 'schedule' / f'{workflow}.json'


def read_event_cursor(repo: Repository, workflow: str) -> int | None:
    try:
        return int(read_json(_events_cursor_path(repo, workflow))['offset'])
    except FileNotFoundError:
        return None


def write_event_cursor(repo: Repository, workflow: str, offset: int) -> None:
    atomic_write_json(_events_cursor_path(repo, workflow), {'workflow': workflow, 'offset': offset})


def initialize_event_cursor(repo: Repository, workflow: str, offset: int) -> None:
    """A new workflow only sees versions created after its registration."""
    with repo.named_lock('triggers', 'bookkeeping'):
        if read_event_cursor(repo, workflow) is None:
            write_event_cursor(repo, workflow, offset)


def read_last_fired(repo: Repository, workflow: str) -> int | None:
    try:
        return int(read_json(_schedule_path(repo, workflow))['last_fired'])
    except FileNotFoundError:
        return None


def floor_minute(moment: datetime) -> datetime:
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=dt_timezone.utc)
    return moment.astimezone(dt_timezone.utc).replace(second=0, microsecond=0)


def delivered_causes(repo: Repository) -> set[tuple[str, str, str | int]]:
    """``(workflow, kind, commit id or fire time)`` of every run ever created."""
    causes = set()
    for run_id in list_run_ids(repo):
        found = read_cause(repo, run_id)
        if found is None:
            continue
        workflow, cause = found
        if cause['kind'] == TriggerKind.EVENT:
            causes.add((workflow, TriggerKind.EVENT.value, cause['commit_id']))
        elif cause['kind'] == TriggerKind.SCHEDULE:
            causes.add((workflow, TriggerKind.SCHEDULE.value, cause['fire_time']))
    return causes


class TriggerService:
    """Evaluates triggers and starts runs through a ``WorkflowEngine``."""

    def __init__(self, engine, chain_limit: int | None = None):
        self.engine = engine
        self.repo = engine.repo
        self.chain_limit = chain_limit if chain_limit is not None else getattr(settings, 'DSR_TRIGGER_CHAIN_LIMIT', 10)

    def _start(self, definition, cause: RunCause):
        try:
            return self.engine.start_run(definition.owner, definition, cause)
        except RepositoryError as exc:
            logger.warning("Could not start %s for %s: %s", definition.name, cause.describe(), exc)
        except Exception:
            logger.error("Trigger of %s for %s crashed", definition.name, cause.describe(), exc_info=True)
        return None

    # -- events ----------------------------------------------------------

    def evaluate_event_triggers(self) -> list:
        """Start one run per (workflow, new matching commit); returns the run handles."""
        handles = []
        with self.repo.named_lock('triggers', 'bookkeeping'):
            events = self.engine.datasets.events()
            delivered = delivered_causes(self.repo)
            for definition in self.engine.registry.all_latest():
                triggers = definition.triggers_of(TriggerKind.EVENT)
                if not triggers:
                    continue
                offset = read_event_cursor(self.repo, definition.name)
                if offset is None:
                    offset = 0
                for index in range(offset, len(events)):
                    handle = self._deliver(definition, triggers, events[index], delivered)
                    if handle is not None:
                        handles.append(handle)
                    write_event_cursor(self.repo, definition.name, index + 1)
        return handles

    def _deliver(self, definition, triggers, event, delivered):
        key = (definition.name, TriggerKind.EVENT.value, event.commit_id)
        if key in delivered:
            return None
        try:
            commit = self.engine.datasets.load_commit(event.commit_id)
            tags = self.engine.datasets.tags_by_commit().get(commit.commit_id, set())
            matched = any(trigger.query.matches(commit, tags, is_head=True) for trigger in triggers)
        except RepositoryError as exc:
            logger.warning("Skipping event %s for %s: %s", short_id(event.commit_id), definition.name, exc)
            return None
        if not matched:
            return None
        if not self.engine.access.authorize(definition.owner, 'read', commit.dataset):
            logger.warning(
                "Workflow %s ignores %s: its owner %s cannot read %s",
                definition.name, short_id(commit.commit_id), definition.owner, commit.dataset,
            )
            return None
        if event.depth >= self.chain_limit:
            logger.warning(
                "Not triggering %s on %s: trigger chain from %s reached depth %d",
                definition.name, short_id(commit.commit_id), short_id(event.root or commit.commit_id), event.depth,
            )
            return None
        handle = self._start(definition, RunCause.event(commit.commit_id, depth=event.depth, root=event.root))
        if handle is not None:
            delivered.add(key)
        return handle

    # -- schedules -------------------------------------------------------

    def schedule_tick(self, now: datetime | None = None) -> list:
        minute = floor_minute(now or datetime.now(dt_timezone.utc))
        fire_time = int(minute.timestamp())
        handles = []
        with self.repo.named_lock('triggers', 'bookkeeping'):
            delivered = delivered_causes(self.repo)
            for definition in self.engine.registry.all_latest():
                schedules = definition.triggers_of(TriggerKind.SCHEDULE)
                if not schedules:
                    continue
                last_fired = read_last_fired(self.repo, definition.name)
                if last_fired is not None and last_fired >= fire_time:
                    continue
                try:
                    due = any(croniter.match(trigger.cron, minute) for trigger in schedules)
                except (ValueError, KeyError) as exc:
                    logger.warning("Skipping schedule of %s: %s", definition.name, exc)
                    continue
                if not due:
                    continue
                if (definition.name, TriggerKind.SCHEDULE.value, fire_time) not in delivered:
                    handle = self._start(definition, RunCause.schedule(fire_time))
                    if handle is None:
                        continue
                    handles.append(handle)
                atomic_write_json(_schedule_path(self.repo, definition.name), {
                    'workflow': definition.name,
                    'last_fired': fire_time,
                })
                logger.info("Schedule fired %s for %s", definition.name, minute.isoformat())
        return handles

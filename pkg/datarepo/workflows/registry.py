"""
workflows/registry.py

Registered workflow definitions.

    .dsr/workflows/defs/<def_id>.json     immutable canonical definitions
    .dsr/workflows/refs/<name>            one-line def_id of the latest version
    .dsr/workflows/history/<name>.jsonl   every version ever registered

Old runs reference their def_id, so re-registering a name never changes
what an existing run executes.
"""
import json
import logging
from pathlib import Path

import networkx as nx
from croniter import CroniterBadCronError, CroniterBadDateError, croniter
from django.utils import timezone

from access.services import AccessControl
from datasets.serializers import flatten_errors
from repository.canonical import content_id
from repository.exceptions import NotFound, ValidationError, WorkflowError
from repository.fileio import append_jsonl, atomic_write_json, atomic_write_text, iter_jsonl, read_json, read_text_line
from repository.layout import Repository
from repository.validators import validate_name
from .models import StepKind, TriggerKind, WorkflowDef, WorkflowVersion
from .serializers import WorkflowDefSerializer

logger = logging.getLogger(__name__)

CRON_FIELDS = 5


def parse_definition(payload: dict, owner: str | None = None) -> WorkflowDef:
    serializer = WorkflowDefSerializer(data=payload)
    if not serializer.is_valid():
        raise WorkflowError(f"invalid workflow definition: {flatten_errors(serializer.errors)}")
    definition = serializer.save()
    if owner is not None:
        definition = WorkflowDef(
            name=definition.name,
            owner=owner,
            steps=definition.steps,
            triggers=definition.triggers,
            output=definition.output,
        )
    validate_definition(definition)
    return definition


def validate_cron(expression: str) -> str:
    """Five fields, parseable and satisfiable."""
    if len(expression.split()) != CRON_FIELDS:
        raise WorkflowError(f"cron expression {expression!r} must have {CRON_FIELDS} fields")
    if not croniter.is_valid(expression):
        raise WorkflowError(f"invalid cron expression {expression!r}")
    try:
        croniter(expression, timezone.now()).get_next(float)
    except (CroniterBadCronError, CroniterBadDateError, ValueError, KeyError) as exc:
        raise WorkflowError(f"cron expression {expression!r} never fires") from exc
    return expression


def step_graph(definition: WorkflowDef) -> nx.DiGraph:
    graph = nx.DiGraph()
    for step in definition.steps:
        graph.add_node(step.id)
    for step in definition.steps:
        for need in step.needs:
            graph.add_edge(need, step.id)
    return graph


def topological_order(definition: WorkflowDef) -> list[str]:
    """Dependency order; ties broken by registration order."""
    position = {step.id: index for index, step in enumerate(definition.steps)}
    return list(nx.lexicographical_topological_sort(step_graph(definition), key=position.__getitem__))


def validate_definition(definition: WorkflowDef) -> None:
    ids = [step.id for step in definition.steps]
    duplicates = sorted({step_id for step_id in ids if ids.count(step_id) > 1})
    if duplicates:
        raise WorkflowError(f"duplicate step ids: {', '.join(duplicates)}")

    known = set(ids)
    for step in definition.steps:
        dangling = [need for need in step.needs if need not in known]
        if dangling:
            raise WorkflowError(f"step {step.id} needs unknown step(s) {', '.join(dangling)}")
        if step.id in step.needs:
            raise WorkflowError(f"step {step.id} needs itself")

    try:
        cycle = nx.find_cycle(step_graph(definition))
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        members = sorted({edge[0] for edge in cycle} | {edge[1] for edge in cycle})
        raise WorkflowError(f"needs form a cycle through {', '.join(members)}", cycle=members)

    terminal = [step.id for step in definition.steps if step.terminal]
    if len(terminal) > 1:
        raise WorkflowError(f"more than one terminal step: {', '.join(terminal)}")
    if definition.output is not None and not terminal:
        raise WorkflowError("an output clause needs exactly one step marked terminal")

    for step in definition.steps:
        if step.kind == StepKind.HUMAN and step.input is not None and step.input.multi:
            raise WorkflowError(f"human step {step.id} cannot take a multi-commit input")

    for trigger in definition.triggers_of(TriggerKind.SCHEDULE):
        validate_cron(trigger.cron)


def definition_record(definition: WorkflowDef) -> dict:
    return WorkflowDefSerializer(definition).data


def definition_id(definition: WorkflowDef) -> str:
    return content_id(definition_record(definition))


class WorkflowRegistry:
    def __init__(self, repo: Repository):
        self.repo = repo
        self.access = AccessControl(repo)

    @property
    def defs_dir(self) -> Path:
        return self.repo.workflows_dir / 'defs'

    @property
    def refs_dir(self) -> Path:
        return self.repo.workflows_dir / 'refs'

    @property
    def history_dir(self) -> Path:
        return self.repo.workflows_dir / 'history'

    def load_file(self, path: Path) -> dict:
        try:
            return read_json(path)
        except FileNotFoundError as exc:
            raise NotFound(f"workflow file {path} does not exist") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"workflow file {path} is not valid JSON: {exc}") from exc

    def register(self, principal: str, payload: dict) -> WorkflowDef:
        definition = parse_definition(payload, owner=validate_name(principal, 'principal'))
        if definition.output is not None:
            self.access.require_operation(principal, 'register_workflow', definition.output.dataset)
        record = definition_record(definition)
        def_id = content_id(record)
        path = self.defs_dir / f'{def_id}.json'
        if not path.exists():
            atomic_write_json(path, record)

        with self.repo.named_lock('workflows', definition.name):
            history = self.history(definition.name)
            if history and history[-1].def_id == def_id:
                logger.info("Workflow %s is unchanged (version %d)", definition.name, history[-1].version)
            else:
                version = len(history) + 1
                append_jsonl(self.history_dir / f'{definition.name}.jsonl', {
                    'name': definition.name,
                    'version': version,
                    'def_id': def_id,
                    'registered_by': principal,
                    'registered_at': int(timezone.now().timestamp()),
                })
                atomic_write_text(self.refs_dir / definition.name, def_id + '\n')
                logger.info("%s registered workflow %s version %d (%s)", principal, definition.name, version, def_id[:12])
        return self.get(def_id)

    def get(self, def_id: str) -> WorkflowDef:
        try:
            payload = read_json(self.defs_dir / f'{def_id}.json')
        except FileNotFoundError as exc:
            raise NotFound(f"unknown workflow definition {def_id}") from exc
        serializer = WorkflowDefSerializer(data=payload)
        if not serializer.is_valid():
            raise WorkflowError(f"stored definition {def_id} is malformed: {flatten_errors(serializer.errors)}")
        definition = serializer.save()
        return WorkflowDef(
            name=definition.name,
            owner=definition.owner,
            steps=definition.steps,
            triggers=definition.triggers,
            output=definition.output,
            def_id=def_id,
        )

    def latest(self, name: str) -> WorkflowDef:
        def_id = read_text_line(self.refs_dir / validate_name(name, 'workflow name'))
        if def_id is None:
            raise NotFound(f"unknown workflow {name}")
        return self.get(def_id)

    def names(self) -> list[str]:
        if not self.refs_dir.is_dir():
            return []
        return sorted(path.name for path in self.refs_dir.iterdir() if not path.name.startswith('.'))

    def all_latest(self) -> list[WorkflowDef]:
        return [self.latest(name) for name in self.names()]

    def history(self, name: str) -> list[WorkflowVersion]:
        return [
            WorkflowVersion(
                name=record['name'],
                version=record['version'],
                def_id=record['def_id'],
                registered_by=record['registered_by'],
                registered_at=record['registered_at'],
            )
            for record in iter_jsonl(self.history_dir / f'{name}.jsonl')
        ]

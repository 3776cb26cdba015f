"""Run reports as printed by ``dsr workflow``."""
from datasets.formatting import format_time
from repository.ids import short_id
from .models import Run, StepResult, WorkflowDef, WorkflowVersion
from .serializers import RunSerializer, WorkflowDefSerializer

STDERR_LINES_SHOWN = 10


def run_document(run: Run) -> dict:
    return RunSerializer(run).data


def run_summary(run: Run) -> str:
    return f"{run.run_id} {run.workflow} {run.state.value} {run.cause.describe()} {format_time(run.created_at)}"


def _step_lines(result: StepResult) -> list[str]:
    line = f"  {result.step_id}: {result.state.value}"
    if result.exit_code is not None:
        line += f" (exit {result.exit_code})"
    if result.started_at is not None:
        line += f" {format_time(result.started_at)} -> {format_time(result.finished_at)}"
    if result.approved_by:
        line += f" by {result.approved_by}"
    lines = [line]
    if result.error:
        lines.append(f"    error: {result.error}")
    tail = result.stderr_tail.rstrip('\n').splitlines()[-STDERR_LINES_SHOWN:]
    lines.extend(f"    | {text}" for text in tail)
    return lines


def run_report_lines(run: Run) -> list[str]:
    lines = [
        f"run {run.run_id}: {run.state.value}",
        f"workflow: {run.workflow} ({short_id(run.def_id)})",
        f"cause: {run.cause.describe()}",
        f"principal: {run.principal}",
        f"created: {format_time(run.created_at)}",
    ]
    if run.finished:
        lines.append(f"finished: {format_time(run.finished_at)}")
    for step_id, commits in sorted(run.pins.items()):
        lines.append(f"input {step_id}: {', '.join(short_id(commit_id) for commit_id in commits)}")
    if run.output_manifest:
        output = short_id(run.output_commit) if run.output_commit else 'unchanged'
        lines.append(f"output: {output} (manifest {short_id(run.output_manifest)})")
    if run.error:
        lines.append(f"error: {run.error}")
    lines.append('steps:')
    for result in run.steps.values():
        lines.extend(_step_lines(result))
    return lines


def definition_document(definition: WorkflowDef, history: list[WorkflowVersion]) -> dict:
    return {
        'def_id': definition.def_id,
        'definition': WorkflowDefSerializer(definition).data,
        'versions': [
            {
                'version': version.version,
                'def_id': version.def_id,
                'registered_by': version.registered_by,
                'registered_at': version.registered_at,
            }
            for version in history
        ],
    }

import argparse
import json
import time
from pathlib import Path

from django.conf import settings

from datasets.formatting import format_time
from repository.cli import DsrCommand, existing_dir
from repository.ids import short_id
from workflows.formatting import definition_document, run_document, run_report_lines, run_summary
from workflows.models import RunState
from workflows.serializers import StepResultSerializer, WorkflowDefSerializer
from workflows.services import WorkflowEngine

UNSETTLED = (RunState.PENDING, RunState.RUNNING)


class Command(DsrCommand):
    help = 'Register, run, inspect and approve workflows.'

    def add_arguments(self, parser):
        actions = parser.add_subparsers(dest='action', required=True, metavar='ACTION')

        register = actions.add_parser('register', help='Register a definition file; the caller becomes its owner.')
        register.add_argument('file')

        run = actions.add_parser('run', help='Start a run and wait until it finishes or waits on a human.')
        run.add_argument('name')
        run.add_argument('--pool', type=int, default=None, help='Worker slots for this run.')

        report = actions.add_parser('report', help='Per-step report of a run.')
        report.add_argument('run_id')

        runs = actions.add_parser('runs', help='List runs.')
        runs.add_argument('--state', choices=RunState.values)
        runs.add_argument('--workflow')

        approve = actions.add_parser('approve', help='Complete a human step.')
        approve.add_argument('run_id')
        approve.add_argument('step_id')
        approve.add_argument('--reject', action='store_true', help='Fail the step instead.')
        approve.add_argument('--attach', help="Directory to use as the step's output (default: its inputs).")

        show = actions.add_parser('show', help='Latest definition and version history.')
        show.add_argument('name')

        for subparser in actions.choices.values():
            self.add_context_arguments(subparser, default=argparse.SUPPRESS)

    def handle(self, *args, **options):
        action = options['action']
        with WorkflowEngine(self.repository(), pool_size=options.get('pool')) as engine:
            getattr(self, f'handle_{action}')(engine, options)

    # -- actions ---------------------------------------------------------

    def handle_register(self, engine, options):
        principal = self.principal(options)
        definition = engine.register_workflow(principal, Path(options['file']))
        version = engine.registry.history(definition.name)[-1].version
        self.emit(
            {'name': definition.name, 'version': version, 'def_id': definition.def_id, 'owner': definition.owner},
            f"Registered {definition.name} version {version} ({short_id(definition.def_id)}), owner {definition.owner}",
        )

    def handle_run(self, engine, options):
        principal = self.principal(options)
        run = engine.run_workflow(principal, options['name'])
        poll = getattr(settings, 'DSR_DAEMON_POLL_SECONDS', 1.0)
        # Another process may have picked the run up first.
        while run.state in UNSETTLED:
            time.sleep(poll)
            run = engine.report(run.run_id)
        self.print_report(run)

    def handle_report(self, engine, options):
        self.print_report(engine.report(options['run_id']))

    def handle_runs(self, engine, options):
        for run in engine.runs(state=options['state'], workflow=options['workflow']):
            self.emit(run_document(run), run_summary(run))

    def handle_approve(self, engine, options):
        principal = self.principal(options)
        attached = existing_dir(options['attach']) if options['attach'] else None
        result = engine.approve_human_step(
            principal, options['run_id'], options['step_id'], approve=not options['reject'], attached_dir=attached
        )
        verb = 'Rejected' if options['reject'] else 'Approved'
        self.emit(StepResultSerializer(result).data, f"{verb} step {result.step_id} ({format_time(result.finished_at)})")
        if not self.json_output:
            run = engine.report(options['run_id'])
            if engine.released_by_approval(run):
                self.say(f"run {run.run_id}: {run.state.value}; dsr daemon continues it")
            else:
                self.say(f"run {run.run_id}: {run.state.value}")

    def handle_show(self, engine, options):
        definition = engine.registry.latest(options['name'])
        history = engine.registry.history(definition.name)
        if self.json_output:
            self.emit(definition_document(definition, history))
            return
        self.say(json.dumps(WorkflowDefSerializer(definition).data, indent=2, ensure_ascii=False))
        for version in history:
            self.say(
                f"version {version.version} {short_id(version.def_id)} "
                f"{version.registered_by} {format_time(version.registered_at)}"
            )

    def print_report(self, run):
        if self.json_output:
            self.emit(run_document(run))
            return
        for line in run_report_lines(run):
            self.say(line)

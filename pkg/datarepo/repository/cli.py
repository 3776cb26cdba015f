"""
The ``dsr`` command line.

Every subcommand is a Django management command built on ``DsrCommand``.
Domain errors become one stderr line, ``error: <CODE>: <message>``, and the
error's exit code (1, or 2 for usage errors); ``--json`` switches stdout to
one canonical JSON document per line.
"""
import argparse
import os
import sys
from pathlib import Path

import django
from django.core.management import get_commands, load_command_class
from django.core.management.base import BaseCommand, CommandParser, DjangoHelpFormatter

from .canonical import canonical_dumps
from .exceptions import RepositoryError, UsageError
from .ids import short_id
from .layout import Repository

# Public name -> management command name.
COMMANDS = {
    'init': 'init',
    'checkin': 'checkin',
    'checkout': 'checkout',
    'log': 'log',
    'diff': 'diff',
    'tag': 'tag',
    'query': 'query',
    'delete-dataset': 'delete_dataset',
    'grant': 'grant',
    'revoke-grant': 'revoke_grant',
    'workflow': 'workflow',
    'daemon': 'daemon',
    'lineage': 'lineage',
    'revoke': 'revoke',
    'gc': 'gc',
}

USAGE = "usage: dsr <command> [options]\n\ncommands:\n" + ''.join(f"  {name}\n" for name in COMMANDS)


class DsrCommandParser(CommandParser):
    """Usage errors print ``error: USAGE: ...`` and exit 2."""

    def error(self, message):
        if self.called_from_command_line:
            self.exit(UsageError.exit_code, f"error: {UsageError.code}: {message}\n")
        raise UsageError(message)


def _plain(text):
    return text


class DsrCommand(BaseCommand):
    requires_system_checks = []

    def create_parser(self, prog_name, subcommand, **kwargs):
        public_name = subcommand.replace('_', '-')
        parser = DsrCommandParser(
            prog=f"dsr {public_name}",
            description=self.help or None,
            formatter_class=DjangoHelpFormatter,
            missing_args_message=getattr(self, 'missing_args_message', None),
            called_from_command_line=getattr(self, '_called_from_command_line', None),
            **kwargs,
        )
        self.add_context_arguments(parser)
        # Consumed by BaseCommand.run_from_argv and BaseCommand.execute.
        for flag, options in (
            ('--verbosity', {'type': int, 'default': 1, 'choices': [0, 1, 2, 3]}),
            ('--settings', {}),
            ('--pythonpath', {}),
            ('--traceback', {'action': 'store_true'}),
            ('--no-color', {'action': 'store_true'}),
            ('--force-color', {'action': 'store_true'}),
            ('--skip-checks', {'action': 'store_true'}),
        ):
            parser.add_argument(flag, help=argparse.SUPPRESS, **options)
        self.add_arguments(parser)
        return parser

    @staticmethod
    def add_context_arguments(parser, default=None):
        """Subcommand parsers pass ``argparse.SUPPRESS`` so they do not reset the parent's values."""
        parser.add_argument('--principal', default=default, help="Acting principal (default: $DSR_PRINCIPAL).")
        parser.add_argument(
            '--json', action='store_true', dest='json_output',
            default=False if default is None else default, help="Line-delimited JSON output.",
        )

    def execute(self, *args, **options):
        self.json_output = options.get('json_output', False)
        try:
            return super().execute(*args, **options)
        except RepositoryError as exc:
            if not getattr(self, '_called_from_command_line', False):
                raise
            self.stderr.write(f"error: {exc.code}: {exc}", style_func=_plain)
            sys.exit(exc.exit_code)

    # -- context ---------------------------------------------------------

    def repository(self) -> Repository:
        return Repository.discover()

    def principal(self, options) -> str:
        principal = options.get('principal') or os.environ.get('DSR_PRINCIPAL')
        if not principal:
            raise UsageError("principal required")
        return principal

    # -- output ----------------------------------------------------------

    def emit(self, record, text: str | None = None) -> None:
        """``record`` in JSON mode, ``text`` (if any) otherwise."""
        if self.json_output:
            self.stdout.write(canonical_dumps(record), style_func=_plain)
        elif text is not None:
            self.stdout.write(text, style_func=_plain)

    def say(self, text: str) -> None:
        if not self.json_output:
            self.stdout.write(text, style_func=_plain)


def short(commit_id: str | None) -> str:
    return short_id(commit_id) if commit_id else '-'


def existing_dir(value: str) -> Path:
    path = Path(value)
    if not path.is_dir():
        raise UsageError(f"{value} is not a directory")
    return path


def run(argv=None) -> int:
    """Entry point of the ``dsr`` script; returns the process exit code."""
    argv = list(sys.argv if argv is None else argv)
    django.setup()
    if len(argv) < 2 or argv[1] in ('-h', '--help', 'help'):
        sys.stdout.write(USAGE)
        return 0 if len(argv) >= 2 else UsageError.exit_code
    name = COMMANDS.get(argv[1])
    if name is None:
        sys.stderr.write(f"error: {UsageError.code}: unknown command {argv[1]!r}\n")
        return UsageError.exit_code
    command = load_command_class(get_commands()[name], name)
    try:
        command.run_from_argv([argv[0], name, *argv[2:]])
    except SystemExit as exc:
        if exc.code is None:
            return 0
        return exc.code if isinstance(exc.code, int) else 1
    return 0

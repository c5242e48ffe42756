"""``sketchalign`` command line entry point

``sketchalign <subcommand> [flags]`` runs the DataLad command
``sketchalign-<subcommand>`` and maps its outcome to an exit code.
"""

import logging
import sys
from typing import (
    List,
    Optional,
)

from datalad.cli.main import main as datalad_main

from . import command_suite

lgr = logging.getLogger('datalad.ext.sketchalign.app')

PREFIX = 'sketchalign-'
SUBCOMMANDS = tuple(
    spec[2][len(PREFIX):] for spec in command_suite[1])

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

_USAGE = (
    'usage: sketchalign {{{}}} [flags]\n'
    '       sketchalign <subcommand> --help\n'
).format(','.join(SUBCOMMANDS))


def main(argv: Optional[List[str]] = None) -> int:
    """Run a subcommand; 0 on success, 2 on usage errors, 1 otherwise"""
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] in ('-h', '--help'):
        sys.stderr.write(_USAGE)
        return EXIT_OK if argv else EXIT_USAGE
    sub, *flags = argv
    if sub not in SUBCOMMANDS:
        sys.stderr.write(f'sketchalign: unknown subcommand {sub!r}\n')
        sys.stderr.write(_USAGE)
        return EXIT_USAGE
    try:
        datalad_main(['datalad', PREFIX + sub] + flags)
    except SystemExit as e:
        return _exit_code(e.code)
    except KeyboardInterrupt:
        lgr.info('interrupted')
        return EXIT_RUNTIME
    return EXIT_OK


def _exit_code(code) -> int:
    if code is None:
        return EXIT_OK
    if isinstance(code, int):
        # the DataLad CLI exits with 2 on argument errors, with 1 when a
        # command yields error results
        return code if code in (EXIT_OK, EXIT_USAGE) else EXIT_RUNTIME
    # a message passed to sys.exit
    sys.stderr.write(f'{code}\n')
    return EXIT_RUNTIME

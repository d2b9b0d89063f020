from __future__ import annotations

import functools
import logging
import sys
from typing import TYPE_CHECKING

import anyio
import asyncclick as click

from learnreach.commands import analysis, scenario
from learnreach.commands.common import cli
from learnreach.exceptions import ConfigError, LearnReachError

if TYPE_CHECKING:
    from collections.abc import Sequence

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _fail(message: str, code: int) -> int:
    logger.error("%s", message)
    click.echo(f"Error: {message}", err=True)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    """
    Runs the CLI and maps failures onto exit codes: 2 for config and usage errors, 1 for any
    other learnreach error.
    """
    args = list(sys.argv[1:] if argv is None else argv)
    try:
        anyio.run(functools.partial(cli.main, args=args, prog_name="learnreach", standalone_mode=False))
    except ConfigError as e:
        return _fail(str(e), EXIT_USAGE)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        return _fail("Aborted!", EXIT_FAILURE)
    except LearnReachError as e:
        return _fail(f"{type(e).__name__}: {e}", EXIT_FAILURE)
    return EXIT_OK


__all__ = ["cli", "main"]

del analysis, scenario

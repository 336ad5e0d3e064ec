import logging
from contextlib import contextmanager
from typing import Iterator

import typer

from ..common import ConfigError, FormatError, MC3Error, NumericError, ValidationError

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_VALIDATION = 5


def exit_code(error: BaseException) -> int:
    match error:
        case ConfigError():
            return EXIT_CONFIG
        case FormatError() | OSError():
            return EXIT_IO
        case NumericError():
            return EXIT_NUMERIC
        case ValidationError() | ValueError():
            return EXIT_VALIDATION
        case _:
            return 1


@contextmanager
def exit_on_error() -> Iterator[None]:
    """Logs package and IO errors and exits with the code of their family."""
    try:
        yield
    except (MC3Error, OSError, ValueError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        raise typer.Exit(exit_code(e))

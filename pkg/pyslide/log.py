"""Package-wide verbose switch for progress messages of long loops."""

import logging

logger = logging.getLogger("pyslide")
_VERBOSE = False


def set_verbose(enabled: bool) -> None:
    """Globally enable/disable progress output (INFO instead of DEBUG)."""

    global _VERBOSE
    _VERBOSE = bool(enabled)


def is_verbose() -> bool:
    return _VERBOSE


def verbose_log(message: str, *args) -> None:
    logger.log(logging.INFO if _VERBOSE else logging.DEBUG, message, *args)

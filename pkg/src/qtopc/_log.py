from __future__ import annotations

import io
import logging

from ._base import _lock

__all__ = [
    "CRITICAL",
    "DEBUG",
    "ERROR",
    "INFO",
    "NOTICE",
    "NOTSET",
    "STEP",
    "WARNING",
    "configure_logging",
    "normalize_level",
]

CRITICAL = 50
ERROR = 40
WARNING = 30
NOTICE = 25
INFO = 20
STEP = 15
DEBUG = 10
NOTSET = 0

_levelToName = {
    CRITICAL: 'CRITICAL',
    ERROR: 'ERROR',
    WARNING: 'WARNING',
    NOTICE: 'NOTICE',
    INFO: 'INFO',
    STEP: 'STEP',
    DEBUG: 'DEBUG',
    NOTSET: 'NOTSET',
}
_nameToLevel = {name: level for level, name in _levelToName.items()}

DEFAULT_FORMAT = "%(levelname)s:%(name)s:%(message)s"


def normalize_level(level_or_name: int | str) -> int:
    if isinstance(level_or_name, bool):
        raise TypeError(f"Level not an integer or a registered level name: {level_or_name!r}")
    if isinstance(level_or_name, int):
        return level_or_name
    if isinstance(level_or_name, str):
        name = level_or_name.upper()
        if name not in _nameToLevel:
            raise ValueError(f"Unknown level: {level_or_name!r}")
        return _nameToLevel[name]
    raise TypeError(f"Level not an integer or a registered level name: {level_or_name!r}")


for _level, _name in _levelToName.items():
    logging.addLevelName(_level, _name)

logging.getLogger("qtopc").addHandler(logging.NullHandler())


def configure_logging(**kwargs) -> logging.Logger:
    """
    Do basic configuration of the ``qtopc`` logger.

    Only the level is applied if the logger already has a stream or file
    handler, unless *force* is true. Accepted keywords:

    filename  Create a FileHandler writing to this path.
    filemode  Mode used to open *filename* (default 'a').
    stream    Stream for a StreamHandler (default sys.stderr). Incompatible
              with *filename*.
    handlers  Already created handlers to attach instead.
    format    Format string, ``DEFAULT_FORMAT`` if omitted.
    level     Level of the ``qtopc`` logger, a number or a registered name.
    force     Remove and close existing handlers first.
    encoding  Encoding for *filename*.
    """
    logger = logging.getLogger("qtopc")
    with _lock:
        force = kwargs.pop('force', False)
        encoding = kwargs.pop('encoding', None)
        if force:
            for h in logger.handlers[:]:
                logger.removeHandler(h)
                h.close()
        configured = [h for h in logger.handlers if not isinstance(h, logging.NullHandler)]
        if not configured:
            handlers = kwargs.pop("handlers", None)
            if handlers is None:
                if "stream" in kwargs and "filename" in kwargs:
                    raise ValueError("'stream' and 'filename' should not be specified together")
                filename = kwargs.pop("filename", None)
                mode = kwargs.pop("filemode", 'a')
                if filename:
                    h = logging.FileHandler(filename, mode, encoding=io.text_encoding(encoding))
                else:
                    h = logging.StreamHandler(kwargs.pop("stream", None))
                handlers = [h]
            elif "stream" in kwargs or "filename" in kwargs:
                raise ValueError("'stream' or 'filename' should not be specified together with 'handlers'")
            fmt = logging.Formatter(kwargs.pop("format", DEFAULT_FORMAT))
            for h in handlers:
                if h.formatter is None:
                    h.setFormatter(fmt)
                logger.addHandler(h)
        level = kwargs.pop("level", None)
        if level is not None:
            logger.setLevel(normalize_level(level))
        if kwargs:
            keys = ', '.join(kwargs.keys())
            raise ValueError(f'Unrecognized argument(s): {keys}')
    return logger

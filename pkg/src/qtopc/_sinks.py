"""
Row sinks for the files a campaign emits.

A sink receives one mapping per row, turns it into a line with its
`RowFormatter` and writes the line out. File sinks write the header derived
from the row template before the first row.
"""
from __future__ import annotations

import atexit
import contextlib
import io
import json
import logging
import os
import re
import sys
import threading
import weakref
from string import Formatter as StrFormatter
from typing import TYPE_CHECKING, Any

import numpy as np

from ._base import _lock, raise_exceptions

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping

__all__ = [
    "FileSink",
    "RowFormatter",
    "Sink",
    "StreamSink",
    "shutdown",
    "write_json",
]

logger = logging.getLogger(__name__)

_sinkList: list[weakref.ref[Sink]] = []  # live sinks, closed in reverse order at exit


def _remove_sink_ref(wr: weakref.ref[Sink]) -> None:
    # Can run during interpreter teardown, when globals may already be None.
    sinks, lock = _sinkList, _lock
    if lock and sinks:
        with lock, contextlib.suppress(ValueError):
            sinks.remove(wr)


def _add_sink_ref(sink: Sink) -> None:
    with _lock:
        _sinkList.append(weakref.ref(sink, _remove_sink_ref))


def _plain(value: Any) -> Any:
    # numpy scalars become builtins, so floats print as their shortest round-tripping text
    return value.item() if isinstance(value, np.generic) else value


class RowFormatter:
    """
    Formats a mapping as one line with a `str.format` template.

    The header is the template with every field replaced by its name, so
    ``"{step},{time},{cost}"`` has the header ``"step,time,cost"``.
    """

    _formatter = StrFormatter()

    fmt_spec = re.compile(r'^(.?[<>=^])?[+ -]?#?0?(\d+|{\w+})?[,_]?(\.(\d+|{\w+}))?[bcdefgnosx%]?$', re.I)  # cspell: ignore bcdefgnosx
    field_spec = re.compile(r'^(\d+|\w+)(\.\w+|\[[^]]+\])*$')

    def __init__(self, fmt: str) -> None:
        self._fmt = fmt
        self.fields = self.validate()

    @classmethod
    def for_columns(cls, columns: Iterable[str], separator: str = ",") -> RowFormatter:
        return cls(separator.join(f"{{{column}}}" for column in columns))

    def validate(self) -> tuple[str, ...]:
        """Validate the template and return its field names in order."""
        fields: list[str] = []
        try:
            for _, fieldname, spec, conversion in self._formatter.parse(self._fmt):
                if fieldname:
                    if not self.field_spec.match(fieldname):
                        raise ValueError(f'invalid field name/expression: {fieldname!r}')
                    fields.append(fieldname)
                if conversion and conversion not in 'rsa':
                    raise ValueError(f'invalid conversion: {conversion!r}')
                if spec and not self.fmt_spec.match(spec):
                    raise ValueError(f'bad specifier: {spec!r}')
        except ValueError as e:
            raise ValueError(f'invalid format: {e}')
        if not fields:
            raise ValueError('invalid format: no fields')
        return tuple(fields)

    @property
    def header(self) -> str:
        return "".join(
            literal + (fieldname or "") for literal, fieldname, _, _ in self._formatter.parse(self._fmt)
        )

    def format(self, row: Mapping[str, Any]) -> str:
        try:
            return self._fmt.format(**{key: _plain(value) for key, value in row.items()})
        except KeyError as e:
            raise ValueError(f'Formatting field not found in row: {e}')


class Sink:
    """
    Base class of every sink.

    Subclasses implement `emit`; `handle` serializes calls to it with the
    sink's lock.
    """

    terminator = '\n'

    def __init__(self, formatter: RowFormatter | None = None) -> None:
        self.formatter = formatter
        self._closed = False
        self.lock: threading.RLock | None = threading.RLock()
        _add_sink_ref(self)

    def format(self, row: Mapping[str, Any]) -> str:
        if self.formatter is None:
            return ",".join(str(_plain(value)) for value in row.values())
        return self.formatter.format(row)

    def emit(self, row: Mapping[str, Any]) -> None:
        raise NotImplementedError('emit must be implemented by Sink subclasses')

    def handle(self, row: Mapping[str, Any]) -> None:
        assert self.lock is not None
        with self.lock:
            self.emit(row)

    def handle_rows(self, rows: Iterable[Mapping[str, Any]]) -> None:
        for row in rows:
            self.handle(row)

    def flush(self) -> None:
        pass

    def close(self) -> None:
        with _lock:
            self._closed = True

    def handle_error(self, row: Mapping[str, Any]) -> None:
        """
        Called from `emit` inside an ``except`` block.

        Re-raises while `raise_exceptions` is set, since a lost row makes the
        emitted data silently wrong. Otherwise the failure is logged.
        """
        exc = sys.exception()
        if raise_exceptions and exc is not None:
            raise exc
        logger.error("Could not write row %r", dict(row), exc_info=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def __repr__(self) -> str:
        return f'<{self.__class__.__name__}>'


class StreamSink(Sink):
    """
    Writes rows to a stream, sys.stdout by default. The stream is never closed.

    With *header* set, the header of the formatter precedes the first row.
    """

    def __init__(self, stream=None, formatter: RowFormatter | None = None, *, header: bool = False) -> None:
        super().__init__(formatter)
        self.stream = sys.stdout if stream is None else stream
        self.header = header
        self._header_pending = header and formatter is not None

    def flush(self) -> None:
        assert self.lock is not None
        with self.lock:
            if self.stream and hasattr(self.stream, "flush"):
                self.stream.flush()

    def write_line(self, line: str) -> None:
        self.stream.write(line + self.terminator)

    def emit(self, row: Mapping[str, Any]) -> None:
        try:
            line = self.format(row)
            if self._header_pending:
                self._header_pending = False
                self.write_line(self.formatter.header)
            self.write_line(line)
        except RecursionError:
            raise
        except Exception:
            self.handle_error(row)

    def __repr__(self) -> str:
        name = str(getattr(self.stream, "name", ""))
        return f"<{self.__class__.__name__} {name}>" if name else f"<{self.__class__.__name__}>"


class FileSink(StreamSink):
    """
    Writes rows to a file, opened on the first row unless *delay* is false.

    The header of the formatter goes first when *header* is true. Files are
    opened with a ``\\n`` newline so the output is identical on every platform.
    """

    def __init__(
        self,
        filename: str | os.PathLike[str],
        formatter: RowFormatter | None = None,
        *,
        mode: str = 'w',
        encoding: str | None = 'utf-8',
        delay: bool = True,
        header: bool = True,
    ) -> None:
        self.baseFilename = os.path.abspath(os.fspath(filename))
        self.mode = mode
        self.encoding = io.text_encoding(encoding)
        self.header = header
        self.delay = delay
        Sink.__init__(self, formatter)
        self.stream = None
        self._header_pending = False
        if not delay:
            self._start()

    def _open(self):
        return open(self.baseFilename, self.mode, encoding=self.encoding, newline='\n')

    def _start(self) -> None:
        self.stream = self._open()
        if self.header and self.formatter is not None:
            self.write_line(self.formatter.header)

    def emit(self, row: Mapping[str, Any]) -> None:
        if self.stream is None:
            if self._closed:
                return
            self._start()
        StreamSink.emit(self, row)

    def close(self) -> None:
        assert self.lock is not None
        with self.lock:
            try:
                if self.stream:
                    try:
                        self.flush()
                    finally:
                        stream, self.stream = self.stream, None
                        stream.close()
            finally:
                StreamSink.close(self)

    def __repr__(self) -> str:
        return f'<{self.__class__.__name__} {self.baseFilename}>'


def shutdown(sink_list: list[weakref.ref[Sink]] = _sinkList) -> None:
    """Flush and close every live sink, newest first. Registered with atexit."""
    for wr in reversed(sink_list[:]):
        try:
            sink = wr()
            if sink:
                try:
                    sink.flush()
                    sink.close()
                except (OSError, ValueError):
                    # the stream may already be gone during interpreter shutdown
                    pass
        except Exception:
            if raise_exceptions:
                raise


atexit.register(shutdown)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(path: str | os.PathLike[str], payload: Any) -> None:
    """Write *payload* as canonical JSON: sorted keys, two-space indent, trailing newline."""
    text = json.dumps(payload, sort_keys=True, indent=2, allow_nan=False, default=_json_default)
    with open(path, 'w', encoding='utf-8', newline='\n') as file:
        file.write(text + '\n')

import io
import logging

import pytest
from qtopc import _log


def test_normalize_level():
    for level, level_name in _log._levelToName.items():
        assert _log.normalize_level(level) == level
        assert _log.normalize_level(level_name) == level

    assert _log.normalize_level(345) == 345
    assert _log.normalize_level("step") == _log.STEP
    with pytest.raises(ValueError):
        _log.normalize_level("LOUD")
    with pytest.raises(TypeError):
        _log.normalize_level(12.3)  # type: ignore
    with pytest.raises(TypeError):
        _log.normalize_level(True)
    with pytest.raises(TypeError):
        _log.normalize_level([])  # type: ignore


def test_configure_logging(restore_logger):
    stream = io.StringIO()
    assert _log.configure_logging(stream=stream, level="STEP", force=True) is restore_logger
    logging.getLogger("qtopc.feedback").log(_log.STEP, "step %d", 3)
    logging.getLogger("qtopc.feedback").debug("hidden")
    assert stream.getvalue() == "STEP:qtopc.feedback:step 3\n"

    # already configured: only the level changes
    _log.configure_logging(level="NOTICE")
    logging.getLogger("qtopc").info("quiet")
    logging.getLogger("qtopc").log(_log.NOTICE, "done")
    assert stream.getvalue().endswith("step 3\nNOTICE:qtopc:done\n")

    with pytest.raises(ValueError):
        _log.configure_logging(stream=stream)
    with pytest.raises(ValueError):
        _log.configure_logging(force=True, stream=stream, filename="x.log")


def test_configure_logging_to_file(restore_logger, tmp_path):
    path = tmp_path / "qtopc.log"
    _log.configure_logging(filename=path, filemode="w", level=logging.INFO, format="%(message)s", force=True)
    logging.getLogger("qtopc.experiments").info("campaign done")
    for handler in restore_logger.handlers:
        handler.flush()
    assert path.read_text() == "campaign done\n"

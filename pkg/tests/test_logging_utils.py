import io
import logging
import time
from datetime import datetime, timezone

from tensor_completion.logging_utils import (
    LOG_DATE_FORMAT,
    LOG_FORMAT,
    TRACE_LEVEL,
    ColorFormatter,
    configure_logging,
    ensure_trace_level,
    resolve_log_level,
)


def _record(level, msg):
    record = logging.LogRecord("tensor_completion.solver", level, __file__, 10, msg, (), None)
    record.created = datetime(2026, 12, 3, 13, 23, 55, tzinfo=timezone.utc).timestamp()
    record.msecs = 0.0
    return record


def test_color_formatter_includes_timestamp_and_right_aligned_level(monkeypatch):
    monkeypatch.setenv("NO_COLOR", "1")
    formatter = ColorFormatter(LOG_FORMAT, datefmt=LOG_DATE_FORMAT)
    formatter.converter = time.gmtime

    message = formatter.format(_record(logging.INFO, "iteration 3: tau_norm 1.2e-05"))

    assert message == "2026-12-03 13:23:55     INFO: iteration 3: tau_norm 1.2e-05"


def test_color_formatter_keeps_level_column_aligned(monkeypatch):
    monkeypatch.setenv("NO_COLOR", "1")
    ensure_trace_level()
    formatter = ColorFormatter(LOG_FORMAT, datefmt=LOG_DATE_FORMAT)
    formatter.converter = time.gmtime

    info_message = formatter.format(_record(logging.INFO, "info"))
    trace_message = formatter.format(_record(TRACE_LEVEL, "trace"))

    assert info_message.rindex(":") == trace_message.rindex(":")


def test_color_formatter_colors_the_level_marker(monkeypatch):
    monkeypatch.delenv("NO_COLOR", raising=False)
    formatter = ColorFormatter(LOG_FORMAT, datefmt=LOG_DATE_FORMAT)

    message = formatter.format(_record(logging.WARNING, "rank deficient"))

    assert "\033[33mWARNING:\033[0m" in message


def test_resolve_log_level_accepts_names_numbers_and_trace():
    assert resolve_log_level("debug") == logging.DEBUG
    assert resolve_log_level(" TRACE ") == TRACE_LEVEL
    assert resolve_log_level(30) == logging.WARNING
    assert resolve_log_level(None) == logging.INFO
    assert resolve_log_level("loud", default=logging.ERROR) == logging.ERROR


def test_configure_logging_installs_a_single_handler():
    root = logging.getLogger()
    saved_handlers, saved_level = list(root.handlers), root.level
    stream = io.StringIO()
    try:
        configure_logging(logging.DEBUG, stream)
        configure_logging(logging.DEBUG, stream)
        logging.getLogger("tensor_completion.test").debug("hello")
    finally:
        handlers = list(root.handlers)
        root.handlers[:] = saved_handlers
        root.setLevel(saved_level)

    assert len(handlers) == 1
    assert "hello" in stream.getvalue()

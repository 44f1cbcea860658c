import json
import logging
import sys
from typing import Optional

REPORT_LOGGER = "training.report"


def setup_logging(
    verbose: bool = False,
    quiet: bool = False
) -> None:
    """
    Configures the root logger for the application.

    Args:
        verbose: If True, set log level to DEBUG.
        quiet: If True, set log level to ERROR.
    """
    level = logging.INFO
    if verbose:
        level = logging.DEBUG
    if quiet:
        level = logging.ERROR

    logging.basicConfig(
        level=level,
        stream=sys.stdout,
        format="%(asctime)s [%(levelname)-7s] [%(name)-15s] %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        force=True
    )

    # Per-epoch records are only wanted in the report file
    logging.getLogger(REPORT_LOGGER).propagate = verbose

    log = logging.getLogger(__name__)
    log.debug(f"Logging configured. Level set to {logging.getLevelName(level)}")


class JsonLinesReportHandler(logging.Handler):
    """Writes the `report` payload of each record as one JSON line."""

    def __init__(self, path: str):
        super().__init__(level=logging.DEBUG)
        self.path = path
        self.stream = open(path, "w", encoding="utf-8")

    def emit(self, record: logging.LogRecord) -> None:
        payload = getattr(record, "report", None)
        if payload is None:
            return
        try:
            self.stream.write(json.dumps(payload, sort_keys=True) + "\n")
            self.flush()
        except Exception:
            self.handleError(record)

    def flush(self) -> None:
        if self.stream and not self.stream.closed:
            self.stream.flush()

    def close(self) -> None:
        try:
            if self.stream and not self.stream.closed:
                self.stream.close()
        finally:
            super().close()


def attach_report_handler(path: str) -> JsonLinesReportHandler:
    """Routes training.report records to a JSON-lines file."""
    handler = JsonLinesReportHandler(path)
    report = logging.getLogger(REPORT_LOGGER)
    report.setLevel(logging.DEBUG)
    report.addHandler(handler)
    return handler


def detach_report_handler(handler: Optional[JsonLinesReportHandler]) -> None:
    if handler is None:
        return
    logging.getLogger(REPORT_LOGGER).removeHandler(handler)
    handler.close()

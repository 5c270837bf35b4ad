from __future__ import annotations

import logging

from pythonjsonlogger.json import JsonFormatter

from her2pss.core.settings import Settings

_TEXT_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def configure_logging(settings: Settings) -> None:
    level_name = (settings.log_level or "INFO").upper()
    level = getattr(logging, level_name, logging.INFO)

    root_logger = logging.getLogger()
    if not root_logger.handlers:
        logging.basicConfig(level=level, format=_TEXT_FORMAT)
    else:
        root_logger.setLevel(level)

    if settings.log_format == "json":
        formatter = JsonFormatter(
            "%(asctime)s %(levelname)s %(name)s %(message)s",
            rename_fields={"levelname": "level", "name": "logger"},
        )
        for handler in root_logger.handlers:
            handler.setFormatter(formatter)

    logging.getLogger("her2pss").setLevel(level)
    # Pillow logs every PNG chunk at DEBUG.
    logging.getLogger("PIL").setLevel(max(level, logging.INFO))

import logging
import sys

from .settings import get_settings


def get_logger() -> logging.Logger:
    logger = logging.getLogger('drift-se')
    settings = get_settings()

    if not logger.handlers:
        handler = logging.StreamHandler(stream=sys.stdout)
        if settings.worker_id != '':
            handler.setFormatter(
                logging.Formatter(
                    f'[%(name)s] [worker {settings.worker_id}] [%(levelname)s] %(message)s'
                )
            )
        else:
            handler.setFormatter(logging.Formatter('[%(name)s] [%(levelname)s] %(message)s'))
        logger.addHandler(handler)

    logger.setLevel(settings.log_level.upper())
    return logger

"""
Logging service for the manipulation primitives system.
Uses Observer pattern for multiple log handlers and follows SRP.
"""

import logging
import logging.handlers
import os
import sys
from typing import List, Optional, Dict, Any
from abc import ABC, abstractmethod

from .exceptions import ConfigurationException
from .config import ConfigurationManager


ROOT_LOGGER_NAME = 'ManipulationPrimitives'

_LEVELS = {
    'DEBUG': logging.DEBUG,
    'INFO': logging.INFO,
    'WARNING': logging.WARNING,
    'ERROR': logging.ERROR,
    'CRITICAL': logging.CRITICAL
}


class LogHandler(ABC):
    """Abstract base class for log handlers."""

    @abstractmethod
    def install(self, logger: logging.Logger) -> None:
        """Attach the underlying handler to a logger."""
        pass


class FileLogHandler(LogHandler):
    """File-based log handler with rotation."""

    def __init__(self, log_file: str, max_size_mb: int = 20, backup_count: int = 3):
        self.log_file = log_file
        self.max_size_mb = max_size_mb
        self.backup_count = backup_count
        self._setup_handler()

    def _setup_handler(self) -> None:
        """Setup the file handler with rotation."""
        try:
            log_dir = os.path.dirname(self.log_file)
            if log_dir and not os.path.exists(log_dir):
                os.makedirs(log_dir)

            handler = logging.handlers.RotatingFileHandler(
                self.log_file,
                maxBytes=self.max_size_mb * 1024 * 1024,
                backupCount=self.backup_count
            )
            handler.setFormatter(logging.Formatter(
                '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
            ))
            handler.setLevel(logging.DEBUG)
            self.handler = handler

        except OSError as e:
            raise ConfigurationException(f"Failed to setup file log handler: {str(e)}")

    def install(self, logger: logging.Logger) -> None:
        logger.addHandler(self.handler)


class ConsoleLogHandler(LogHandler):
    """Console log handler. Writes to stderr so command output stays clean."""

    def __init__(self, log_level: str = "INFO"):
        self.log_level = log_level
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter('%(asctime)s - %(levelname)s - %(message)s'))
        handler.setLevel(_LEVELS.get(self.log_level.upper(), logging.INFO))
        self.handler = handler

    def install(self, logger: logging.Logger) -> None:
        logger.addHandler(self.handler)


_installed_handlers: List[LogHandler] = []


def configure_logging(config: Optional[ConfigurationManager] = None, force: bool = False) -> None:
    """
    Install console and file handlers on the package root logger.

    Handlers are installed once per process; ``force`` replaces them, which
    the command line uses after applying ``--log-level``.
    """
    config = config or ConfigurationManager.get_instance()
    root = logging.getLogger(ROOT_LOGGER_NAME)

    if _installed_handlers and not force:
        return

    for installed in _installed_handlers:
        root.removeHandler(installed.handler)
    _installed_handlers.clear()

    root.setLevel(logging.DEBUG)
    root.propagate = True

    handlers: List[LogHandler] = [ConsoleLogHandler(config.system.log_level)]
    if config.system.log_file:
        handlers.append(FileLogHandler(
            config.system.log_file,
            config.system.max_log_size_mb,
            config.system.log_backup_count
        ))

    for handler in handlers:
        handler.install(root)
        _installed_handlers.append(handler)


def reset_logging() -> None:
    """Remove the handlers installed by :func:`configure_logging`."""
    root = logging.getLogger(ROOT_LOGGER_NAME)
    for installed in _installed_handlers:
        root.removeHandler(installed.handler)
        installed.handler.close()
    _installed_handlers.clear()


class LoggingService:
    """
    Centralized logging facade.
    Formats context dictionaries and routes messages to the package logger.
    """

    def __init__(self, name: str = ""):
        self.config = ConfigurationManager.get_instance()
        self.name = f"{ROOT_LOGGER_NAME}.{name}" if name else ROOT_LOGGER_NAME
        self._logger = logging.getLogger(self.name)

    @staticmethod
    def _format(message: str, context: Optional[Dict[str, Any]]) -> str:
        if not context:
            return message
        context_str = ' | '.join([f"{k}: {v}" for k, v in context.items()])
        return f"{message} | Context: {context_str}"

    def log(self, level: str, message: str, context: Optional[Dict[str, Any]] = None) -> None:
        """Log a message with the specified level and context."""
        self._logger.log(_LEVELS.get(level.upper(), logging.INFO), self._format(message, context))

    def debug(self, message: str, context: Optional[Dict[str, Any]] = None) -> None:
        """Log debug message."""
        self.log('DEBUG', message, context)

    def info(self, message: str, context: Optional[Dict[str, Any]] = None) -> None:
        """Log info message."""
        self.log('INFO', message, context)

    def warning(self, message: str, context: Optional[Dict[str, Any]] = None) -> None:
        """Log warning message."""
        self.log('WARNING', message, context)

    def error(self, message: str, context: Optional[Dict[str, Any]] = None) -> None:
        """Log error message."""
        self.log('ERROR', message, context)

    def critical(self, message: str, context: Optional[Dict[str, Any]] = None) -> None:
        """Log critical message."""
        self.log('CRITICAL', message, context)

    def log_pipeline_event(self, event_type: str, details: Dict[str, Any]) -> None:
        """Log completion of a pipeline stage."""
        context = {
            'event_type': event_type,
            **details
        }
        self.info(f"Pipeline Event: {event_type}", context)

    def log_error(self, error: Exception, context: Optional[Dict[str, Any]] = None) -> None:
        """Log an exception with context."""
        error_context = {
            'error_type': type(error).__name__,
            'error_message': str(error),
            **(context or {})
        }
        self.error(f"Exception occurred: {str(error)}", error_context)

    def get_log_summary(self) -> Dict[str, Any]:
        """Get a summary of logging configuration."""
        return {
            'logger': self.name,
            'handlers_count': len(_installed_handlers),
            'handler_types': [type(handler).__name__ for handler in _installed_handlers],
            'log_level': self.config.system.log_level,
            'log_file': self.config.system.log_file
        }

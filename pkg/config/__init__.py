"""Configuration management.

Modules:
    - settings: Environment variables and process settings
    - logging_config: Structured console and file logging setup
    - experiment: Experiment documents, validation and schema export
"""

from config.settings import Settings, get_settings
from config.logging_config import setup_logging, get_logger

__all__ = [
    "Settings",
    "get_settings",
    "setup_logging",
    "get_logger",
]

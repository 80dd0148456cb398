import os
from datetime import datetime, timezone
from typing import Any, Dict, Optional

import yaml


class GmaError(Exception):
    """Base class for errors the CLI reports without a traceback."""


class ConfigError(GmaError):
    pass


class AnnotationError(GmaError):
    pass


class EmptyMaskError(GmaError, ValueError):
    pass


def utc_now():
    return datetime.now(timezone.utc)


def load_config(config_path: Optional[str]) -> Dict[str, Any]:
    """Read a YAML run config; a missing path means 'all defaults'."""
    if not config_path:
        return {}
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            cfg = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Config file {config_path} is not valid YAML: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError(f"Config file {config_path} must hold a mapping at the top level")
    return cfg


def resolve_threads(requested: Optional[int]) -> int:
    # 0 / None -> machine parallelism
    if not requested:
        return os.cpu_count() or 1
    if requested < 0:
        raise ConfigError(f"--threads must be >= 0, got {requested}")
    return requested

"""Run configuration: INI file sections, .env overrides, pydantic validation."""

import configparser
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, get_origin

from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from exceptions import ConfigError
from models import RunConfig

logger = logging.getLogger(__name__)

APP_VERSION = "1.0.0"

RUN_SECTION = "run"
ENV_OVERRIDES = {
    "RIS_OUTPUT_DIR": "output_dir",
    "RIS_SEED": "seed",
}


def _section_models() -> Dict[str, type]:
    return {
        name: field.annotation
        for name, field in RunConfig.model_fields.items()
        if isinstance(field.annotation, type) and issubclass(field.annotation, BaseModel)
    }


def _coerce(model: type, key: str, raw: str) -> Any:
    """Comma separated values become lists for list-typed fields; pydantic does the rest"""
    field = model.model_fields.get(key)
    if field is not None and get_origin(field.annotation) is list:
        return [item.strip() for item in raw.split(",") if item.strip()]
    return raw


def _parse_ini(path: Path) -> Dict[str, Any]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are field names, keep their case
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc

    sections = _section_models()
    data: Dict[str, Any] = {}
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == RUN_SECTION:
            data.update(items)
        elif section in sections:
            model = sections[section]
            data[section] = {key: _coerce(model, key, value) for key, value in items.items()}
        else:
            raise ConfigError(f"{path}: unknown section [{section}]")
    return data


def _env_overrides() -> Dict[str, str]:
    load_dotenv()
    overrides = {}
    for env_name, field in ENV_OVERRIDES.items():
        value = os.getenv(env_name)
        if value:
            overrides[field] = value
    return overrides


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Defaults, then the INI file, then RIS_* environment variables, then explicit overrides"""
    data: Dict[str, Any] = {}
    if path:
        data.update(_parse_ini(Path(path)))
    data.update(_env_overrides())
    data.update({key: value for key, value in (overrides or {}).items() if value is not None})
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    logger.debug(f"run configuration loaded from {path or 'defaults'} (seed {cfg.seed})")
    return cfg


def log_level_from_env(default: str = "INFO") -> str:
    load_dotenv()
    return os.getenv("RIS_LOG_LEVEL", default).upper()

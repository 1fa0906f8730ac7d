import logging
import os
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Tuple

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field

from descriptor import FAMILIES, DescriptorConfig, config_digest
from lbp import parse_scales
from pixelgraph import GraphParams

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = 'CNLBP_CONFIG'

# every key of the flat config file; each has a --flag twin
CONFIG_KEYS = (
    'q', 'r', 's', 't', 'L', 'scales', 'families', 'normalize', 'resize',
    'ec_tol', 'ec_max_iter', 'ec_direction',
    'format', 'workers', 'seed', 'test_fraction', 'k', 'repeats',
)


class SettingsError(ValueError):
    """Raised for unknown keys or unparsable values in the configuration"""


class CliConfig(BaseModel):
    """Effective settings of one command invocation"""
    model_config = ConfigDict(frozen=True)

    command: str
    descriptor: DescriptorConfig = DescriptorConfig()
    config_file: Optional[str] = None
    format: Literal['jsonl', 'csv'] = 'jsonl'
    workers: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    seed: int = 0
    test_fraction: float = Field(0.3, gt=0, lt=1)
    k: int = Field(5, ge=1)
    repeats: int = Field(1, ge=1)

    @property
    def digest(self) -> str:
        return config_digest(self.descriptor)

    def metadata(self) -> Dict[str, Any]:
        """Effective configuration as echoed next to every output file"""
        return {
            'command': self.command,
            'config_digest': self.digest,
            'descriptor': self.descriptor.model_dump(mode='json'),
            'format': self.format,
            'workers': self.workers,
            'seed': self.seed,
            'test_fraction': self.test_fraction,
            'k': self.k,
            'repeats': self.repeats,
            'config_file': self.config_file,
        }


def parse_bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise SettingsError(f"Not a boolean: '{text}'")


def parse_families(value) -> Tuple[str, ...]:
    """`TI,GI` -> ('TI', 'GI'); `all` selects every family"""
    if not isinstance(value, str):
        return tuple(value)
    if value.strip().lower() == 'all':
        return FAMILIES
    return tuple(name.strip().upper() for name in value.split(',') if name.strip())


def parse_size(text: str) -> Optional[Tuple[int, int]]:
    """`128x128` -> (128, 128); `none` disables resizing"""
    value = str(text).strip().lower()
    if value in ('none', 'off', ''):
        return None
    try:
        w, h = value.split('x')
        return int(w), int(h)
    except ValueError:
        raise SettingsError(f"Invalid size '{text}', expected WxH or none")


def read_config_file(path: Optional[str]) -> Dict[str, str]:
    """Parse a flat key=value file; unknown keys are rejected"""
    if not path:
        return {}
    if not Path(path).is_file():
        raise SettingsError(f"Config file not found: {path}")
    values = {k: v for k, v in dotenv_values(path).items() if v is not None}
    unknown = sorted(set(values) - set(CONFIG_KEYS))
    if unknown:
        raise SettingsError(f"Unknown config keys in {path}: {', '.join(unknown)}")
    logger.info(f"Loaded {len(values)} setting(s) from {path}")
    return values


def resolve_config_path(flag_value: Optional[str]) -> Optional[str]:
    """--config wins over the CNLBP_CONFIG environment variable (which a .env file may set)"""
    load_dotenv()
    return flag_value or os.getenv(CONFIG_ENV_VAR) or None


def build_config(command: str, overrides: Mapping[str, Any], config_path: Optional[str] = None) -> CliConfig:
    """Merge config-file values with flag overrides (flags win) into a CliConfig"""
    path = resolve_config_path(config_path)
    merged: Dict[str, Any] = dict(read_config_file(path))
    merged.update({k: v for k, v in overrides.items() if v is not None and k in CONFIG_KEYS})

    try:
        graph_fields = {key: float(merged[key]) for key in ('q', 'r', 's', 't') if key in merged}
        if 'L' in merged:
            graph_fields['L'] = int(merged['L'])
        descriptor_fields: Dict[str, Any] = {'graph': GraphParams(**graph_fields)}
        if 'scales' in merged:
            scales = merged['scales']
            descriptor_fields['scales'] = parse_scales(scales) if isinstance(scales, str) else tuple(scales)
        if 'families' in merged:
            descriptor_fields['families'] = parse_families(merged['families'])
        if 'normalize' in merged:
            descriptor_fields['normalize'] = parse_bool(merged['normalize'])
        if 'resize' in merged:
            resize = merged['resize']
            descriptor_fields['resize_to'] = parse_size(resize) if isinstance(resize, str) else resize
        if 'ec_tol' in merged:
            descriptor_fields['ec_tol'] = float(merged['ec_tol'])
        if 'ec_max_iter' in merged:
            descriptor_fields['ec_max_iter'] = int(merged['ec_max_iter'])
        if 'ec_direction' in merged:
            descriptor_fields['ec_direction'] = merged['ec_direction']

        cli_fields: Dict[str, Any] = {}
        for key, cast in (('format', str), ('workers', int), ('seed', int),
                          ('test_fraction', float), ('k', int), ('repeats', int)):
            if key in merged:
                cli_fields[key] = cast(merged[key])

        return CliConfig(command=command, descriptor=DescriptorConfig(**descriptor_fields),
                         config_file=path, **cli_fields)
    except (TypeError, ValueError) as e:
        logger.error(f"Invalid configuration: {str(e)}")
        raise SettingsError(str(e)) from e

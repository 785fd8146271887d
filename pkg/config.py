# -*- coding: utf-8 -*-
"""
Project-wide settings
Values come from the environment (.env is loaded if present) with defaults
that reproduce the dormitory experiment scale
"""

import os
from typing import Any, Dict

from dotenv import load_dotenv

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from errors import ConfigError

# Load environment variables
load_dotenv()

TOOL_VERSION = '0.3.0'
REPORT_SCHEMA_VERSION = 1

LOG_LEVEL = os.getenv('EDISON_LOG_LEVEL', 'WARNING')

# Issuer / administrator account, shown as "admin" in hypergraph exports
SYSTEM_ACCOUNT = os.getenv('EDISON_SYSTEM_ACCOUNT', 'admin')

# Robustness threshold for cavities, in standardized units
DEFAULT_THETA = float(os.getenv('EDISON_THETA', '0.25'))
DEFAULT_THETA_SWEEP = (0.1, 0.25, 0.5)

DEFAULT_JOBS = int(os.getenv('EDISON_JOBS', '1'))

# Desk-scale limit for the Cech filtration
MAX_CLOUD_POINTS = 64


def read_toml(path: str) -> Dict[str, Any]:
    """Read a TOML run configuration, raising ConfigError on any failure"""
    try:
        with open(path, 'rb') as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Cannot parse config {path}: {e}")

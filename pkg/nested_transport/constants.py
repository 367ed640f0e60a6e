# Shared constants used across the solvers and the CLI
# Loaded from config/examples.json

import json
import os

from dotenv import load_dotenv

load_dotenv()

_CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "config")
_CONFIG_FILE = os.path.join(_CONFIG_DIR, "examples.json")

with open(_CONFIG_FILE, "r") as f:
    _config = json.load(f)

CURVE_FAMILIES = _config["curves"]
DEFAULTS = _config["defaults"]
SVG_PALETTE = _config["svg_palette"]
REFERENCE_CONSTANTS = _config["reference_constants"]

GRID_ENV_VAR = "NESTED_TRANSPORT_GRID"
LOG_DIR_ENV_VAR = "NESTED_TRANSPORT_LOG_DIR"


def default_grid_resolution() -> int:
    """Grid resolution M, overridable through the environment."""
    raw = os.getenv(GRID_ENV_VAR)
    if raw:
        try:
            return int(raw)
        except ValueError:
            pass
    return int(DEFAULTS["grid_resolution"])


def default_log_file() -> str:
    log_dir = os.getenv(LOG_DIR_ENV_VAR, os.path.join("working_dir", "logs"))
    return os.path.join(log_dir, "solver_logs.json")


def reference_constant(measure: str, example: str, n: int):
    """Published C for a (measure, example, N) cell, or None."""
    return REFERENCE_CONSTANTS.get(measure, {}).get(example, {}).get(str(n))

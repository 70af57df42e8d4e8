# config.py - synthesis defaults, environment overrides and logging
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import psutil
from dotenv import load_dotenv

load_dotenv()

# Environment overrides
OUTPUT_DIR = os.getenv("EMS_OUTPUT_DIR", "synthesis_runs")
LOG_LEVEL = os.getenv("EMS_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_FILE_NAME = "synthesis_debug.log"


def _default_threads() -> int:
    env_threads = os.getenv("EMS_THREADS")
    if env_threads:
        return max(1, int(env_threads))
    return max(1, psutil.cpu_count(logical=False) or 1)


# Physical scenario defaults (28 GHz, 0.4 lambda pitch, unit fields)
SYNTHESIS_CONFIG = {
    "frequency_hz": 28e9,
    "pitch_wavelengths": 0.4,
    "alpha": 1.0,
    "amplitude_re": 1.0,
    "amplitude_im": 0.0,
    "phi_deg": 0.0,
    "bounds_lo_fraction": 0.05,
    "bounds_hi_fraction": 0.95,
}

# Digital twin (Ordinary Kriging) settings
TWIN_CONFIG = {
    "source": "synthetic",  # synthetic | table
    "table_path": None,
    "n_train": 400,  # per incidence angle
    "seed": 2024,
    "lut_resolution": 128,
    "cv_folds": 5,
    "nugget": 1e-10,
    "theta_grid_points": 21,
    "theta_log10_min": -2.0,
    "theta_log10_max": 3.0,
    "sweeps": 2,
}

# Particle swarm settings
SWARM_CONFIG = {
    "swarm_size": 100,
    "iterations": 10000,
    "w_start": 0.9,
    "w_end": 0.4,
    "c1": 2.0,
    "c2": 2.0,
    "v_max_fraction": 0.2,
    "seed": 2025,
    "stagnation_window": 500,
    "warm_start": False,
}

# Pattern evaluation settings
PATTERN_CONFIG = {
    "cut_samples": 721,  # step ~0.0028 in u
    "grid_u": 40,
    "grid_v": 40,
    "db_floor": -100.0,
}

# Performance settings
PERFORMANCE_CONFIG = {
    "threads": _default_threads(),
    "enable_resource_monitoring": True,
}


class ConfigError(ValueError):
    """Invalid or unknown configuration field"""


def setup_logging(
    out_dir: Optional[str] = None, level: str = LOG_LEVEL, quiet: bool = False
) -> None:
    """Configure root logging: stderr plus a debug log inside the run directory"""
    handlers = []

    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setLevel(logging.WARNING if quiet else level)
    handlers.append(stream_handler)

    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(
            Path(out_dir) / LOG_FILE_NAME, encoding="utf-8"
        )
        file_handler.setLevel(logging.DEBUG)
        handlers.append(file_handler)

    logging.basicConfig(
        level=logging.DEBUG if out_dir else level,
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )
    # numba's compiler logging is noisy at DEBUG
    logging.getLogger("numba").setLevel(logging.WARNING)

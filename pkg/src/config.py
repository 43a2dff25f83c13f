"""
Configuration Module
Centralized configuration management with model preset support
"""

import os
import yaml
from pathlib import Path
from dotenv import load_dotenv
from typing import Dict, List, Optional

# Explicitly load .env file from project root
project_root = Path(__file__).parent.parent
env_file = project_root / ".env"
if env_file.exists():
    load_dotenv(env_file)
else:
    # Fallback to current directory
    load_dotenv()


class ConfigError(ValueError):
    """Configuration could not be parsed or violates a precondition"""


class Config:
    """Configuration manager with preset support"""

    # Numerical grid
    DEFAULT_STEP = float(os.getenv("FORWARD_STEP", "0.01"))
    DEFAULT_HORIZON = float(os.getenv("FORWARD_HORIZON", "10"))

    # Forward rate definitions
    DEFINITIONS = ["marginal", "equations", "statewise"]

    # Monte Carlo
    DEFAULT_PATHS = int(os.getenv("MC_PATHS", "1000000"))
    DEFAULT_SEED = int(os.getenv("MC_SEED", "20240101"))
    MC_BATCH_SIZE = int(os.getenv("MC_BATCH_SIZE", "10000"))
    MC_SE_BAND = 4.0

    # Parallel per-scenario solves (results do not depend on this)
    WORKERS = int(os.getenv("WORKERS", "1"))

    # Tolerances
    ROW_SUM_TOLERANCE = 1e-9
    PATH_AGREEMENT_TOLERANCE = 1e-9
    WEIGHT_SUM_TOLERANCE = 1e-12
    DIAGONAL_FLOOR = 1e-12
    OCCUPANCY_FLOOR = 1e-12
    REPLACEMENT_TOLERANCE = 1e-6
    RESIDUAL_FLAG = 1e-8
    CURVE_DIGITS = 15

    # Paths
    PROJECT_ROOT = Path(__file__).parent.parent
    OUTPUT_DIR = PROJECT_ROOT / "output"
    CACHE_DIR = PROJECT_ROOT / ".cache"
    CONFIG_DIR = PROJECT_ROOT / "config"

    # Cache Settings
    CACHE_ENABLED = os.getenv("CACHE_ENABLED", "true").lower() == "true"
    CACHE_MAX_AGE_HOURS = int(os.getenv("CACHE_MAX_AGE_HOURS", "24"))
    CACHE_MAX_AGE_DAYS = int(os.getenv("CACHE_MAX_AGE_DAYS", "7"))

    @classmethod
    def _load_presets(cls) -> Dict:
        preset_file = cls.CONFIG_DIR / "presets.yaml"

        if not preset_file.exists():
            return {}

        try:
            with open(preset_file, 'r') as f:
                return yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            print(f"Warning: Could not read presets: {e}")
            return {}

    @classmethod
    def load_preset(cls, preset_name: str) -> Optional[Dict]:
        """Load a model preset from YAML"""
        return cls._load_presets().get('models', {}).get(preset_name)

    @classmethod
    def preset_names(cls) -> List[str]:
        """Names of all shipped model presets"""
        return sorted(cls._load_presets().get('models', {}).keys())

    @classmethod
    def validate(cls) -> bool:
        """Validate critical configuration"""
        problems = []
        if not cls.DEFAULT_STEP > 0:
            problems.append(f"FORWARD_STEP must be positive (got {cls.DEFAULT_STEP})")
        if not cls.DEFAULT_HORIZON > 0:
            problems.append(f"FORWARD_HORIZON must be positive (got {cls.DEFAULT_HORIZON})")
        if cls.DEFAULT_PATHS < 1:
            problems.append(f"MC_PATHS must be at least 1 (got {cls.DEFAULT_PATHS})")
        if cls.MC_BATCH_SIZE < 1:
            problems.append(f"MC_BATCH_SIZE must be at least 1 (got {cls.MC_BATCH_SIZE})")
        if cls.WORKERS < 1:
            problems.append(f"WORKERS must be at least 1 (got {cls.WORKERS})")

        for problem in problems:
            print(f"[ERROR] {problem}")
        return not problems

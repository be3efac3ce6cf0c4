"""Load .env variables (SLIM_* experiment overrides) before configs are read."""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Dict, Optional

from dotenv import dotenv_values, find_dotenv, load_dotenv

logger = logging.getLogger(__name__)

ENV_PREFIX = "SLIM_"


def load_env(path: Optional[str] = None, override: bool = False) -> bool:
    """
    Load a .env file into os.environ.

    Args:
        path: Explicit file; otherwise searched upward from the working directory
        override: Replace variables already set in the shell

    Returns:
        True if a file was found and loaded
    """
    dotenv_path = path or find_dotenv(usecwd=True)
    if not dotenv_path:
        candidate = Path.cwd() / ".env"
        if not candidate.exists():
            return False
        dotenv_path = str(candidate)

    load_dotenv(dotenv_path, override=override)
    logger.debug(f"Loaded environment from {dotenv_path}")
    return True


def slim_overrides(path: Optional[str] = None) -> Dict[str, str]:
    """SLIM_* entries of a .env file (or the current environment) without applying them."""
    source = dotenv_values(path) if path else dict(os.environ)
    return {k: v for k, v in source.items() if k.startswith(ENV_PREFIX) and v is not None}

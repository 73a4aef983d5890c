"""
TVNet - Run Manifests
"""

import datetime
import json
import logging
import platform
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd

from tvnet.config.settings import TVNET_VERSION, PipelineConfig

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"


def environment_versions() -> Dict[str, str]:
    return {
        "tvnet": TVNET_VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
    }


def write_manifest(out_dir: Union[str, Path], command: str, config: Optional[PipelineConfig],
                   seed: Optional[int] = None, jobs: int = 1, extra: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write manifest.json next to a command's outputs

    Args:
        out_dir: Output directory of the command
        command: Sub-command name
        config: Configuration the command ran with
        seed: Seed in effect
        jobs: Worker count
        extra: Command-specific entries (input files, split, ...)

    Returns:
        Path: The manifest file
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "created_at": datetime.datetime.now().isoformat(timespec="seconds"),
        "config_hash": config.config_hash() if config is not None else None,
        "seed": seed if seed is not None else (config.seed if config is not None else None),
        "jobs": jobs,
        "versions": environment_versions(),
    }
    if config is not None:
        manifest["config"] = config.model_dump(mode="json")
    if extra:
        manifest.update(extra)
    path = out_dir / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=2, default=str))
    logger.info(f"Wrote {path}")
    return path


def read_manifest(out_dir: Union[str, Path]) -> Dict[str, Any]:
    path = Path(out_dir) / MANIFEST_FILE
    return json.loads(path.read_text()) if path.exists() else {}

"""
Run log for fluidnet.

Every command appends one JSON line describing the run to runs.log.
Appends take an exclusive lock and are fsync'ed before returning.
"""

import fcntl
import logging
import os
from datetime import datetime, timezone
from pathlib import Path

from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)


class RunManifest(BaseModel):
    command: str
    config_hash: str | None = None
    seed: int | None = None
    version: str
    wall_time: float = Field(ge=0.0)
    outputs: list[str] = Field(default_factory=list)
    started_at: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())


def append_manifest(manifest: RunManifest, log_path: Path) -> None:
    """
    Append a manifest as one JSON line.

    Never fails silently: either the line is on disk or an OSError is raised.
    """
    line = manifest.model_dump_json() + "\n"
    log_path.parent.mkdir(parents=True, exist_ok=True)

    with open(log_path, "a", encoding="utf-8") as f:
        fcntl.flock(f.fileno(), fcntl.LOCK_EX)
        try:
            f.write(line)
            f.flush()
            os.fsync(f.fileno())
        finally:
            fcntl.flock(f.fileno(), fcntl.LOCK_UN)

    logger.info(f"Run manifest appended to {log_path}")


def read_manifests(log_path: Path) -> list[RunManifest]:
    if not log_path.exists():
        return []
    with open(log_path, encoding="utf-8") as f:
        return [RunManifest.model_validate_json(line) for line in f if line.strip()]

"""CSV/JSON artifact writers.

CSV files start with `# key: value` comment lines (spec hash, seed, ...)
followed by a plain pandas body, so equal inputs give byte-identical bodies.
"""

import datetime as dt
import hashlib
import json
import logging
import subprocess
from pathlib import Path
from typing import Mapping, Optional

import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"


def spec_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def version_string() -> str:
    """`git describe` of the working tree, or a fixed fallback outside git."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).resolve().parents[2],
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "0.1.0+unknown"


def utc_now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def write_csv(frame: pd.DataFrame, path, header: Optional[Mapping[str, object]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}: {value}\n")
        frame.to_csv(fh, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("Wrote %s (%d rows)", path, len(frame))
    return path


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def write_json(path, payload: Mapping[str, object]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    logger.info("Wrote %s", path)
    return path


def write_manifest(path, *, kind: str, config, seed, started_at: str, **extra) -> Path:
    payload = {
        "kind": kind,
        "config": config,
        "seed": seed,
        "started_at": started_at,
        "finished_at": utc_now(),
        "version": version_string(),
    }
    payload.update(extra)
    return write_json(path, payload)

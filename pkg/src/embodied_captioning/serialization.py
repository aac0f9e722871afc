"""
Versioned JSON and JSONL artifact files.

Every file starts with a ``schema`` field naming its format and version, e.g.
``{"schema": "scene/1", ...}``. JSON is written with sorted keys and fixed
separators, so equal content always yields identical bytes.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Iterable, List, Tuple, Union

import aiofiles
import numpy as np

from .exceptions import SchemaVersionError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SCHEMAS = {
    "scene": "scene/1",
    "episode": "episode/1",
    "map": "map/1",
    "pseudo": "pseudo/1",
    "annotations": "annotations/1",
    "toycap": "toycap/1",
    "report": "report/1",
    "consistency": "consistency/1",
    "manifest": "manifest/1",
    "dataset": "dataset/1",
}


def _default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, (set, frozenset, tuple)):
        return sorted(value) if isinstance(value, (set, frozenset)) else list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def dumps(obj: Any) -> str:
    """Canonical JSON text of ``obj``."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_default, allow_nan=True)


def _check_schema(data: Any, schema: str, path: PathLike) -> dict:
    if not isinstance(data, dict) or "schema" not in data:
        raise SchemaVersionError(f"{path}: missing schema header, expected '{schema}'")
    if data["schema"] != schema:
        raise SchemaVersionError(f"{path}: schema '{data['schema']}' does not match expected '{schema}'")
    return data


def write_json(path: PathLike, schema: str, payload: dict) -> Path:
    """Write ``payload`` under a ``schema`` header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps({"schema": schema, **payload}) + "\n", encoding="utf-8")
    return path


def read_json(path: PathLike, schema: str) -> dict:
    """
    Read a JSON artifact.

    Raises:
        SchemaVersionError: If the header is missing or names another schema
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return _check_schema(data, schema, path)


def write_jsonl(path: PathLike, schema: str, header: dict, records: Iterable[dict]) -> Path:
    """Write a header line followed by one record per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [dumps({"schema": schema, **header})]
    lines.extend(dumps(r) for r in records)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_jsonl(path: PathLike, schema: str) -> Tuple[dict, List[dict]]:
    """
    Read a JSONL artifact.

    Returns:
        Tuple of (header, records)

    Raises:
        SchemaVersionError: If the header line is missing or names another schema
    """
    lines = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    if not lines:
        raise SchemaVersionError(f"{path}: empty file, expected '{schema}' header")
    header = _check_schema(json.loads(lines[0]), schema, path)
    return header, [json.loads(line) for line in lines[1:]]


async def write_jsonl_async(path: PathLike, schema: str, header: dict, records: Iterable[dict]) -> Path:
    """Async twin of :func:`write_jsonl` for use inside an event loop."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(path, "w", encoding="utf-8") as f:
        await f.write(dumps({"schema": schema, **header}) + "\n")
        for record in records:
            await f.write(dumps(record) + "\n")
    return path


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()

"""Reading matrices and configs, writing JSON/CSV outputs atomically."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import ValidationError

INLINE_MAX_DIM = 4


def parse_matrix(data, name: str = "matrix", square: bool = True) -> np.ndarray:
    """Validate an array-of-rows of finite numbers, naming the first bad entry."""
    if isinstance(data, (int, float)) and not isinstance(data, bool):
        data = [[data]]
    if not isinstance(data, list) or not data:
        raise ValidationError(f"{name} must be a non-empty JSON array of rows")
    width = None
    for i, row in enumerate(data):
        if not isinstance(row, list):
            raise ValidationError(f"{name} row {i} is not an array")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ValidationError(f"{name} is not rectangular: row {i} has {len(row)} entries, row 0 has {width}")
        for j, v in enumerate(row):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValidationError(f"{name}[{i}][{j}] is not a number: {v!r}")
            if not math.isfinite(v):
                raise ValidationError(f"{name}[{i}][{j}] is not finite: {v!r}")
    if not width:
        raise ValidationError(f"{name} has empty rows")
    if square and width != len(data):
        raise ValidationError(f"{name} must be square, got {len(data)}x{width}")
    return np.array(data, dtype=float)


def load_matrix(value, name: str = "matrix", square: bool = True) -> np.ndarray:
    """A matrix given inline (JSON text or already-parsed list) or as a path to a JSON file."""
    if isinstance(value, (list, int, float)):
        return parse_matrix(value, name, square)
    text = str(value).strip()
    if text.startswith("["):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{name}: malformed JSON ({exc.msg})") from None
        M = parse_matrix(data, name, square)
        if max(M.shape) > INLINE_MAX_DIM:
            raise ValidationError(
                f"{name}: inline matrices are limited to dimension {INLINE_MAX_DIM}; pass a JSON file path"
            )
        return M
    return parse_matrix(read_json(text), name, square)


def read_json(path) -> object:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from None


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    _atomic_write(path, dumps_json(obj))
    return path


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-trip representation
    return str(v)


def write_csv(path, rows: Iterable[Mapping], fieldnames) -> Path:
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fieldnames)
    for row in rows:
        w.writerow([_cell(row[k]) for k in fieldnames])
    _atomic_write(path, buf.getvalue())
    return path

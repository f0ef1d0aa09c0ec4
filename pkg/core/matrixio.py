"""Matrix CSV and JSON files. Every write goes to a temp file in the target
directory and is moved into place with os.replace."""
import json
import math
import os
import tempfile

import numpy as np
import pandas as pd

from core.exceptions import DataFormatError


def atomic_write_text(path, text):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix='.covlap-', suffix='.tmp', dir=directory)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def format_matrix(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return ''.join(','.join(repr(float(x)) for x in row) + '\n' for row in a)


def write_matrix_csv(path, a):
    atomic_write_text(path, format_matrix(a))


def read_matrix_csv(path):
    try:
        frame = pd.read_csv(path, header=None, dtype=float)
    except FileNotFoundError as e:
        raise DataFormatError("file not found", path) from e
    except pd.errors.EmptyDataError as e:
        raise DataFormatError("file is empty", path) from e
    except (ValueError, pd.errors.ParserError) as e:
        raise DataFormatError(f"not a numeric CSV matrix: {e}", path) from e
    missing = frame.isna().any(axis=1).to_numpy()
    if missing.any():
        raise DataFormatError("missing or empty values", path, int(np.flatnonzero(missing)[0]) + 1)
    return frame.to_numpy(dtype=float)


def _finite_or_none(value):
    if isinstance(value, dict):
        return {str(k): _finite_or_none(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite_or_none(v) for v in value]
    if isinstance(value, np.ndarray):
        return _finite_or_none(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def dumps_json(payload):
    return json.dumps(_finite_or_none(payload), indent=2, allow_nan=False) + '\n'


def write_json(path, payload):
    atomic_write_text(path, dumps_json(payload))

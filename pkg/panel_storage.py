"""
File storage for model specs, matrices, panels and reports
Every write goes through a temporary sibling file, so a failure never leaves partial output
"""

import json
import logging
import os
import tempfile
import threading
from typing import Callable, Dict, Sequence, TextIO

import numpy as np
import pandas as pd

from dynamic_model import ModelSpec
from exceptions import InvalidInputError, ReportIOError
from linalg_core import as_matrix
from simulator import TrajectoryPanel

logger = logging.getLogger(__name__)

_write_lock = threading.Lock()  # output writes are serialized


def _default_file_mode() -> int:
    """Permissions open() would give a new file under the current umask"""
    umask = os.umask(0)
    os.umask(umask)
    return 0o666 & ~umask


# mkstemp creates 0600 files and os.replace keeps that mode
_FILE_MODE = _default_file_mode()


def _atomic_write(path: str, writer: Callable[[TextIO], None]) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    with _write_lock:
        try:
            os.makedirs(directory, exist_ok=True)
            fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
        except OSError as e:
            raise ReportIOError(f"Cannot write ({e.strerror or e})", path)

        try:
            with os.fdopen(fd, 'w', encoding='utf-8', newline='') as handle:
                writer(handle)
            os.chmod(tmp_path, _FILE_MODE)
            os.replace(tmp_path, path)
        except OSError as e:
            raise ReportIOError(f"Cannot write ({e.strerror or e})", path)
        finally:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)

    logger.debug("Wrote %s", path)
    return path


def write_json(data: Dict, path: str) -> str:
    """Write a JSON document (two-space indent, trailing newline)"""
    def dump(handle):
        json.dump(data, handle, indent=2, ensure_ascii=False)
        handle.write("\n")
    return _atomic_write(path, dump)


def write_frame_csv(frame: pd.DataFrame, path: str) -> str:
    """Comma separated, '.' decimals, LF line endings, no index column"""
    return _atomic_write(path, lambda handle: frame.to_csv(handle, index=False, lineterminator="\n"))


def read_json(path: str):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"Malformed JSON in {path}: {e}")
    except OSError as e:
        raise ReportIOError(f"Cannot read ({e.strerror or e})", path)


def load_model_spec(path: str) -> ModelSpec:
    """Read a ModelSpec from its JSON object form"""
    return ModelSpec.from_dict(read_json(path))


def load_matrix(path: str, keys: Sequence[str] = ('b',)) -> np.ndarray:
    """
    Read a matrix stored either as a bare nested array or under one of `keys`
    of a JSON object
    """
    data = read_json(path)
    if isinstance(data, dict):
        for key in keys:
            if key in data:
                return as_matrix(data[key], key)
        raise InvalidInputError(f"{path} holds an object without any of the fields {list(keys)}")
    return as_matrix(data, os.path.basename(path))


def save_panel_csv(panel: TrajectoryPanel, path: str) -> str:
    return write_frame_csv(panel.to_frame(), path)


def load_panel_csv(path: str) -> TrajectoryPanel:
    """Rebuild a panel from the long CSV format written by save_panel_csv"""
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise InvalidInputError(f"Malformed panel CSV {path}: {e}")
    except OSError as e:
        raise ReportIOError(f"Cannot read ({e.strerror or e})", path)

    columns = list(frame.columns)
    item_columns = columns[2:]
    expected = ['subject', 'wave'] + [f"item_{i}" for i in range(1, len(item_columns) + 1)]
    if columns != expected or not item_columns:
        raise InvalidInputError(f"Panel CSV {path} must have header subject,wave,item_1..item_p")

    subjects = np.sort(frame['subject'].unique())
    waves = np.sort(frame['wave'].unique())
    if (len(frame) != len(subjects) * len(waves)
            or frame.duplicated(['subject', 'wave']).any()
            or not np.array_equal(waves, np.arange(len(waves)))):
        raise InvalidInputError(f"Panel CSV {path} must hold every wave 0..T-1 exactly once per subject")

    try:
        values = frame.sort_values(['subject', 'wave'])[item_columns].to_numpy(dtype=float)
    except ValueError as e:
        raise InvalidInputError(f"Panel CSV {path} has non-numeric item values: {e}")
    if not np.all(np.isfinite(values)):
        raise InvalidInputError(f"Panel CSV {path} contains missing or infinite values")

    return TrajectoryPanel(observations=values.reshape(len(subjects), len(waves), len(item_columns)))

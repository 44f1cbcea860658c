import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from errors import DataFormatError
from evidential import EvidentialPartition, partition_table
from losses import ConstraintSet, LabelSet

log = logging.getLogger(__name__)

# --- Constants ---
FLOAT_FORMAT = "%.12g"
CONSTRAINT_TYPES = {"ML", "CL"}


# --- Readers ---

def _read_csv(path, header: Optional[int]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataFormatError("File not found", str(path))
    try:
        return pd.read_csv(path, header=header, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        if header is None:
            return pd.DataFrame()
        raise DataFormatError("File is empty (a header row is required)", str(path))
    except pd.errors.ParserError as e:
        raise DataFormatError(f"Could not parse CSV: {e}", str(path))


def _numeric(frame: pd.DataFrame, path, first_line: int) -> np.ndarray:
    """All-numeric conversion; the first bad cell is reported with its 1-based line."""
    converted = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(converted)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataFormatError(
            f"Non-numeric or missing value {frame.iat[row, col]!r} in column {col + 1}",
            str(path), int(row) + first_line
        )
    return converted


def read_attributes(path) -> Tuple[np.ndarray, list]:
    """
    Reads an attribute CSV with a header row, one row per object.

    Returns:
        (n x d matrix, column names). A file with only a header gives n = 0.
    """
    frame = _read_csv(path, header=0)
    X = _numeric(frame, path, first_line=2)
    log.info(f"Loaded {X.shape[0]} objects with {X.shape[1]} attributes from {path}")
    return X, list(frame.columns)


def read_matrix(path) -> np.ndarray:
    """Headerless numeric CSV (e.g. dissimilarity rows of new objects)."""
    frame = _read_csv(path, header=None)
    if frame.empty:
        return np.zeros((0, 0))
    return _numeric(frame, path, first_line=1)


def _integral(values: np.ndarray, path, first_line: int, what: str) -> np.ndarray:
    fractional = np.flatnonzero(np.any(values != np.round(values), axis=1))
    if fractional.size:
        row = int(fractional[0])
        raise DataFormatError(f"{what} must be integers, got {values[row].tolist()}", str(path), row + first_line)
    return values.astype(np.int64)


def _triplets_to_square(values: np.ndarray, path) -> np.ndarray:
    idx = values[:, :2]
    if np.any(idx != np.round(idx)) or np.any(idx < 1):
        line = int(np.argwhere((idx != np.round(idx)) | (idx < 1))[0][0]) + 1
        raise DataFormatError("Triplet indices must be positive integers (1-based)", str(path), line)
    i = idx[:, 0].astype(np.int64) - 1
    j = idx[:, 1].astype(np.int64) - 1
    n = int(max(i.max(), j.max())) + 1
    D = np.full((n, n), np.nan)
    np.fill_diagonal(D, 0.0)
    D[i, j] = values[:, 2]
    D = np.where(np.isnan(D), D.T, D)
    missing = np.argwhere(np.isnan(D))
    if missing.size:
        a, b = missing[0]
        raise DataFormatError(f"Triplet file has no dissimilarity for pair ({a + 1}, {b + 1})", str(path))
    return D


def read_dissimilarities(path) -> np.ndarray:
    """
    Reads a square dissimilarity CSV (no header) or a triplet CSV with rows
    (i, j, delta), 1-based. Triplets must cover every pair in at least one
    direction; the other direction is mirrored.
    """
    values = read_matrix(path)
    if values.size == 0:
        raise DataFormatError("Dissimilarity file is empty", str(path))
    # a 3 x 3 file is a matrix only when its diagonal is zero; otherwise it holds three triplets
    if values.shape[1] == 3 and (values.shape[0] != 3 or np.any(np.diag(values) != 0)):
        D = _triplets_to_square(values, path)
    elif values.shape[0] == values.shape[1]:
        D = values
        nonzero = np.flatnonzero(np.diag(D))
        if nonzero.size:
            raise DataFormatError(
                f"Diagonal entry {D[nonzero[0], nonzero[0]]!r} is not zero", str(path), int(nonzero[0]) + 1
            )
    else:
        raise DataFormatError(
            f"Expected a square matrix or (i, j, delta) triplets, got shape {values.shape}", str(path)
        )
    if np.any(D < 0):
        row = int(np.argwhere(D < 0)[0][0]) + 1
        raise DataFormatError("Dissimilarities must be nonnegative", str(path), row)
    log.info(f"Loaded {D.shape[0]} x {D.shape[1]} dissimilarity matrix from {path}")
    return D


def _has_header(frame: pd.DataFrame) -> bool:
    first = str(frame.iat[0, 0]).strip()
    return not first.lstrip("+-").isdigit()


def read_constraints(path) -> ConstraintSet:
    """Rows (i, j, ML|CL) with 1-based indices; an optional header row is skipped."""
    frame = _read_csv(path, header=None)
    if frame.empty:
        return ConstraintSet()
    first_line = 1
    if _has_header(frame):
        frame = frame.iloc[1:].reset_index(drop=True)
        first_line = 2
    if frame.shape[1] != 3:
        raise DataFormatError(f"Constraint rows need 3 fields (i, j, type), got {frame.shape[1]}", str(path))
    idx = _numeric(frame.iloc[:, :2], path, first_line)
    kinds = frame.iloc[:, 2].astype(str).str.strip().str.upper()
    for row, kind in enumerate(kinds):
        if kind not in CONSTRAINT_TYPES:
            raise DataFormatError(f"Unknown constraint type {kind!r} (expected ML or CL)", str(path), row + first_line)
    pairs = _integral(idx, path, first_line, "Object indices") - 1
    ml = pairs[(kinds == "ML").to_numpy()]
    cl = pairs[(kinds == "CL").to_numpy()]
    log.info(f"Loaded {len(ml)} must-link and {len(cl)} cannot-link constraints from {path}")
    return ConstraintSet(must_link=ml, cannot_link=cl)


def read_labels(path) -> LabelSet:
    """Rows (i, y): 1-based object index and 1-based class."""
    frame = _read_csv(path, header=None)
    if frame.empty:
        return LabelSet(indices=[], classes=[])
    first_line = 1
    if _has_header(frame):
        frame = frame.iloc[1:].reset_index(drop=True)
        first_line = 2
    if frame.shape[1] != 2:
        raise DataFormatError(f"Label rows need 2 fields (i, y), got {frame.shape[1]}", str(path))
    values = _integral(_numeric(frame, path, first_line), path, first_line, "Object indices and classes")
    log.info(f"Loaded {values.shape[0]} labeled objects from {path}")
    return LabelSet(indices=values[:, 0] - 1, classes=values[:, 1])


def read_truth(path) -> np.ndarray:
    """One ground-truth label per line (last column when there are several)."""
    frame = _read_csv(path, header=None)
    if frame.empty:
        raise DataFormatError("Ground-truth file is empty", str(path))
    return frame.iloc[:, -1].astype(str).str.strip().to_numpy()


def read_partition(path) -> pd.DataFrame:
    frame = _read_csv(path, header=0)
    if "label" not in frame.columns:
        raise DataFormatError("Partition file has no 'label' column", str(path))
    return frame


# --- Writers ---

def write_partition(ep: EvidentialPartition, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    partition_table(ep).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    log.info(f"Partition of {ep.n} objects written to {path}")
    return path


def write_table(table: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_json(data: Dict[str, Any], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
    log.debug(f"Wrote {path}")
    return path

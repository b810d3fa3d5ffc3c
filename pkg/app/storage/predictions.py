"""
Reading and writing prediction files.

Two formats are supported:

- CSV with the header `membership,label,p_0,...,p_{k-1}` and an optional `id`
  column anywhere in the header. Membership is one of m, n, u.
- JSON Lines, one object per line: {"membership": "n", "label": 0, "probs": [1.0, 0.0]}
  with an optional "id" key.

Probabilities are parsed with correctly rounded decimal conversion so that a
value written by `save_predictions` reads back bit-identical.
"""
import csv
import logging
import re
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from app.core.errors import ClassCountMismatch, InvariantViolation, ParseError, UsageError
from app.core.metrics import (
    PROB_SUM_TOLERANCE,
    Membership,
    PredictionRecord,
    PredictionSet,
    check_prediction_arrays,
)

CSV = "csv"
JSONL = "jsonl"
FORMATS = (CSV, JSONL)
_EXTENSIONS = {".csv": CSV, ".jsonl": JSONL, ".ndjson": JSONL}

CHUNK_SIZE = 50_000
_MEMBERSHIP_CODES = {tag.value: tag.code for tag in Membership}


def detect_format(path: Path, fmt: Optional[str] = None) -> str:
    if fmt is not None:
        if fmt not in FORMATS:
            raise UsageError(f"unknown prediction format '{fmt}', expected one of {', '.join(FORMATS)}")
        return fmt
    detected = _EXTENSIONS.get(Path(path).suffix.lower())
    if detected is None:
        raise UsageError(f"cannot tell the format of '{path}' from its extension; pass --format")
    return detected


# --- CSV ---
def _probability_columns(columns: List[str]) -> int:
    if "membership" not in columns or "label" not in columns:
        raise ParseError("header must contain 'membership' and 'label' columns", line=1)
    prob_columns = [c for c in columns if c.startswith("p_")]
    expected = [f"p_{i}" for i in range(len(prob_columns))]
    if prob_columns != expected:
        raise ParseError(f"probability columns must be p_0..p_{{k-1}} in order, got {prob_columns}", line=1)
    unknown = set(columns) - set(expected) - {"membership", "label", "id"}
    if unknown:
        raise ParseError(f"unexpected columns {sorted(unknown)}", line=1)
    if len(prob_columns) < 2:
        raise ParseError("at least two probability columns are required", line=1)
    return len(prob_columns)


def _parse_floats(column: pd.Series, name: str, first_line: int) -> np.ndarray:
    try:
        return column.to_numpy(dtype=str).astype(np.float64)
    except ValueError:
        for offset, cell in enumerate(column):
            try:
                float(cell)
            except (TypeError, ValueError):
                raise ParseError(f"column {name}: '{cell}' is not a number", line=first_line + offset)
        raise


def _parse_labels(column: pd.Series, first_line: int) -> np.ndarray:
    labels = np.empty(len(column), dtype=np.int64)
    for offset, cell in enumerate(column):
        try:
            labels[offset] = int(cell)
        except (TypeError, ValueError):
            raise ParseError(f"label '{cell}' is not an integer", line=first_line + offset)
    return labels


def _parse_membership(column: pd.Series, first_line: int) -> np.ndarray:
    codes = np.empty(len(column), dtype=np.int8)
    for offset, cell in enumerate(column):
        code = _MEMBERSHIP_CODES.get(cell)
        if code is None:
            raise ParseError(f"membership '{cell}' is not one of m, n, u", line=first_line + offset)
        codes[offset] = code
    return codes


def _first_undecodable_line(path: Path) -> Optional[int]:
    with open(path, "rb") as handle:
        for line_number, raw in enumerate(handle, start=1):
            try:
                raw.decode("utf-8")
            except UnicodeDecodeError:
                return line_number
    return None


def _first_long_row(path: Path, error: Exception) -> Optional[int]:
    """Line of the first row with more fields than the header, as the tokenizer sees it."""
    with open(path, "r", encoding="utf-8", errors="replace", newline="") as handle:
        reader = csv.reader(handle)
        width = len(next(reader, []))
        for row in reader:
            if len(row) > width:
                return reader.line_num
    found = re.search(r"line (\d+)", str(error))
    return int(found.group(1)) if found else None


def _read_csv(path: Path, tolerance: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, Optional[List[str]]]:
    try:
        return _read_csv_chunks(path, tolerance)
    except UnicodeDecodeError:
        raise ParseError("not valid UTF-8 text", line=_first_undecodable_line(path))
    except pd.errors.ParserError as error:
        raise ParseError(f"malformed CSV: {error}", line=_first_long_row(path, error))


def _read_csv_chunks(path: Path, tolerance: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, Optional[List[str]]]:
    try:
        columns = list(pd.read_csv(path, nrows=0).columns)
    except pd.errors.EmptyDataError:
        raise ParseError(f"'{path}' is empty", line=1)
    k = _probability_columns(columns)
    prob_columns = [f"p_{i}" for i in range(k)]
    has_ids = "id" in columns

    probs, labels, membership, ids = [], [], [], []
    reader = pd.read_csv(
        path, dtype=str, keep_default_na=False, skip_blank_lines=False, chunksize=CHUNK_SIZE
    )
    # Header is line 1.
    line, offset = 2, 0
    for chunk in reader:
        if chunk.empty:
            continue
        chunk_probs = np.column_stack([_parse_floats(chunk[c], c, line) for c in prob_columns])
        chunk_labels = _parse_labels(chunk["label"], line)
        chunk_ids = chunk["id"].tolist() if has_ids else [str(offset + i) for i in range(len(chunk))]
        row_names = [f"{row_id} (line {line + i})" for i, row_id in enumerate(chunk_ids)]
        check_prediction_arrays(chunk_probs, chunk_labels, row_names, tolerance)
        membership.append(_parse_membership(chunk["membership"], line))
        probs.append(chunk_probs)
        labels.append(chunk_labels)
        if has_ids:
            ids.extend(chunk_ids)
        line += len(chunk)
        offset += len(chunk)

    if not probs:
        raise ParseError(f"'{path}' contains no records", line=2)
    return np.concatenate(probs), np.concatenate(labels), np.concatenate(membership), (ids if has_ids else None)


# --- JSON Lines ---
class JsonlRow(BaseModel):
    membership: Membership
    label: int
    probs: List[float]
    id: Optional[str] = None


def _read_jsonl(path: Path, tolerance: float) -> List[PredictionRecord]:
    records: List[PredictionRecord] = []
    with open(path, "rb") as handle:
        for line_number, raw in enumerate(handle, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError:
                raise ParseError("not valid UTF-8 text", line=line_number)
            if not line.strip():
                continue
            try:
                row = JsonlRow.model_validate_json(line)
            except ValidationError as error:
                raise ParseError(str(error.errors()[0]["msg"]), line=line_number)
            row_id = row.id if row.id is not None else str(len(records))
            try:
                record = PredictionRecord.model_validate(row.model_dump(), context={"tolerance": tolerance})
            except ValidationError as error:
                raise InvariantViolation(str(error.errors()[0]["msg"]), f"{row_id} (line {line_number})")
            if records and record.num_classes != records[0].num_classes:
                raise InvariantViolation(
                    f"expected {records[0].num_classes} classes, got {record.num_classes}",
                    f"{row_id} (line {line_number})",
                )
            records.append(record)
    return records


def load_predictions(
    path: Union[str, Path],
    fmt: Optional[str] = None,
    num_classes: Optional[int] = None,
    tolerance: float = PROB_SUM_TOLERANCE,
) -> PredictionSet:
    """
    Read a prediction file into a PredictionSet.

    Args:
        path: CSV or JSONL file
        fmt: 'csv' or 'jsonl'; detected from the extension when None
        num_classes: expected class count, checked against the file when given
        tolerance: allowed deviation of each probability vector's sum from 1

    Raises:
        ParseError: the file is malformed (with its line number)
        InvariantViolation: a record breaks a prediction invariant (with its row id)
    """
    path = Path(path)
    fmt = detect_format(path, fmt)
    if not path.is_file():
        raise ParseError(f"prediction file '{path}' does not exist")

    if fmt == CSV:
        probs, labels, membership, ids = _read_csv(path, tolerance)
        predictions = PredictionSet(
            probs=probs,
            labels=labels,
            membership=membership,
            ids=tuple(ids) if ids is not None else None,
            tolerance=tolerance,
        )
    else:
        records = _read_jsonl(path, tolerance)
        if not records:
            raise ParseError(f"'{path}' contains no records")
        predictions = PredictionSet.from_records(records, tolerance=tolerance)

    if num_classes is not None and predictions.num_classes != num_classes:
        raise ClassCountMismatch(f"'{path}' has {predictions.num_classes} classes, expected {num_classes}")
    logging.info(
        f"Loaded {len(predictions)} records from {path}: {predictions.n_member} members, "
        f"{predictions.n_nonmember} non-members, {predictions.num_classes} classes"
    )
    logging.info(f"Class histogram: {predictions.class_counts()}")
    return predictions


def save_predictions(predictions: PredictionSet, path: Union[str, Path], fmt: Optional[str] = None) -> Path:
    """Write predictions in a format `load_predictions` reads back unchanged. Ids are written only if present."""
    path = Path(path)
    fmt = detect_format(path, fmt)
    path.parent.mkdir(parents=True, exist_ok=True)
    tags = [Membership.from_code(code).value for code in predictions.membership]

    if fmt == CSV:
        frame = pd.DataFrame(predictions.probs, columns=[f"p_{i}" for i in range(predictions.num_classes)])
        frame.insert(0, "label", predictions.labels)
        frame.insert(0, "membership", tags)
        if predictions.ids is not None:
            frame.insert(0, "id", list(predictions.ids))
        frame.to_csv(path, index=False, lineterminator="\n")
    else:
        with open(path, "w", encoding="utf-8") as handle:
            for index in range(len(predictions)):
                row = JsonlRow(
                    membership=tags[index],
                    label=int(predictions.labels[index]),
                    probs=[float(p) for p in predictions.probs[index]],
                    id=predictions.ids[index] if predictions.ids is not None else None,
                )
                handle.write(row.model_dump_json(exclude_none=True) + "\n")
    logging.info(f"Wrote {len(predictions)} records to {path}")
    return path

"""
JSON and CSV persistence for learned and computed artifacts: threshold
tables, class-conditional models, benchmark suites, reports and risk scores.
"""
import logging
from pathlib import Path
from typing import List, Optional, Type, TypeVar, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError

from app.core.errors import ParseError
from app.core.metrics import Membership, MetricKind
from app.core.riskscore import ClassConditionalModel, RiskScoreTable
from app.core.thresholds import ThresholdTable

Artifact = TypeVar("Artifact", bound=BaseModel)
PathLike = Union[str, Path]


def save_artifact(artifact: BaseModel, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(artifact.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logging.info(f"Saved {type(artifact).__name__} to {path}")
    return path


def load_artifact(model: Type[Artifact], path: PathLike) -> Artifact:
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"artifact file '{path}' does not exist")
    try:
        return model.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as error:
        raise ParseError(f"'{path}' is not a valid {model.__name__}: {error.errors()[0]['msg']}")


def load_threshold_table(path: PathLike) -> ThresholdTable:
    return load_artifact(ThresholdTable, path)


def load_conditional_model(path: PathLike) -> ClassConditionalModel:
    return load_artifact(ClassConditionalModel, path)


# --- Risk scores ---
class RiskScoreRow(BaseModel):
    id: str
    label: int
    value: float
    risk_score: float
    membership: Membership


class RiskScoreDocument(BaseModel):
    """JSON form of a RiskScoreTable."""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    metric: MetricKind
    p_train: float
    rows: List[RiskScoreRow]

    @classmethod
    def from_table(cls, table: RiskScoreTable) -> "RiskScoreDocument":
        return cls(
            metric=table.metric,
            p_train=table.p_train,
            rows=[
                RiskScoreRow(
                    id=table.ids[i],
                    label=int(table.labels[i]),
                    value=float(table.values[i]),
                    risk_score=float(table.scores[i]),
                    membership=Membership.from_code(table.membership[i]),
                )
                for i in range(len(table))
            ],
        )

    def to_table(self) -> RiskScoreTable:
        return RiskScoreTable(
            ids=tuple(row.id for row in self.rows),
            labels=np.array([row.label for row in self.rows], dtype=np.int64),
            values=np.array([row.value for row in self.rows], dtype=np.float64),
            scores=np.array([row.risk_score for row in self.rows], dtype=np.float64),
            membership=np.array([row.membership.code for row in self.rows], dtype=np.int8),
            metric=self.metric,
            p_train=self.p_train,
        )


def _value_column(metric: MetricKind) -> str:
    return metric.short_name.lower()


def save_risk_scores(table: RiskScoreTable, path: PathLike) -> Path:
    """
    Write risk scores as JSON (.json) or CSV (anything else). The CSV has the
    columns id, label, <metric short name>, risk_score, membership; the
    training prior is only kept in the JSON form.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        return save_artifact(RiskScoreDocument.from_table(table), path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "id": list(table.ids),
            "label": table.labels,
            _value_column(table.metric): table.values,
            "risk_score": table.scores,
            "membership": [Membership.from_code(code).value for code in table.membership],
        }
    )
    frame.to_csv(path, index=False, lineterminator="\n")
    logging.info(f"Saved {len(table)} risk scores to {path}")
    return path


def load_risk_scores(path: PathLike, p_train: Optional[float] = None) -> RiskScoreTable:
    """Read risk scores written by `save_risk_scores`. `p_train` applies to CSV input only."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return load_artifact(RiskScoreDocument, path).to_table()
    if not path.is_file():
        raise ParseError(f"risk score file '{path}' does not exist")

    try:
        frame = pd.read_csv(
            path, dtype={"id": str, "membership": str}, keep_default_na=False, float_precision="round_trip"
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as error:
        raise ParseError(f"'{path}' is not a readable risk score file: {error}")
    metrics = [kind for kind in MetricKind if kind.is_thresholded and _value_column(kind) in frame.columns]
    missing = {"id", "label", "risk_score", "membership"} - set(frame.columns)
    if missing or len(metrics) != 1:
        raise ParseError(f"'{path}' is not a risk score file (columns {list(frame.columns)})", line=1)
    metric = metrics[0]
    codes = {tag.value: tag.code for tag in Membership}
    unknown = ~frame["membership"].isin(list(codes))
    if unknown.any():
        raise ParseError(f"invalid membership '{frame['membership'][unknown].iloc[0]}'", line=int(np.argmax(unknown)) + 2)
    try:
        labels = frame["label"].to_numpy(dtype=np.int64)
        values = frame[_value_column(metric)].to_numpy(dtype=np.float64)
        scores = frame["risk_score"].to_numpy(dtype=np.float64)
    except (TypeError, ValueError) as error:
        raise ParseError(f"non-numeric risk score column: {error}")
    return RiskScoreTable(
        ids=tuple(frame["id"]),
        labels=labels,
        values=values,
        scores=scores,
        membership=frame["membership"].map(codes).to_numpy(dtype=np.int8),
        metric=metric,
        p_train=p_train if p_train is not None else 0.5,
    )

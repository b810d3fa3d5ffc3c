import os
from pathlib import Path
from typing import Any, List, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator

from app.core.metrics import PROB_SUM_TOLERANCE, MetricKind
from app.core.riskscore import POOLED_SMOOTHING, SMOOTHING_MODES, Priors

# Every field can be overridden by an environment variable, e.g. MIAUDIT_BINS=30.
ENV_PREFIX = "MIAUDIT_"
DEFAULT_RISK_THRESHOLDS = (1.0, 0.9, 0.8, 0.7, 0.6, 0.5)
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class AuditConfig(BaseModel):
    """
    Settings shared by every stage of the audit pipeline.
    Precedence: explicit overrides (CLI flags) > environment (.env included) > defaults.
    """
    metric: MetricKind = MetricKind.MODIFIED_ENTROPY
    bins: int = Field(20, ge=2)
    pseudo_count: float = Field(1.0, ge=0.0)
    smoothing: str = POOLED_SMOOTHING
    min_class_support: int = Field(5, ge=1)
    p_train: float = Field(0.5, gt=0.0, lt=1.0)
    calibration_bins: int = Field(20, ge=2)
    risk_thresholds: List[float] = Field(default_factory=lambda: list(DEFAULT_RISK_THRESHOLDS))
    clamp_quantile: float = Field(99.5, gt=0.0, le=100.0)
    balanced: bool = False
    prob_tolerance: float = Field(PROB_SUM_TOLERANCE, gt=0.0)
    seed: int = 0
    workers: int = Field(1, ge=1)
    log_level: str = "INFO"
    num_classes: Optional[int] = Field(None, ge=2)
    shadow_path: Optional[Path] = None
    target_path: Optional[Path] = None
    out_path: Optional[Path] = None

    @field_validator("risk_thresholds", mode="before")
    @classmethod
    def _split_thresholds(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @field_validator("risk_thresholds")
    @classmethod
    def _check_thresholds(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("at least one risk threshold is required")
        if any(not 0.0 <= t <= 1.0 for t in value):
            raise ValueError("risk thresholds must lie in [0, 1]")
        return value

    @field_validator("smoothing")
    @classmethod
    def _check_smoothing(cls, value: str) -> str:
        mode = value.strip().lower()
        if mode not in SMOOTHING_MODES:
            raise ValueError(f"unknown smoothing '{value}', expected one of {', '.join(SMOOTHING_MODES)}")
        return mode

    @field_validator("log_level")
    @classmethod
    def _check_log_level(cls, value: str) -> str:
        level = value.upper()
        if level not in LOG_LEVELS:
            raise ValueError(f"unknown log level '{value}'")
        return level

    @property
    def priors(self) -> Priors:
        return Priors(p_train=self.p_train)

    @classmethod
    def from_env(cls, **overrides: Any) -> "AuditConfig":
        """
        Build a config from MIAUDIT_* environment variables, then apply overrides.
        Overrides set to None are ignored so unset CLI flags keep the env/default value.
        """
        load_dotenv()
        values = {}
        for name in cls.model_fields:
            raw = os.getenv(f"{ENV_PREFIX}{name.upper()}")
            if raw:
                values[name] = raw
        values.update({name: value for name, value in overrides.items() if value is not None})
        return cls.model_validate(values)

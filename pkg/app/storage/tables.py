"""
Tabular output: aligned text for the terminal, CSV for downstream tools and
whitespace-separated data files that gnuplot can plot directly.
"""
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import pandas as pd

from app.core.attacks import AttackVariant, BenchmarkSuite
from app.core.metrics import MetricKind
from app.core.report import RiskGeneralizationReport, SweepResult
from app.core.riskscore import CalibrationCurve, PrecisionRecallPoint

PathLike = Union[str, Path]
UNDEFINED = "N.A."
BENCHMARK_COLUMNS = [MetricKind.CORRECTNESS, MetricKind.CONFIDENCE, MetricKind.ENTROPY, MetricKind.MODIFIED_ENTROPY]


def format_percent(value: Optional[float]) -> str:
    return UNDEFINED if value is None else f"{100.0 * value:.1f}%"


def render(frame: pd.DataFrame) -> str:
    return frame.to_string(index=False) + "\n"


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    logging.info(f"Wrote {len(frame)} rows to {path}")
    return path


def write_plot_data(path: PathLike, columns: Sequence[str], rows: Iterable[Sequence[float]]) -> Path:
    """Whitespace-separated columns under a '#' header line, one row per point."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# " + " ".join(columns)]
    lines.extend(" ".join(repr(float(value)) for value in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logging.info(f"Wrote plot data to {path}")
    return path


# --- Benchmark attacks ---
def benchmark_frame(suite: BenchmarkSuite) -> pd.DataFrame:
    """One row per thresholding variant: target train/test accuracy and every attack's accuracy."""
    correctness = suite.report(MetricKind.CORRECTNESS)
    rows = []
    for variant in (AttackVariant.CLASS_DEPENDENT, AttackVariant.CLASS_INDEPENDENT):
        row = {
            "thresholds": variant.value,
            "train acc": format_percent(suite.train_accuracy),
            "test acc": format_percent(suite.test_accuracy),
        }
        for metric in BENCHMARK_COLUMNS:
            report = correctness if metric is MetricKind.CORRECTNESS else suite.report(metric, variant)
            row[report.name] = format_percent(report.accuracy)
        rows.append(row)
    return pd.DataFrame(rows)


def attack_detail_frame(suite: BenchmarkSuite) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "attack": report.name,
                "variant": report.variant.value,
                "accuracy": report.accuracy,
                "precision": report.precision,
                "recall": report.recall,
                "n_member": report.n_member,
                "n_nonmember": report.n_nonmember,
            }
            for report in suite.reports
        ]
    )


def render_benchmark(suite: BenchmarkSuite) -> str:
    detail = attack_detail_frame(suite)
    for column in ("accuracy", "precision", "recall"):
        detail[column] = [format_percent(value) for value in detail[column]]
    return render(benchmark_frame(suite)) + "\n" + render(detail)


# --- Risk scores ---
def calibration_frame(curve: CalibrationCurve) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in curve.rows])


def precision_recall_frame(points: Sequence[PrecisionRecallPoint]) -> pd.DataFrame:
    return pd.DataFrame([point.model_dump() for point in points])


def render_precision_recall(points: Sequence[PrecisionRecallPoint]) -> str:
    frame = pd.DataFrame(
        [
            {
                "threshold": point.threshold,
                "precision": format_percent(point.precision),
                "recall": format_percent(point.recall),
                "n_predicted": point.n_predicted,
            }
            for point in points
        ]
    )
    return render(frame)


def cdf_frame(points: Sequence[Tuple[float, float]]) -> pd.DataFrame:
    return pd.DataFrame(points, columns=["risk_score", "cumulative_fraction"])


def correlation_frame(report: RiskGeneralizationReport) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in report.rows])


def leakage_frame(distances: dict) -> pd.DataFrame:
    return pd.DataFrame(sorted(distances.items()), columns=["p_train", "leakage_distance"])


# --- Sweep ---
def sweep_frame(result: SweepResult) -> pd.DataFrame:
    frame = pd.DataFrame([row.model_dump() for row in result.rows])
    frame["closest"] = frame["epoch"] == result.closest_epoch
    return frame


def render_sweep(result: SweepResult) -> str:
    rows: List[dict] = [
        {
            "epoch": row.epoch,
            "train acc": format_percent(row.train_accuracy),
            "test acc": format_percent(row.test_accuracy),
            "best attack": row.best_attack,
            "attack acc": format_percent(row.best_attack_accuracy),
            "shadow": row.shadow_pairing,
        }
        for row in result.rows
    ]
    text = render(pd.DataFrame(rows))
    if result.closest_epoch is not None:
        text += (
            f"\nclosest epoch to reference test accuracy {format_percent(result.reference_accuracy)}: "
            f"{result.closest_epoch}\n"
        )
    return text

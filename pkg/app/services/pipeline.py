"""
The audit pipeline: one method per CLI subcommand.

Each method loads its inputs, runs the core analysis, writes any requested
files and returns the text meant for stdout. Diagnostics go to the log.
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from app.core.attacks import run_benchmark_suite
from app.core.config import AuditConfig
from app.core.errors import FewerThanTwoClasses, UsageError
from app.core.metrics import MetricKind, PredictionSet
from app.core.report import EpochSnapshot, early_stopping_sweep, per_class_risk_vs_generalization
from app.core.riskscore import (
    ClassConditionalModel,
    RiskScoreTable,
    calibration_curve,
    fit_conditionals,
    fraction_above,
    precision_recall_at_thresholds,
    prior_leakage_distance,
    prior_leakage_sweep,
    risk_cdf,
    risk_histogram,
    score_predictions,
)
from app.core.synth import GeneratorSpec, generate
from app.core.thresholds import ThresholdTable, learn_class_thresholds
from app.storage import tables
from app.storage.artifacts import (
    load_conditional_model,
    load_risk_scores,
    load_threshold_table,
    save_artifact,
    save_risk_scores,
)
from app.storage.predictions import load_predictions, save_predictions

LEAKAGE_PRIORS = (0.1, 0.3, 0.5, 0.7, 0.9)


class AuditPipeline:
    def __init__(self, config: AuditConfig, fmt: Optional[str] = None):
        self.config = config
        self.fmt = fmt

    def load(self, path: Path) -> PredictionSet:
        return load_predictions(
            path, fmt=self.fmt, num_classes=self.config.num_classes, tolerance=self.config.prob_tolerance
        )

    def _require(self, path: Optional[Path], flag: str) -> Path:
        if path is None:
            raise UsageError(f"{flag} is required")
        return path

    # --- thresholds ---
    def learn_thresholds(self, shadow_path: Optional[Path], out_path: Optional[Path]) -> str:
        metric = self.config.metric
        if not metric.is_thresholded:
            raise UsageError(f"{metric.value} attacks have no threshold to learn")
        shadow = self.load(self._require(shadow_path, "--shadow"))
        table = learn_class_thresholds(
            shadow,
            metric,
            min_class_support=self.config.min_class_support,
            balanced=self.config.balanced,
            workers=self.config.workers,
        )
        save_artifact(table, self._require(out_path, "--out"))
        fallbacks = sum(entry.fallback for entry in table.per_class.values())
        return (
            f"{metric.value}: {len(table.per_class)} classes ({fallbacks} on the global threshold), "
            f"global threshold {table.global_threshold!r}, shadow accuracy {tables.format_percent(table.global_accuracy)}\n"
        )

    # --- attack ---
    def attack(
        self,
        shadow_path: Optional[Path],
        target_path: Optional[Path],
        threshold_paths: Sequence[Path] = (),
        json_out: Optional[Path] = None,
        csv_out: Optional[Path] = None,
    ) -> str:
        shadow = self.load(self._require(shadow_path, "--shadow"))
        target = self.load(self._require(target_path, "--target"))
        saved: Dict[MetricKind, ThresholdTable] = {}
        for path in threshold_paths:
            table = load_threshold_table(path)
            saved[table.metric] = table
            logging.info(f"Reusing {table.metric.value} thresholds from {path}")
        suite = run_benchmark_suite(shadow, target, self.config, tables=saved)
        if json_out is not None:
            save_artifact(suite, json_out)
        if csv_out is not None:
            tables.write_csv(tables.attack_detail_frame(suite), csv_out)
        return tables.render_benchmark(suite)

    # --- risk scores ---
    def _fit(self, shadow: PredictionSet) -> ClassConditionalModel:
        return fit_conditionals(
            shadow,
            bins=self.config.bins,
            pseudo_count=self.config.pseudo_count,
            smoothing=self.config.smoothing,
            min_class_support=self.config.min_class_support,
            metric=self.config.metric,
            clamp_quantile=self.config.clamp_quantile,
        )

    def _scored(
        self,
        scores_path: Optional[Path],
        shadow_path: Optional[Path],
        target_path: Optional[Path],
        model_path: Optional[Path] = None,
    ) -> Tuple[RiskScoreTable, Optional[ClassConditionalModel], Optional[PredictionSet]]:
        """Risk scores read from a file, or computed from a shadow (or saved model) and a target."""
        target = self.load(target_path) if target_path is not None else None
        if scores_path is not None:
            return load_risk_scores(scores_path, p_train=self.config.p_train), None, target
        if target is None:
            raise UsageError("pass --scores, or --target with --shadow or --model")
        if model_path is not None:
            model = load_conditional_model(model_path)
        else:
            model = self._fit(self.load(self._require(shadow_path, "--shadow")))
        return score_predictions(target, model, self.config.priors), model, target

    def score(
        self,
        shadow_path: Optional[Path],
        target_path: Optional[Path],
        out_path: Optional[Path],
        model_out: Optional[Path] = None,
        model_path: Optional[Path] = None,
    ) -> str:
        out_path = self._require(out_path, "--out")
        scores, model, _ = self._scored(None, shadow_path, self._require(target_path, "--target"), model_path)
        if model_out is not None:
            save_artifact(model, model_out)
        save_risk_scores(scores, out_path)
        return f"scored {len(scores)} records at p_train={scores.p_train} into {out_path}\n"

    def calibrate(
        self,
        scores_path: Optional[Path] = None,
        shadow_path: Optional[Path] = None,
        target_path: Optional[Path] = None,
        out_path: Optional[Path] = None,
        plot_path: Optional[Path] = None,
    ) -> str:
        scores, _, _ = self._scored(scores_path, shadow_path, target_path)
        curve = calibration_curve(scores, bins=self.config.calibration_bins)
        frame = tables.calibration_frame(curve)
        if out_path is not None:
            tables.write_csv(frame, out_path)
        if plot_path is not None:
            tables.write_plot_data(
                plot_path,
                ["center", "mean_score", "member_fraction"],
                [(row.center, row.mean_score, row.member_fraction) for row in curve.rows],
            )
        return tables.render(frame) + f"\nRMSE over {len(curve.rows)} occupied bins: {curve.rmse:.4f}\n"

    def report(
        self,
        scores_path: Optional[Path] = None,
        shadow_path: Optional[Path] = None,
        target_path: Optional[Path] = None,
        out_dir: Optional[Path] = None,
    ) -> str:
        """
        Members' risk-score distribution, high-confidence precision/recall,
        prior leakage, and (when the target predictions are available) the
        per-class correlation between risk and generalization error.
        """
        scores, model, target = self._scored(scores_path, shadow_path, target_path)
        cdf = risk_cdf(scores)
        points = precision_recall_at_thresholds(scores, self.config.risk_thresholds)
        leakage = prior_leakage_distance(scores)

        sections: List[str] = [
            f"members: {int(scores.is_member.sum())}, median risk score {_median(cdf):.4f}",
            "".join(
                f"members above {cutoff}: {tables.format_percent(fraction_above(scores, cutoff))}\n"
                for cutoff in self.config.risk_thresholds
            ).rstrip("\n"),
            "precision / recall of risk-score thresholds:\n" + tables.render_precision_recall(points).rstrip("\n"),
            f"prior leakage distance at p_train={scores.p_train}: {leakage:.4f}",
        ]

        sweep = None
        if model is not None and target is not None:
            sweep = prior_leakage_sweep(target, model, LEAKAGE_PRIORS)
            sections.append("prior leakage by training prior:\n" + tables.render(tables.leakage_frame(sweep)).rstrip("\n"))

        correlation = None
        if target is not None:
            try:
                correlation = per_class_risk_vs_generalization(target, scores)
            except FewerThanTwoClasses as error:
                logging.warning(f"Skipping the per-class correlation: {error}")
        if correlation is not None:
            pearson = "undefined" if correlation.pearson is None else f"{correlation.pearson:.4f}"
            sections.append(
                f"risk vs. generalization error over {len(correlation.rows)} classes: Pearson r = {pearson}"
                + (f" (skipped classes {correlation.skipped_classes})" if correlation.skipped_classes else "")
            )

        if out_dir is not None:
            out_dir = Path(out_dir)
            tables.write_csv(tables.cdf_frame(cdf), out_dir / "risk_cdf.csv")
            tables.write_plot_data(out_dir / "risk_cdf.dat", ["risk_score", "cumulative_fraction"], cdf)
            tables.write_plot_data(
                out_dir / "risk_histogram.dat",
                ["lower", "upper", "count"],
                risk_histogram(scores, self.config.calibration_bins),
            )
            tables.write_csv(tables.precision_recall_frame(points), out_dir / "precision_recall.csv")
            if sweep is not None:
                tables.write_csv(tables.leakage_frame(sweep), out_dir / "prior_leakage.csv")
            if correlation is not None:
                tables.write_csv(tables.correlation_frame(correlation), out_dir / "risk_vs_generalization.csv")
                save_artifact(correlation, out_dir / "risk_vs_generalization.json")
        return "\n\n".join(sections) + "\n"

    # --- sweep ---
    def sweep(
        self,
        snapshot_paths: Dict[int, Path],
        shadow_path: Optional[Path] = None,
        shadow_paths: Optional[Dict[int, Path]] = None,
        reference_accuracy: Optional[float] = None,
        out_path: Optional[Path] = None,
        plot_path: Optional[Path] = None,
    ) -> str:
        if shadow_path is not None and shadow_paths:
            raise UsageError("pass either a shared --shadow or per-epoch --shadow-snapshot files, not both")
        snapshots = [EpochSnapshot(epoch=epoch, predictions=self.load(path)) for epoch, path in sorted(snapshot_paths.items())]
        if shadow_paths:
            missing = sorted(set(snapshot_paths) ^ set(shadow_paths))
            if missing:
                raise UsageError(f"epochs {missing} lack a snapshot or a shadow dump")
            shadows = [self.load(shadow_paths[snapshot.epoch]) for snapshot in snapshots]
        else:
            shadows = self.load(self._require(shadow_path, "--shadow"))

        result = early_stopping_sweep(snapshots, shadows, reference_accuracy, self.config)
        if out_path is not None:
            tables.write_csv(tables.sweep_frame(result), out_path)
        if plot_path is not None:
            tables.write_plot_data(
                plot_path,
                ["epoch", "train_accuracy", "test_accuracy", "best_attack_accuracy"],
                [
                    (row.epoch, _or_nan(row.train_accuracy), _or_nan(row.test_accuracy), row.best_attack_accuracy)
                    for row in result.rows
                ],
            )
        return tables.render_sweep(result)

    # --- synth ---
    def synth(self, spec: GeneratorSpec, out_path: Optional[Path]) -> str:
        predictions = generate(spec, workers=self.config.workers)
        path = save_predictions(predictions, self._require(out_path, "--out"), self.fmt)
        return (
            f"generated {predictions.n_member} members and {predictions.n_nonmember} non-members "
            f"over {predictions.num_classes} classes into {path}\n"
        )


def _median(cdf: Sequence[Tuple[float, float]]) -> float:
    for value, cumulative in cdf:
        if cumulative >= 0.5:
            return value
    return cdf[-1][0]


def _or_nan(value: Optional[float]) -> float:
    return float("nan") if value is None else value

"""Forecast-quality metrics (MSE, RMSE, MAE) over held-out test pairs.

All metrics are computed in normalized [0, 1] space, which is where training
operates; multiply by the normalization span (or span squared for MSE) for
Mbps-scale numbers. Externally reported metric sets sometimes carry an RMSE
that is not exactly the square root of the published MSE (for example MSE
0.000233 alongside RMSE 0.015278, although sqrt(0.000233) is about 0.015264,
a gap typical of independent rounding or per-batch averaging); this module
enforces rmse == sqrt(mse) exactly.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .lstm import ForecastModel, forward_window
from .preprocess import NormalizationParams, SupervisedDataset

EVAL_HEADER = "provider_id,n_test,mse,rmse,mae"
RESIDUALS_HEADER = "provider_id,hour,residual"


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Metrics plus raw residuals (predicted - actual) for one evaluation."""

    provider_id: str
    n_test: int
    mse: float
    rmse: float
    mae: float
    residuals: np.ndarray

    def __post_init__(self):
        residuals = np.asarray(self.residuals, dtype=np.float64)
        residuals = residuals.copy()
        residuals.flags.writeable = False
        object.__setattr__(self, "residuals", residuals)
        if self.n_test != residuals.size:
            raise ValueError("n_test must equal the residual count")
        if min(self.mse, self.rmse, self.mae) < 0:
            raise ValueError("metrics must be non-negative")
        if abs(self.rmse * self.rmse - self.mse) > 1e-12 * max(self.mse, 1e-300):
            raise ValueError("rmse**2 must equal mse")


def _check_pair(actual, predicted):
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.ndim != 1 or actual.shape != predicted.shape:
        raise ValueError(f"length mismatch: {actual.shape} vs {predicted.shape}")
    if actual.size == 0:
        raise ValueError("empty input")
    if not (np.all(np.isfinite(actual)) and np.all(np.isfinite(predicted))):
        raise ValueError("inputs must be finite")
    return actual, predicted


def mse(actual, predicted) -> float:
    """Mean squared residual."""
    actual, predicted = _check_pair(actual, predicted)
    return float(np.mean((predicted - actual) ** 2))


def rmse(actual, predicted) -> float:
    """Square root of the mean squared residual."""
    return math.sqrt(mse(actual, predicted))


def mae(actual, predicted) -> float:
    """Mean absolute residual."""
    actual, predicted = _check_pair(actual, predicted)
    return float(np.mean(np.abs(predicted - actual)))


def _report(provider_id, actual, predicted) -> EvalReport:
    residuals = np.asarray(predicted, dtype=np.float64) - np.asarray(actual, dtype=np.float64)
    m = mse(actual, predicted)
    return EvalReport(provider_id, residuals.size, m, math.sqrt(m), mae(actual, predicted), residuals)


def evaluate(model: ForecastModel, test: SupervisedDataset, provider_id: str | None = None) -> EvalReport:
    """One-step prediction per test pair, metrics over all pairs."""
    if model.config.window_length != test.window_length:
        raise ValueError(
            f"model window length {model.config.window_length} != dataset {test.window_length}"
        )
    if len(test) == 0:
        raise ValueError("empty test set")
    predicted = np.array([forward_window(model.params, w) for w in test.inputs])
    return _report(provider_id if provider_id is not None else model.provider_id,
                   test.targets, predicted)


def persistence_baseline(test: SupervisedDataset, provider_id: str = "") -> EvalReport:
    """Naive baseline: predict each target as the last value of its window."""
    if len(test) == 0:
        raise ValueError("empty test set")
    return _report(provider_id, test.targets, test.inputs[:, -1])


def denormalized(report: EvalReport, norm: NormalizationParams) -> EvalReport:
    """Rescale a normalized-space report back to Mbps units."""
    span = norm.span
    return replace(
        report,
        mse=report.mse * span * span,
        rmse=report.rmse * span,
        mae=report.mae * span,
        residuals=report.residuals * span,
    )


def emit_eval_csv(reports: list[EvalReport]) -> str:
    """Emit the evaluation table (one row per report, given order)."""
    lines = [EVAL_HEADER]
    for r in reports:
        lines.append(
            f"{r.provider_id},{r.n_test},{float(r.mse)!r},{float(r.rmse)!r},{float(r.mae)!r}"
        )
    return "\n".join(lines) + "\n"


def emit_residuals_csv(reports: list[EvalReport]) -> str:
    """Per-pair residuals for plotting; hour counts from 0 within each test set."""
    lines = [RESIDUALS_HEADER]
    for r in reports:
        for hour, residual in enumerate(r.residuals):
            lines.append(f"{r.provider_id},{hour},{float(residual)!r}")
    return "\n".join(lines) + "\n"

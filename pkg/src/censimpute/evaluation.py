"""Ground-truth evaluation: artificial censoring and quality measures.

Usable whenever true uncensored wages are known (synthetic panels, or
near-uncensored survey data censored artificially): regression-based
prediction and coefficient deviations, quantile deviations, and the
divergence between true and imputed wage densities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from censimpute.density import kde, silverman_bandwidth, uniform_grid
from censimpute.errors import DataError
from censimpute.estimators import ols

KL_FLOOR = 1e-12


@dataclass
class MetricsReport:
    """Quality measures for one cell and method.

    Coefficient deviations and the divergence are conventionally displayed
    times 100; the stored values are unscaled and ``as_row`` labels the
    scaled columns explicitly.
    """

    mse_pred: float
    mae_pred: float
    msd_coef: float
    mad_coef: float
    kl_div: float
    dev_q90: float
    dev_q99: float
    sad: float | None = None

    def __post_init__(self) -> None:
        for name in ("mse_pred", "mae_pred", "msd_coef", "mad_coef", "kl_div"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def as_row(self) -> dict:
        return {
            "mse_pred": self.mse_pred,
            "mae_pred": self.mae_pred,
            "msd_coef_x100": self.msd_coef * 100.0,
            "mad_coef_x100": self.mad_coef * 100.0,
            "kl_div_x100": self.kl_div * 100.0,
            "dev_q90": self.dev_q90,
            "dev_q99": self.dev_q99,
            "sad": self.sad,
        }


def artificial_censor(
    frame: pd.DataFrame, limits: pd.Series | float
) -> tuple[pd.DataFrame, pd.Series]:
    """Induces right censoring on a store with known true wages.

    Wages at or above the per-row limit are replaced by the limit and
    flagged; the original wages come back as the ground-truth series so the
    round trip is exact.
    """
    out = frame.copy()
    truth = frame["log_wage"].copy()
    limit = pd.Series(limits, index=frame.index) if np.isscalar(limits) else limits.loc[frame.index]
    if (truth < limit).sum() == 0:
        raise DataError("limit lies below the entire sample: everything would be censored")
    hit = truth >= limit
    out["log_wage"] = np.where(hit, limit, truth)
    out["censored"] = hit.to_numpy()
    out["upper_limit"] = limit.to_numpy(dtype=float)
    return out, truth


def regression_metrics(
    truth: np.ndarray,
    imputed: np.ndarray,
    eval_design: np.ndarray,
) -> tuple[float, float, float, float]:
    """Prediction and coefficient deviations of the evaluation regression.

    Fits the same OLS (e.g. constant + quadratic age + log establishment
    size) on true and on imputed wages; returns (mse_pred, mae_pred,
    msd_coef, mad_coef) -- means over observations for predictions, means
    over coefficients for the coefficient deviations.
    """
    t = np.asarray(truth, dtype=float).ravel()
    v = np.asarray(imputed, dtype=float).ravel()
    x = np.asarray(eval_design, dtype=float)
    if t.shape != v.shape or x.shape[0] != t.size:
        raise ValueError("truth/imputed/design sizes disagree")
    fit_t = ols(x, t)
    fit_v = ols(x, v)
    pred_diff = x @ (fit_t.coefficients - fit_v.coefficients)
    coef_diff = fit_t.coefficients - fit_v.coefficients
    return (
        float(np.mean(pred_diff**2)),
        float(np.mean(np.abs(pred_diff))),
        float(np.mean(coef_diff**2)),
        float(np.mean(np.abs(coef_diff))),
    )


def kl_divergence(
    truth: np.ndarray,
    imputed: np.ndarray,
    bandwidth: float | None = None,
    grid_points: int = 512,
) -> float:
    """KL(truth || imputed) between kernel densities on a shared grid.

    The grid spans both samples plus three bandwidths; densities are floored
    before the log ratio and the integral is trapezoidal.
    """
    t = np.asarray(truth, dtype=float).ravel()
    v = np.asarray(imputed, dtype=float).ravel()
    if t.size < 2 or v.size < 2:
        raise ValueError("need at least two observations per sample")
    if np.ptp(t) == 0 or np.ptp(v) == 0:
        raise ValueError("degenerate sample (single value)")
    bw_t = bandwidth if bandwidth is not None else silverman_bandwidth(t)
    bw_v = bandwidth if bandwidth is not None else silverman_bandwidth(v)
    if bw_t <= 0 or bw_v <= 0:
        raise ValueError("degenerate sample (zero spread)")
    lo = min(t.min(), v.min()) - 3.0 * max(bw_t, bw_v)
    hi = max(t.max(), v.max()) + 3.0 * max(bw_t, bw_v)
    step = (hi - lo) / (grid_points - 1)
    grid = uniform_grid(lo, hi, step)
    f_t = np.maximum(kde(t, grid, bw_t).ordinates, KL_FLOOR)
    f_v = np.maximum(kde(v, grid, bw_v).ordinates, KL_FLOOR)
    integrand = f_t * np.log(f_t / f_v)
    return float(max(np.trapezoid(integrand, grid), 0.0))


def distribution_metrics(
    truth: np.ndarray,
    imputed: np.ndarray,
    bandwidth: float | None = None,
    grid_points: int = 512,
) -> tuple[float, float, float]:
    """(kl_div, dev_q90, dev_q99); quantile deviations are truth minus imputed."""
    t = np.asarray(truth, dtype=float).ravel()
    v = np.asarray(imputed, dtype=float).ravel()
    kl = kl_divergence(t, v, bandwidth=bandwidth, grid_points=grid_points)
    dev90 = float(np.quantile(t, 0.90) - np.quantile(v, 0.90))
    dev99 = float(np.quantile(t, 0.99) - np.quantile(v, 0.99))
    return kl, dev90, dev99


def metrics_report(
    truth: np.ndarray,
    imputed: np.ndarray,
    eval_design: np.ndarray,
    sad_score: float | None = None,
    bandwidth: float | None = None,
) -> MetricsReport:
    mse, mae, msd, mad = regression_metrics(truth, imputed, eval_design)
    kl, d90, d99 = distribution_metrics(truth, imputed, bandwidth=bandwidth)
    return MetricsReport(
        mse_pred=mse,
        mae_pred=mae,
        msd_coef=msd,
        mad_coef=mad,
        kl_div=kl,
        dev_q90=d90,
        dev_q99=d99,
        sad=sad_score,
    )


def quadratic_eval_design(frame: pd.DataFrame, spec: list[str]) -> np.ndarray:
    """Evaluation design from column names; ``name^2`` adds the square too."""
    cols = [np.ones(len(frame))]
    for item in spec:
        name = item.strip()
        squared = name.endswith("^2")
        base = name[:-2] if squared else name
        if base not in frame.columns:
            raise DataError(f"evaluation column {base!r} not in the data")
        vals = frame[base].to_numpy(dtype=float)
        cols.append(vals)
        if squared:
            cols.append(vals**2)
    return np.column_stack(cols)

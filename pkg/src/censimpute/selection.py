"""Per-cell method selection by density smoothness around the censoring limit.

A poorly fitting imputation model piles mass just above (or leaves a gap at)
the limit, which shows up as curvature of the kernel density there. The
score is the sum of absolute second finite differences of the density over a
narrow window around the limit; the candidate with the smallest score wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from censimpute.density import DensityGrid, kde, silverman_bandwidth, uniform_grid
from censimpute.errors import FitError
from censimpute.estimators import ols
from censimpute.panel import CellKey

#: candidate methods in report order; also the selection tie-break order
METHOD_ORDER = ["tobit_r", "tobit_lr", "cqr_at_limit", "cqr_extrapolated"]


@dataclass
class SadParams:
    """Window and grid settings for the smoothness score."""

    window_frac: float = 0.01
    grid_step: float = 0.001
    bandwidth: float | None = None  # None: Silverman rule on the scored sample

    def window(self, limit: float) -> tuple[float, float]:
        half = self.window_frac * abs(limit)
        return limit - half, limit + half


def sad_grid(limit: float, params: SadParams | None = None) -> np.ndarray:
    params = params or SadParams()
    lo, hi = params.window(limit)
    return uniform_grid(lo, hi, params.grid_step)


def sad(
    values: np.ndarray,
    limit: float,
    params: SadParams | None = None,
) -> float:
    """Sum of absolute second finite differences of the kernel density.

    ``values`` is the cell's combined log-wage sample: observed wages below
    the limit plus imputed wages above it. The score is undefined (raises)
    when the sample does not span the window, since the density there would
    describe no data.
    """
    params = params or SadParams()
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empty sample")
    lo, hi = params.window(limit)
    if v.min() > lo or v.max() < hi:
        raise FitError(
            f"sample support [{v.min():.4f}, {v.max():.4f}] does not span the window "
            f"[{lo:.4f}, {hi:.4f}]"
        )
    bw = params.bandwidth if params.bandwidth is not None else silverman_bandwidth(v)
    grid = uniform_grid(lo, hi, params.grid_step)
    density = kde(v, grid, bw)
    return sad_from_density(density)


def sad_from_density(density: DensityGrid) -> float:
    """Score from precomputed ordinates; boundary points have no second difference."""
    f = density.ordinates
    if f.size < 3:
        raise ValueError("grid too short for second differences")
    step = density.step
    second = f[2:] - 2.0 * f[1:-1] + f[:-2]
    return float(np.sum(np.abs(second)) / step**2)


def footnote_criterion(
    imputed_density: DensityGrid,
    reference_below_limit: DensityGrid,
    limit: float,
    params: SadParams | None = None,
) -> float:
    """Density-weighted absolute deviation from a linearly extrapolated reference.

    The reference density, estimable below the limit only, is fit by linear
    least squares on [0.9*limit, limit) and extrapolated over the scoring
    window; the criterion integrates |reference - imputed| against the
    reference. Kept for comparison; selection uses the smoothness score.
    """
    params = params or SadParams()
    ref_x = reference_below_limit.abscissae
    ref_f = reference_below_limit.ordinates
    fit_mask = (ref_x >= 0.9 * limit) & (ref_x < limit)
    if fit_mask.sum() < 2:
        raise FitError("reference density has too few points below the limit")
    basis = np.column_stack([np.ones(fit_mask.sum()), ref_x[fit_mask]])
    line = ols(basis, ref_f[fit_mask], intercept_col=0)

    x = imputed_density.abscissae
    lo, hi = params.window(limit)
    window = (x >= lo - 1e-12) & (x <= hi + 1e-12)
    if window.sum() < 2:
        raise FitError("imputed density does not cover the scoring window")
    xs = x[window]
    f_imp = imputed_density.ordinates[window]
    f_ref = line.coefficients[0] + line.coefficients[1] * xs
    widths = np.diff(xs)
    return float(np.sum(np.abs(f_ref[1:] - f_imp[1:]) * widths * f_ref[1:]))


@dataclass
class SelectionReport:
    """Scores and the chosen method for one cell."""

    cell: CellKey
    scores: dict[str, float | None]
    chosen: str
    params: SadParams = field(default_factory=SadParams)
    bandwidth_used: float | None = None

    def as_row(self) -> dict:
        row = {
            "year": self.cell.year,
            "gender": self.cell.gender,
            "age_group": self.cell.age_group,
            "educ_group": self.cell.educ_group,
            "region": self.cell.region,
            "chosen": self.chosen,
            "window_frac": self.params.window_frac,
            "grid_step": self.params.grid_step,
            "bandwidth": self.bandwidth_used,
        }
        for method in sorted(self.scores, key=lambda m: (_method_rank(m), m)):
            row[f"sad_{method}"] = self.scores[method]
        return row


def select_method(
    cell: CellKey,
    observed_uncensored: np.ndarray,
    candidates: dict[str, np.ndarray],
    limit: float,
    params: SadParams | None = None,
) -> SelectionReport:
    """Scores each candidate imputation and picks the smoothest.

    Candidates map method label to the imputed values of the cell's censored
    rows; each is scored on observed-uncensored plus imputed wages combined.
    Undefined scores (window not spanned) are skipped; ties go to the
    earliest method in METHOD_ORDER.
    """
    params = params or SadParams()
    obs = np.asarray(observed_uncensored, dtype=float).ravel()
    scores: dict[str, float | None] = {}
    bw_used = None
    for method in sorted(candidates, key=_method_rank):
        combined = np.concatenate([obs, np.asarray(candidates[method], dtype=float).ravel()])
        try:
            scores[method] = sad(combined, limit, params)
            if bw_used is None and params.bandwidth is None:
                bw_used = silverman_bandwidth(combined)
        except (FitError, ValueError):
            scores[method] = None
    defined = {m: s for m, s in scores.items() if s is not None}
    if not defined:
        raise FitError(f"no candidate produced a defined score in cell {cell.label}")
    chosen = min(defined, key=lambda m: (defined[m], _method_rank(m)))
    return SelectionReport(
        cell=cell,
        scores=scores,
        chosen=chosen,
        params=params,
        bandwidth_used=params.bandwidth if params.bandwidth is not None else bw_used,
    )


def _method_rank(method: str) -> int:
    base = method.split("@")[0]
    if base in METHOD_ORDER:
        return METHOD_ORDER.index(base)
    return len(METHOD_ORDER)

"""Censored quantile regression: three-step estimator, coefficient profiles
over a quantile grid, and the two imputation variants built on them.

The three-step estimator first screens observations by their probit-predicted
probability of being uncensored, runs a quantile regression on the screened
sample, then reruns it on the observations whose predicted quantile clears
the censoring limit by a margin. Coefficients are estimable only up to the
largest uncensored quantile; the at-limit imputation freezes them there,
while the extrapolated variant continues each coefficient's path across the
limit with a weighted ridge fit on a quadratic in the quantile.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from censimpute.errors import FitError, InfeasibleQuantileError
from censimpute.estimators import FitResult, ols, probit, quantreg, trunc_normal_draw
from censimpute.tobit import AT_UPPER, TobitSpec, UNCENSORED


def default_grid() -> np.ndarray:
    """Quantile grid 0.01, 0.02, ..., 0.99, 1.0."""
    return np.append(np.round(np.arange(1, 100) / 100.0, 2), 1.0)


@dataclass
class QuantileProfile:
    """Coefficient estimates over a quantile grid.

    ``coefficients`` is p-by-grid with NaN columns at infeasible points;
    feasibility is a prefix of the grid by construction and ``q_c`` is its
    largest point. ``extrapolated`` marks profiles whose columns come from
    the polynomial continuation rather than direct fits.
    """

    grid: np.ndarray
    coefficients: np.ndarray
    feasible: np.ndarray
    q_c: float | None
    column_names: list[str] | None = None
    extrapolated: bool = False
    diagnostics: dict = field(default_factory=dict)

    def coef_at(self, q: float) -> np.ndarray:
        j = int(np.argmin(np.abs(self.grid - q)))
        if not np.isclose(self.grid[j], q, atol=1e-9):
            raise ValueError(f"{q} is not a grid point")
        return self.coefficients[:, j]


def _trim_margin(tau: float, delta: float, uncensored_share: float) -> None:
    if tau >= uncensored_share - delta:
        raise InfeasibleQuantileError(
            f"tau={tau:.2f} is not identified: uncensored share {uncensored_share:.3f} "
            f"minus margin {delta} caps it"
        )


def cqr_three_step(
    spec: TobitSpec,
    y: np.ndarray,
    censor_state: np.ndarray,
    tau: float,
    delta: float = 0.05,
    zeta_mult: float = 0.05,
    probit_probs: np.ndarray | None = None,
) -> FitResult:
    """Three-step censored quantile regression at ``tau``.

    With no censored rows the screening is vacuous and the plain quantile
    regression is returned unchanged. ``probit_probs`` lets callers reuse the
    screening probabilities across grid points of a profile.
    """
    x = spec.design
    yv = np.asarray(y, dtype=float).ravel()
    state = np.asarray(censor_state, dtype=int).ravel()
    n, p = x.shape
    censored = state == AT_UPPER

    if not censored.any():
        return quantreg(x, yv, tau, column_names=spec.column_names)

    share_unc = float((state == UNCENSORED).mean())
    _trim_margin(tau, delta, share_unc)

    if probit_probs is None:
        probit_probs = censoring_probit(spec, state)
    j0 = probit_probs > tau + delta
    if j0.sum() < 2 * p:
        raise InfeasibleQuantileError(f"screened sample too small at tau={tau:.2f} ({int(j0.sum())} rows)")

    step2 = quantreg(x[j0], yv[j0], tau)
    resid_unc = yv[~censored] - x[~censored] @ step2.coefficients
    zeta = zeta_mult * float(np.std(resid_unc)) if resid_unc.size else 0.0

    pred = x @ step2.coefficients
    j1 = pred < spec.upper_limit - zeta
    if j1.sum() < 2 * p:
        raise InfeasibleQuantileError(f"prediction-screened sample too small at tau={tau:.2f}")

    fit = quantreg(x[j1], yv[j1], tau, column_names=spec.column_names)
    fit.diagnostics.update(
        {"j0_size": int(j0.sum()), "j1_size": int(j1.sum()), "zeta": zeta, "tau": tau}
    )
    return fit


def censoring_probit(spec: TobitSpec, censor_state: np.ndarray) -> np.ndarray:
    """Predicted probability of being uncensored, from a probit screen."""
    state = np.asarray(censor_state, dtype=int).ravel()
    uncensored = (state == UNCENSORED).astype(float)
    fit = probit(spec.design, uncensored)
    if not fit.converged:
        raise FitError("screening probit did not converge (separation?)")
    return ndtr(spec.design @ fit.coefficients)


def coefficient_profile(
    spec: TobitSpec,
    y: np.ndarray,
    censor_state: np.ndarray,
    grid: np.ndarray | None = None,
    delta: float = 0.05,
    zeta_mult: float = 0.05,
) -> QuantileProfile:
    """Three-step fits point by point along the grid.

    Fitting walks the grid upward and stops at the first infeasible point,
    so feasibility is a prefix; identification only deteriorates as the
    quantile approaches the censored region. The endpoint 1.0 is never fit.
    """
    g = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if np.any(np.diff(g) <= 0):
        raise ValueError("grid must be strictly increasing")
    x = spec.design
    n, p = x.shape
    state = np.asarray(censor_state, dtype=int).ravel()
    censored_any = bool((state == AT_UPPER).any())
    probs = censoring_probit(spec, state) if censored_any else None

    coefs = np.full((p, g.size), np.nan)
    feasible = np.zeros(g.size, dtype=bool)
    for j, q in enumerate(g):
        if q >= 1.0:
            break
        try:
            fit = cqr_three_step(
                spec, y, state, float(q), delta=delta, zeta_mult=zeta_mult, probit_probs=probs
            )
        except InfeasibleQuantileError:
            break
        coefs[:, j] = fit.coefficients
        feasible[j] = True

    if not feasible.any():
        raise FitError("no feasible grid point for the quantile profile")
    q_c = float(g[np.flatnonzero(feasible)[-1]])
    return QuantileProfile(
        grid=g,
        coefficients=coefs,
        feasible=feasible,
        q_c=q_c,
        column_names=spec.column_names,
        diagnostics={"n": n, "censored_share": float((state == AT_UPPER).mean())},
    )


def fit_at_largest_quantile(
    spec: TobitSpec,
    y: np.ndarray,
    censor_state: np.ndarray,
    grid: np.ndarray | None = None,
    delta: float = 0.05,
    zeta_mult: float = 0.05,
) -> tuple[FitResult, float]:
    """Three-step fit at the largest feasible grid quantile (q_c).

    Walks the grid downward from the identification cap, so the full profile
    is not needed when only the at-limit imputation is wanted.
    """
    g = default_grid() if grid is None else np.asarray(grid, dtype=float)
    state = np.asarray(censor_state, dtype=int).ravel()
    share_unc = float((state == UNCENSORED).mean())
    probs = censoring_probit(spec, state) if (state == AT_UPPER).any() else None
    candidates = g[(g < min(share_unc - delta, 1.0)) & (g < 1.0)]
    for q in candidates[::-1]:
        try:
            fit = cqr_three_step(
                spec, y, state, float(q), delta=delta, zeta_mult=zeta_mult, probit_probs=probs
            )
            return fit, float(q)
        except InfeasibleQuantileError:
            continue
    raise FitError("no feasible quantile for the at-limit fit")


def impute_cqr_at_limit(
    fit_at_qc: FitResult,
    spec: TobitSpec,
    resid_sd: float,
    censored_rows: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """At-limit imputation: prediction at q_c plus a left-truncated shock.

    The shock scale is not identified by the quantile fit itself; callers
    pass it in (the cell's Tobit residual sd by default in the pipeline).
    """
    if resid_sd <= 0:
        raise ValueError("resid_sd must be positive")
    rows = np.asarray(censored_rows)
    if rows.dtype == bool:
        rows = np.flatnonzero(rows)
    x = spec.design[rows]
    limit = spec.upper_limit[rows]
    xb = x @ fit_at_qc.coefficients
    shock = trunc_normal_draw(0.0, resid_sd, limit - xb, rng)
    return xb + shock


def extrapolate_profile(
    profile: QuantileProfile,
    penalty: float = 0.002,
    min_quantile: float = 0.10,
    invert_weights: bool = False,
) -> QuantileProfile:
    """Continues each coefficient path over the full grid.

    Each path is fit on its feasible points at or above ``min_quantile`` by
    ridge regression on (1, q, q^2) with the intercept unpenalized, weighting
    points by their quantile distance to q_c. ``invert_weights`` flips the
    weighting to emphasize points near the limit instead.
    """
    if profile.q_c is None:
        raise FitError("profile has no feasible points")
    use = profile.feasible & (profile.grid >= min_quantile)
    q = profile.grid[use]
    if q.size < 3:
        raise FitError(f"need at least 3 feasible grid points at or above {min_quantile}")
    if invert_weights:
        w = q - q.min() + (q[1] - q[0] if q.size > 1 else 0.01)
    else:
        w = profile.q_c - q
    if np.all(w <= 0):
        raise FitError("degenerate extrapolation weights")

    basis = np.column_stack([np.ones_like(q), q, q * q])
    full_basis = np.column_stack(
        [np.ones_like(profile.grid), profile.grid, profile.grid**2]
    )
    p = profile.coefficients.shape[0]
    out = np.empty((p, profile.grid.size))
    for j in range(p):
        fit = ols(basis, profile.coefficients[j, use], weights=w, ridge=penalty)
        out[j] = full_basis @ fit.coefficients
    return QuantileProfile(
        grid=profile.grid,
        coefficients=out,
        feasible=np.ones(profile.grid.size, dtype=bool),
        q_c=profile.q_c,
        column_names=profile.column_names,
        extrapolated=True,
        diagnostics={"penalty": penalty, "min_quantile": min_quantile, "points_used": int(q.size)},
    )


def impute_cqr_extrapolated(
    extrapolated: QuantileProfile,
    spec: TobitSpec,
    censored_rows: np.ndarray,
    rng: np.random.Generator,
    fallback=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Imputation by drawing a quantile from the extrapolated path.

    Per censored row the index path x b(q) over the grid is made monotone by
    rearrangement (sorting, which preserves the multiset of path values);
    the draw is uniform over the grid points whose rearranged value clears
    the row's limit. Rows whose entire path stays below the limit go through
    ``fallback`` (a callable mapping design rows and limits to values) and
    are flagged in the returned mask.
    """
    if not extrapolated.extrapolated:
        raise ValueError("profile must cover the full grid (run extrapolate_profile first)")
    rows = np.asarray(censored_rows)
    if rows.dtype == bool:
        rows = np.flatnonzero(rows)
    x = spec.design[rows]
    limit = spec.upper_limit[rows]
    m = rows.size
    if m == 0:
        return np.empty(0), np.zeros(0, dtype=bool)

    paths = np.sort(x @ extrapolated.coefficients, axis=1)
    k = paths.shape[1]
    reach = paths[:, -1] >= limit
    kmin = np.array([int(np.searchsorted(paths[i], limit[i], side="left")) for i in range(m)])

    values = np.empty(m)
    u = rng.random(m)
    span = np.maximum(k - kmin, 1)
    idx = np.minimum(kmin + np.floor(u * span).astype(int), k - 1)
    ok = reach
    values[ok] = paths[np.flatnonzero(ok), idx[ok]]

    if (~ok).any():
        if fallback is None:
            raise FitError(
                f"{int((~ok).sum())} rows never reach the limit on the extrapolated path "
                "and no fallback was given"
            )
        values[~ok] = fallback(rows[~ok])
    return values, ~ok

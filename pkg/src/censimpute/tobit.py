"""Right- and doubly-censored Tobit maximum likelihood with stochastic imputation.

The likelihood is maximized in the scaled parameterization
(coef/sigma, 1/sigma), in which the censored-normal log likelihood is
globally concave, so safeguarded Newton steps are reliable. Estimates and
their covariance are reported on the natural (coef, sigma) scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import log_ndtr

from censimpute.errors import FitError
from censimpute.estimators import (
    FitResult,
    _as_matrix,
    _mills,
    _norm_logpdf,
    ols,
    trunc_normal_draw,
)

UNCENSORED = 0
AT_UPPER = 1
AT_LOWER = -1


@dataclass
class TobitSpec:
    """Design and per-row censoring limits for one cell.

    ``lower_limit`` is None for the purely right-censored model; when set it
    is the artificial lower bound used to stabilize the fit.
    """

    design: np.ndarray
    upper_limit: np.ndarray
    lower_limit: np.ndarray | None = None
    column_names: list[str] | None = None

    def __post_init__(self) -> None:
        self.design = _as_matrix(self.design)
        n = self.design.shape[0]
        self.upper_limit = np.broadcast_to(
            np.asarray(self.upper_limit, dtype=float), (n,)
        ).copy()
        if self.lower_limit is not None:
            self.lower_limit = np.broadcast_to(
                np.asarray(self.lower_limit, dtype=float), (n,)
            ).copy()
            if np.any(self.lower_limit >= self.upper_limit):
                raise ValueError("lower limit must lie below the upper limit")


def tobit_loglik_grad(
    theta: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    state: np.ndarray,
    upper: np.ndarray,
    lower: np.ndarray | None,
) -> tuple[float, np.ndarray]:
    """Censored-normal log likelihood and gradient in (coef/sigma, 1/sigma)."""
    p = x.shape[1]
    delta, gamma = theta[:p], theta[p]
    if gamma <= 0:
        return -np.inf, np.zeros(p + 1)
    xd = x @ delta
    grad = np.zeros(p + 1)
    ll = 0.0

    unc = state == UNCENSORED
    if unc.any():
        z = gamma * y[unc] - xd[unc]
        ll += float(_norm_logpdf(z).sum()) + unc.sum() * np.log(gamma)
        grad[:p] += x[unc].T @ z
        grad[p] += float(-(z @ y[unc]) + unc.sum() / gamma)

    up = state == AT_UPPER
    if up.any():
        a = xd[up] - gamma * upper[up]
        ll += float(log_ndtr(a).sum())
        lam = _mills(a)
        grad[:p] += x[up].T @ lam
        grad[p] += float(-(lam @ upper[up]))

    lo = state == AT_LOWER
    if lo.any():
        if lower is None:
            raise ValueError("rows marked at the lower limit but no lower limit given")
        low = gamma * lower[lo] - xd[lo]
        ll += float(log_ndtr(low).sum())
        lam = _mills(low)
        grad[:p] -= x[lo].T @ lam
        grad[p] += float(lam @ lower[lo])

    return ll, grad


def _tobit_hessian(
    theta: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    state: np.ndarray,
    upper: np.ndarray,
    lower: np.ndarray | None,
) -> np.ndarray:
    p = x.shape[1]
    delta, gamma = theta[:p], theta[p]
    xd = x @ delta
    h_dd = np.zeros((p, p))
    h_dg = np.zeros(p)
    h_gg = 0.0

    unc = state == UNCENSORED
    if unc.any():
        xu, yu = x[unc], y[unc]
        h_dd -= xu.T @ xu
        h_dg += xu.T @ yu
        h_gg -= float(yu @ yu) + unc.sum() / gamma**2

    for mask, bound, sign in ((state == AT_UPPER, upper, 1.0), (state == AT_LOWER, lower, -1.0)):
        if not mask.any():
            continue
        b = bound[mask]
        arg = sign * (xd[mask] - gamma * b)
        lam = _mills(arg)
        kappa = lam * (arg + lam)
        xm = x[mask]
        h_dd -= xm.T @ (xm * kappa[:, None])
        h_dg += xm.T @ (kappa * b)
        h_gg -= float(kappa @ (b * b))

    hess = np.empty((p + 1, p + 1))
    hess[:p, :p] = h_dd
    hess[:p, p] = h_dg
    hess[p, :p] = h_dg
    hess[p, p] = h_gg
    return hess


def fit_tobit(
    spec: TobitSpec,
    y: np.ndarray,
    censor_state: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> FitResult:
    """Censored-normal MLE.

    ``censor_state`` holds 0 for uncensored rows, 1 for rows at the upper
    limit and -1 for rows at the (artificial) lower limit. Censored rows
    contribute through their limits; their ``y`` entries are ignored.
    """
    x = spec.design
    yv = np.asarray(y, dtype=float).ravel()
    state = np.asarray(censor_state, dtype=int).ravel()
    n, p = x.shape
    if yv.size != n or state.size != n:
        raise ValueError("y/censor_state length does not match design")
    if not np.all(np.isin(state, (UNCENSORED, AT_UPPER, AT_LOWER))):
        raise ValueError("censor_state entries must be -1, 0 or 1")
    unc = state == UNCENSORED
    n_unc = int(unc.sum())
    if n_unc == 0:
        raise FitError("all rows are censored")
    if n_unc < p + 1:
        raise FitError(f"need at least {p + 1} uncensored rows, got {n_unc}")
    if np.any(state == AT_LOWER) and spec.lower_limit is None:
        raise ValueError("censor_state marks lower-censored rows but spec has no lower limit")

    start = ols(x[unc], yv[unc])
    sigma0 = max(np.sqrt(max(start.resid_var, 0.0) * max(n_unc - p, 1) / n_unc), 1e-6)
    theta = np.append(start.coefficients / sigma0, 1.0 / sigma0)

    ll, grad = tobit_loglik_grad(theta, x, yv, state, spec.upper_limit, spec.lower_limit)
    # The absolute gradient tolerance is unattainable once improvements fall
    # below the float resolution of a large-sample log likelihood; on line
    # search stagnation a scale-relative tolerance decides instead.
    soft_tol = tol * max(1.0, abs(ll))
    converged = False
    stalled = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < tol:
            converged = True
            break
        hess = _tobit_hessian(theta, x, yv, state, spec.upper_limit, spec.lower_limit)
        try:
            step = linalg.solve(-hess, grad, assume_a="pos")
        except linalg.LinAlgError:
            step = grad / max(np.max(np.abs(grad)), 1.0)
        # keep 1/sigma positive along the step
        if step[p] < 0:
            cap = -0.95 * theta[p] / step[p]
            if cap < 1.0:
                step = step * cap
        scale = 1.0
        improved = False
        for _ in range(50):
            cand = theta + scale * step
            ll_new, grad_new = tobit_loglik_grad(
                cand, x, yv, state, spec.upper_limit, spec.lower_limit
            )
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12:
                theta, ll, grad = cand, ll_new, grad_new
                improved = True
                break
            scale *= 0.5
        soft_tol = tol * max(1.0, abs(ll))
        if not improved:
            stalled = True
            break
    gmax = np.max(np.abs(grad))
    if gmax < tol or (stalled or it >= max_iter) and gmax < soft_tol:
        converged = True

    if not converged:
        raise FitError(f"tobit did not converge in {it} iterations (|grad|={gmax:.2e})")

    delta, gamma = theta[:p], theta[p]
    sigma = 1.0 / gamma
    coef = delta * sigma

    hess = _tobit_hessian(theta, x, yv, state, spec.upper_limit, spec.lower_limit)
    try:
        cov_theta = linalg.inv(-hess)
    except linalg.LinAlgError as exc:
        raise FitError("observed information is singular") from exc
    jac = np.zeros((p + 1, p + 1))
    jac[:p, :p] = np.eye(p) * sigma
    jac[:p, p] = -delta * sigma**2
    jac[p, p] = -(sigma**2)
    cov_nat = jac @ cov_theta @ jac.T

    return FitResult(
        coefficients=coef,
        coef_cov=cov_nat[:p, :p],
        resid_var=sigma**2,
        loglik=ll,
        converged=True,
        iterations=it,
        column_names=spec.column_names,
        diagnostics={
            "n": n,
            "n_uncensored": n_unc,
            "n_upper": int((state == AT_UPPER).sum()),
            "n_lower": int((state == AT_LOWER).sum()),
            "sigma_se": float(np.sqrt(max(cov_nat[p, p], 0.0))),
        },
    )


def artificial_lower_limit(y: np.ndarray, censor_state: np.ndarray, quantile: float) -> float:
    """Empirical quantile of the cell's log wages used as an artificial floor.

    Linear-interpolation quantile convention. The quantile must stay below
    the uncensored share, otherwise the floor would cut into the censored
    region.
    """
    yv = np.asarray(y, dtype=float).ravel()
    state = np.asarray(censor_state, dtype=int).ravel()
    if yv.size == 0:
        raise ValueError("empty cell")
    unc_share = float((state == UNCENSORED).mean())
    if unc_share == 0.0:
        raise FitError("no uncensored observations")
    if not 0.0 < quantile < unc_share:
        raise ValueError(f"quantile must lie in (0, {unc_share:.3f}), got {quantile}")
    return float(np.quantile(yv, quantile))


def mark_lower(censor_state: np.ndarray, y: np.ndarray, limit: float) -> np.ndarray:
    """Re-mark uncensored rows below ``limit`` as lower-censored.

    Returns a new state vector; rows already at the upper limit are never
    touched, and the data values themselves stay as observed.
    """
    state = np.asarray(censor_state, dtype=int).copy()
    yv = np.asarray(y, dtype=float)
    flip = (state == UNCENSORED) & (yv < limit)
    state[flip] = AT_LOWER
    return state


def impute_tobit(
    fit: FitResult,
    spec: TobitSpec,
    censored_rows: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Stochastic imputation above the censoring limit.

    Each censored row gets its linear prediction plus a draw from a normal
    with the row's predictive variance (parameter uncertainty plus residual
    variance), left-truncated so the imputed value exceeds the row's limit.
    """
    if not fit.converged:
        raise FitError("cannot impute from a non-converged fit")
    rows = np.asarray(censored_rows)
    if rows.dtype == bool:
        rows = np.flatnonzero(rows)
    x = spec.design[rows]
    limit = spec.upper_limit[rows]
    xb = x @ fit.coefficients
    param_var = np.einsum("ij,jk,ik->i", x, fit.coef_cov, x) if fit.coef_cov is not None else 0.0
    pred_sd = np.sqrt(np.clip(param_var + fit.resid_var, 1e-30, None))
    shock = trunc_normal_draw(0.0, pred_sd, limit - xb, rng)
    return xb + shock

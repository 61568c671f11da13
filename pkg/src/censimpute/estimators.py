"""Numeric primitives shared by the imputation strategies.

Weighted/ridge least squares, probit maximum likelihood, quantile regression
via a Frisch-Newton interior-point solve of the LP formulation, and
truncated-normal sampling. All fits return a :class:`FitResult`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import linalg
from scipy.special import log_ndtr, ndtri

from censimpute.errors import FitError

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _as_matrix(design) -> np.ndarray:
    values = getattr(design, "values", design)
    x = np.asarray(values, dtype=float)
    if x.ndim != 2:
        raise ValueError("design must be a 2-d array")
    return x


def _norm_logpdf(z: np.ndarray) -> np.ndarray:
    return -0.5 * z * z - _LOG_SQRT_2PI


def _mills(z: np.ndarray) -> np.ndarray:
    """phi(z)/Phi(z), stable for very negative z."""
    return np.exp(_norm_logpdf(z) - log_ndtr(z))


@dataclass
class FitResult:
    """Estimator output: point estimates plus uncertainty and diagnostics.

    ``coef_cov`` and ``resid_var`` are None when the estimator does not
    define them (e.g. quantile regression reports no residual variance).
    """

    coefficients: np.ndarray
    coef_cov: np.ndarray | None = None
    resid_var: float | None = None
    loglik: float | None = None
    converged: bool = True
    iterations: int = 0
    column_names: list[str] | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.coefficients = np.asarray(self.coefficients, dtype=float).ravel()
        if self.coef_cov is not None:
            cov = np.asarray(self.coef_cov, dtype=float)
            self.coef_cov = 0.5 * (cov + cov.T)
        if self.resid_var is not None and self.resid_var < 0:
            raise ValueError("resid_var must be nonnegative")

    @property
    def std_errors(self) -> np.ndarray | None:
        if self.coef_cov is None:
            return None
        return np.sqrt(np.clip(np.diag(self.coef_cov), 0.0, None))

    def to_report(self) -> dict[str, Any]:
        """JSON-serializable summary."""
        report: dict[str, Any] = {
            "coefficients": self.coefficients.tolist(),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }
        if self.column_names is not None:
            report["columns"] = list(self.column_names)
        se = self.std_errors
        if se is not None:
            report["std_errors"] = se.tolist()
        if self.resid_var is not None:
            report["sigma"] = float(np.sqrt(self.resid_var))
        if self.loglik is not None:
            report["loglik"] = float(self.loglik)
        report.update({k: v for k, v in self.diagnostics.items() if np.isscalar(v)})
        return report


# ---------------------------------------------------------------------------
# least squares


def ols(
    design,
    y: np.ndarray,
    weights: np.ndarray | None = None,
    ridge: float = 0.0,
    penalize_intercept: bool = False,
    intercept_col: int | None = 0,
    column_names: list[str] | None = None,
) -> FitResult:
    """Weighted least squares with an optional L2 penalty.

    Minimizes ``sum w_i (y_i - x_i b)^2 + ridge * ||b_pen||^2`` where the
    penalty covers all columns except the intercept column unless
    ``penalize_intercept`` is set. ``intercept_col`` identifies the intercept
    (None if the design has none).
    """
    x = _as_matrix(design)
    yv = np.asarray(y, dtype=float).ravel()
    n, p = x.shape
    if yv.size != n:
        raise ValueError("y length does not match design")
    if n < p:
        raise FitError(f"need at least {p} rows, got {n}")
    if ridge < 0:
        raise ValueError("ridge penalty must be nonnegative")

    if weights is None:
        sw = None
        xw, yw = x, yv
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.size != n or np.any(w < 0):
            raise ValueError("weights must be nonnegative and match y")
        sw = np.sqrt(w)
        xw, yw = x * sw[:, None], yv * sw

    pen = np.ones(p)
    if not penalize_intercept and intercept_col is not None and 0 <= intercept_col < p:
        pen[intercept_col] = 0.0

    if ridge > 0:
        rows = np.diag(np.sqrt(ridge * pen))
        rows = rows[pen > 0]
        xa = np.vstack([xw, rows])
        ya = np.concatenate([yw, np.zeros(rows.shape[0])])
    else:
        xa, ya = xw, yw

    coef, _, rank, _ = np.linalg.lstsq(xa, ya, rcond=None)
    if rank < p:
        raise FitError("design is rank deficient")

    resid = yv - x @ coef
    if sw is None:
        rss = float(resid @ resid)
        xtwx = x.T @ x
    else:
        rss = float((sw * resid) @ (sw * resid))
        xtwx = xw.T @ xw
    dof = max(n - p, 1)
    resid_var = rss / dof if rss > 0 else 0.0

    normal = xtwx + ridge * np.diag(pen)
    try:
        cov = resid_var * linalg.inv(normal)
    except linalg.LinAlgError as exc:
        raise FitError("normal equations are singular") from exc

    return FitResult(
        coefficients=coef,
        coef_cov=cov,
        resid_var=resid_var,
        converged=True,
        iterations=1,
        column_names=column_names,
        diagnostics={"rss": rss, "n": n},
    )


# ---------------------------------------------------------------------------
# probit


def probit_loglik_grad(
    x: np.ndarray, d: np.ndarray, gamma: np.ndarray
) -> tuple[float, np.ndarray]:
    """Log likelihood and analytic gradient of the binary probit model."""
    sign = 2.0 * d - 1.0
    q = sign * (x @ gamma)
    ll = float(log_ndtr(q).sum())
    lam = _mills(q)
    grad = x.T @ (sign * lam)
    return ll, grad


def probit(
    design,
    d: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 200,
    column_names: list[str] | None = None,
) -> FitResult:
    """Probit MLE by safeguarded Newton iterations.

    Raises on single-class input; flags (rather than raises) failure to
    converge, which is how complete separation surfaces.
    """
    x = _as_matrix(design)
    dv = np.asarray(d, dtype=float).ravel()
    n, p = x.shape
    if dv.size != n:
        raise ValueError("d length does not match design")
    if not np.all((dv == 0) | (dv == 1)):
        raise ValueError("d must be binary")
    share = dv.mean()
    if share in (0.0, 1.0):
        raise FitError("probit needs both classes present")

    gamma = np.zeros(p)
    const_cols = np.all(x == x[0], axis=0)
    if const_cols.any():
        j = int(np.argmax(const_cols))
        if x[0, j] != 0:
            gamma[j] = ndtri(share) / x[0, j]

    ll, grad = probit_loglik_grad(x, dv, gamma)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < tol:
            converged = True
            break
        sign = 2.0 * dv - 1.0
        q = sign * (x @ gamma)
        lam = _mills(q)
        kappa = lam * (q + lam)
        hess = -(x.T @ (x * kappa[:, None]))
        try:
            step = linalg.solve(-hess, grad, assume_a="pos")
        except linalg.LinAlgError:
            step = grad / max(np.max(np.abs(grad)), 1.0)
        scale = 1.0
        for _ in range(40):
            cand = gamma + scale * step
            ll_new, grad_new = probit_loglik_grad(x, dv, cand)
            if ll_new >= ll - 1e-12:
                gamma, ll, grad = cand, ll_new, grad_new
                break
            scale *= 0.5
        else:
            break
    else:
        it = max_iter

    if np.max(np.abs(grad)) < tol:
        converged = True

    sign = 2.0 * dv - 1.0
    q = sign * (x @ gamma)
    separated = bool(np.min(q) > 3.0)
    if separated:
        # every outcome fitted almost perfectly: the MLE diverges and the
        # flat likelihood satisfies the gradient test at any large point
        converged = False
    lam = _mills(q)
    kappa = lam * (q + lam)
    info = x.T @ (x * kappa[:, None])
    try:
        cov = linalg.inv(info)
    except linalg.LinAlgError:
        cov = np.full((p, p), np.nan)
        converged = False

    return FitResult(
        coefficients=gamma,
        coef_cov=cov,
        resid_var=None,
        loglik=ll,
        converged=converged,
        iterations=it,
        column_names=column_names,
        diagnostics={"n": n, "share_ones": float(share), "separation": separated},
    )


# ---------------------------------------------------------------------------
# quantile regression


def check_loss(resid: np.ndarray, tau: float) -> float:
    """Koenker-Bassett check-function objective."""
    r = np.asarray(resid, dtype=float)
    return float(np.sum(np.where(r >= 0, tau * r, (tau - 1.0) * r)))


def quantreg(
    design,
    y: np.ndarray,
    tau: float,
    tol: float = 1e-10,
    max_iter: int = 100,
    column_names: list[str] | None = None,
) -> FitResult:
    """Quantile regression at ``tau`` via a Frisch-Newton interior point.

    Solves the bounded-variable dual LP max{y'a | X'a = (1-tau)X'1,
    a in [0,1]^n} with Mehrotra predictor-corrector steps, then polishes the
    interior solution to an exact vertex: the fit interpolates p data points,
    chosen among the rows closest to the interior fit. Near-ties in closeness
    are broken in favor of rows lying below the fitted plane, then by row
    order; for an intercept-only median with an even sample this yields the
    lower of the two middle points.
    """
    x = _as_matrix(design)
    yv = np.asarray(y, dtype=float).ravel()
    n, p = x.shape
    if yv.size != n:
        raise ValueError("y length does not match design")
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if n <= p:
        raise FitError(f"quantile regression needs more than {p} rows, got {n}")
    if np.linalg.matrix_rank(x) < p:
        raise FitError("degenerate design")

    coef_ip, iters, gap = _quantreg_interior_point(x, yv, tau, tol, max_iter)
    coef, basis = _quantreg_polish(x, yv, tau, coef_ip)
    if basis is not None:
        coef = _tilt_walk(x, yv, tau, coef, basis)

    obj = check_loss(yv - x @ coef, tau)
    return FitResult(
        coefficients=coef,
        coef_cov=None,
        resid_var=None,
        loglik=None,
        converged=True,
        iterations=iters,
        column_names=column_names,
        diagnostics={"objective": obj, "duality_gap": gap, "tau": tau, "n": n},
    )


def _quantreg_interior_point(
    x: np.ndarray, y: np.ndarray, tau: float, tol: float, max_iter: int
) -> tuple[np.ndarray, int, float]:
    n, p = x.shape
    c = -y
    big_step = 0.99995

    a = np.full(n, 1.0 - tau)
    s = np.full(n, tau)
    phi = np.linalg.lstsq(x, c, rcond=None)[0]
    r = c - x @ phi
    eps0 = 1e-8 * (1.0 + float(np.max(np.abs(y))))
    z = np.maximum(r, 0.0) + eps0
    w = np.maximum(-r, 0.0) + eps0

    scale = 1.0 + abs(float(c @ a))
    gap = float(a @ z + s @ w)
    it = 0
    # The normal matrix degrades by construction as iterates approach the
    # boundary; conditioning warnings from late iterations are expected and
    # the vertex polish restores full accuracy.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        while gap > tol * scale and it < max_iter:
            it += 1
            q = 1.0 / (z / a + w / s)
            zw = z - w

            xq = x * q[:, None]
            m = x.T @ xq
            try:
                dphi_aff = linalg.solve(m, x.T @ (q * zw), assume_a="pos")
            except linalg.LinAlgError:
                m = m + np.eye(p) * (1e-12 * np.trace(m) + 1e-300)
                dphi_aff = linalg.solve(m, x.T @ (q * zw))
            da_aff = q * (x @ dphi_aff - zw)
            dz_aff = -z - (z / a) * da_aff
            dw_aff = -w + (w / s) * da_aff

            ap = min(_max_step(a, da_aff, s, -da_aff), 1.0)
            ad = min(_max_step(z, dz_aff, w, dw_aff), 1.0)
            mu = gap / (2.0 * n)
            mu_aff = float(
                (a + ap * da_aff) @ (z + ad * dz_aff) + (s - ap * da_aff) @ (w + ad * dw_aff)
            ) / (2.0 * n)
            sigma = min(max((mu_aff / mu) ** 3 if mu > 0 else 0.0, 0.0), 1.0)

            target = sigma * mu
            rhs = zw + target * (1.0 / s - 1.0 / a) + (da_aff * dz_aff) / a + (da_aff * dw_aff) / s
            try:
                dphi = linalg.solve(m, x.T @ (q * rhs), assume_a="pos")
            except linalg.LinAlgError:
                dphi = linalg.solve(m + np.eye(p) * 1e-12 * np.trace(m), x.T @ (q * rhs))
            da = q * (x @ dphi - rhs)
            dz = -z + target / a - (da_aff * dz_aff) / a - (z / a) * da
            dw = -w + target / s + (da_aff * dw_aff) / s + (w / s) * da

            ap = big_step * _max_step(a, da, s, -da)
            ad = big_step * _max_step(z, dz, w, dw)
            ap, ad = min(ap, 1.0), min(ad, 1.0)

            a = a + ap * da
            s = s - ap * da
            phi = phi + ad * dphi
            z = z + ad * dz
            w = w + ad * dw
            gap = float(a @ z + s @ w)
            scale = 1.0 + abs(float(c @ a))

    return -phi, it, gap


def _max_step(v1: np.ndarray, d1: np.ndarray, v2: np.ndarray, d2: np.ndarray) -> float:
    """Largest alpha keeping v1 + alpha*d1 > 0 and v2 + alpha*d2 > 0."""
    alpha = np.inf
    for v, d in ((v1, d1), (v2, d2)):
        neg = d < 0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-v[neg] / d[neg])))
    return min(alpha, 1e12)


def _quantreg_polish(
    x: np.ndarray, y: np.ndarray, tau: float, coef_ip: np.ndarray
) -> tuple[np.ndarray, list[int] | None]:
    n, p = x.shape
    resid = y - x @ coef_ip
    scale = 1.0 + float(np.median(np.abs(y - np.median(y)))) if n > 1 else 1.0
    tie = 1e-6 * scale
    order = np.lexsort((np.arange(n), resid, np.round(np.abs(resid) / tie)))

    basis: list[int] = []
    ortho = np.zeros((p, p))
    rank = 0
    for i in order:
        row = x[i]
        proj = row - ortho[:rank].T @ (ortho[:rank] @ row)
        norm = np.linalg.norm(proj)
        if norm > 1e-10 * max(np.linalg.norm(row), 1.0):
            ortho[rank] = proj / norm
            rank += 1
            basis.append(i)
            if rank == p:
                break
    if rank < p:
        return coef_ip, None

    try:
        coef_v = linalg.solve(x[basis], y[basis])
    except linalg.LinAlgError:
        return coef_ip, None

    obj_ip = check_loss(y - x @ coef_ip, tau)
    obj_v = check_loss(y - x @ coef_v, tau)
    if obj_v <= obj_ip + 1e-12 * (1.0 + obj_ip):
        return coef_v, basis
    return coef_ip, None


def _tilt_walk(
    x: np.ndarray, y: np.ndarray, tau: float, coef: np.ndarray, basis: list[int]
) -> np.ndarray:
    """Resolve non-unique optima toward the smallest aggregate fitted value.

    From an optimal vertex, walks along edges of the solution face on which
    the check loss is flat, as long as the walk reduces sum(X b). With a
    unique optimum no edge is flat and the vertex is returned unchanged; for
    an intercept-only even-n median this selects the lower middle point.
    """
    n, p = x.shape
    tilt = x.sum(axis=0)
    scale = 1.0 + float(np.max(np.abs(y)))
    flat_tol = 1e-9 * scale
    zero_tol = 1e-9 * scale
    obj0 = check_loss(y - x @ coef, tau)

    cur = np.array(coef, dtype=float)
    cur_basis = list(basis)
    for _ in range(50):
        resid = y - x @ cur
        try:
            inv_b = linalg.inv(x[cur_basis])
        except linalg.LinAlgError:
            break
        moved = False
        for j in range(p):
            for sign in (1.0, -1.0):
                v = sign * inv_b[:, j]
                xv = x @ v
                at_zero = np.abs(resid) <= zero_tol
                deriv = float(
                    -tau * xv[(resid > zero_tol)].sum()
                    + (1.0 - tau) * xv[(resid < -zero_tol)].sum()
                    + np.maximum((1.0 - tau) * xv[at_zero], -tau * xv[at_zero]).sum()
                )
                if deriv > flat_tol or tilt @ v >= -flat_tol:
                    continue
                # Walk to the nearest blocking row (residual crossing zero).
                movable = (np.abs(xv) > 1e-12) & ~at_zero
                ratio = np.divide(resid, xv, out=np.full(n, np.inf), where=movable)
                ratio[ratio <= 0] = np.inf
                blocker = int(np.argmin(ratio))
                step = float(ratio[blocker])
                if not np.isfinite(step) or step <= 0:
                    continue
                cand = cur + step * v
                if check_loss(y - x @ cand, tau) > obj0 + 1e-12 * (1.0 + obj0):
                    continue
                cur = cand
                cur_basis[j] = blocker
                moved = True
                break
            if moved:
                break
        if not moved:
            break
    return cur


# ---------------------------------------------------------------------------
# truncated-normal sampling

_TAIL_SWITCH = 4.0


def trunc_normal_draw(
    mean,
    sd,
    lower,
    rng: np.random.Generator,
    size: int | None = None,
):
    """Draws from N(mean, sd^2) conditioned on the value exceeding ``lower``.

    The body regime inverts the survival function directly; for standardized
    bounds above 4 an exponential-proposal rejection sampler takes over, so
    the draw stays exact and fast arbitrarily deep in the tail. Scalar inputs
    with ``size=None`` give a scalar; otherwise inputs broadcast.
    """
    mean_a = np.asarray(mean, dtype=float)
    sd_a = np.asarray(sd, dtype=float)
    lower_a = np.asarray(lower, dtype=float)
    if np.any(sd_a <= 0):
        raise ValueError("sd must be positive")
    if not np.all(np.isfinite(lower_a)):
        raise ValueError("lower bound must be finite")

    scalar = size is None and mean_a.ndim == 0 and sd_a.ndim == 0 and lower_a.ndim == 0
    shape = np.broadcast_shapes(mean_a.shape, sd_a.shape, lower_a.shape)
    if size is not None:
        shape = np.broadcast_shapes(shape, (size,))
    mean_b = np.broadcast_to(mean_a, shape)
    sd_b = np.broadcast_to(sd_a, shape)
    lower_b = np.broadcast_to(lower_a, shape)

    alpha = ((lower_b - mean_b) / sd_b).ravel()
    z = np.empty(alpha.size)

    body = alpha <= _TAIL_SWITCH
    if body.any():
        ab = alpha[body]
        tail_prob = np.exp(log_ndtr(-ab))
        u = np.fmax(rng.uniform(size=ab.size), 1e-300)
        z[body] = -ndtri(u * tail_prob)
    tail = ~body
    if tail.any():
        z[tail] = _tail_rejection(alpha[tail], rng)

    out = mean_b + sd_b * z.reshape(shape)
    return float(out) if scalar else out


def _tail_rejection(alpha: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Exponential-proposal rejection for standardized lower bounds > 4."""
    out = np.empty(alpha.size)
    pending = np.arange(alpha.size)
    while pending.size:
        a = alpha[pending]
        rate = 0.5 * (a + np.sqrt(a * a + 4.0))
        cand = a + np.fmax(rng.exponential(size=a.size), 1e-300) / rate
        accept = rng.uniform(size=a.size) <= np.exp(-0.5 * (cand - rate) ** 2)
        out[pending[accept]] = cand[accept]
        pending = pending[~accept]
    return out

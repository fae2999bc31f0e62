"""Weighted Levenberg-Marquardt least squares with bounds and log-space parameters.

The objective is chi2(theta) = sum_i w_i (y_i - f(x_i; theta))**2.  Parameters
marked ``log`` are moved in u = ln(theta), which keeps them positive without
a hard wall.  Remaining bounds are enforced by clipping each trial point.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

MAX_ITERATIONS = 500
FTOL = 1e-10
GTOL = 1e-8
# eigenvalues of the scaled normal matrix below this fraction of the largest are null directions
NULL_RTOL = 1e-10
FD_STEP = 6e-6


@dataclass
class Convergence:
    converged: bool
    iterations: int
    final_gradient_norm: float
    message: str = ""


@dataclass
class FitResult:
    """Outcome of one fit.

    ``parameters``, ``standard_errors`` and ``units`` are keyed by parameter
    name.  An infinite standard error marks an unidentifiable parameter.
    ``reduced_chi2`` is None when there are no degrees of freedom.
    """

    family: str
    parameters: dict
    standard_errors: dict
    units: dict
    reduced_chi2: float | None
    chi2: float
    n_points: int
    n_params: int
    convergence: Convergence
    derived: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    covariance: np.ndarray | None = None
    cost_history: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    @property
    def converged(self):
        return self.convergence.converged

    @property
    def unidentifiable(self):
        return [k for k, v in self.standard_errors.items() if not math.isfinite(v)]

    def value(self, name):
        return self.parameters[name]

    def error(self, name):
        return self.standard_errors[name]

    def to_dict(self):
        d = asdict(self)
        d["covariance"] = None if self.covariance is None else np.asarray(self.covariance).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["convergence"] = Convergence(**d["convergence"])
        if d.get("covariance") is not None:
            d["covariance"] = np.array(d["covariance"], dtype=float)
        return cls(**d)


class _Transform:
    def __init__(self, log_mask):
        self.log = np.asarray(log_mask, bool)

    def to_internal(self, theta):
        u = np.array(theta, dtype=float)
        u[self.log] = np.log(u[self.log])
        return u

    def to_external(self, u):
        theta = np.array(u, dtype=float)
        theta[self.log] = np.exp(np.clip(theta[self.log], -700, 700))
        return theta

    def dtheta_du(self, u):
        d = np.ones_like(u)
        d[self.log] = np.exp(np.clip(u[self.log], -700, 700))
        return d

    def bounds(self, lower, upper):
        lo = np.array(lower, dtype=float)
        hi = np.array(upper, dtype=float)
        with np.errstate(divide="ignore"):
            lo[self.log] = np.where(lo[self.log] > 0, np.log(np.maximum(lo[self.log], 1e-300)), -np.inf)
            hi[self.log] = np.log(hi[self.log])
        return lo, hi


def _numeric_jacobian(fun, theta, f0, lower, upper):
    """Central differences of ``fun`` in theta, one-sided next to bounds."""
    n = len(theta)
    cols = []
    for j in range(n):
        h = FD_STEP * max(abs(theta[j]), 1e-3)
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        can_up, can_dn = up[j] <= upper[j], dn[j] >= lower[j]
        f_up = fun(up) if can_up else None
        f_dn = fun(dn) if can_dn else None
        ok_up = f_up is not None and np.all(np.isfinite(f_up))
        ok_dn = f_dn is not None and np.all(np.isfinite(f_dn))
        if ok_up and ok_dn:
            cols.append((f_up - f_dn) / (2 * h))
        elif ok_up:
            cols.append((f_up - f0) / h)
        elif ok_dn:
            cols.append((f0 - f_dn) / h)
        else:
            cols.append(np.zeros_like(f0))
    return np.column_stack(cols) if cols else np.zeros((len(f0), 0))


def objective(model_fn, theta, x, y, weights):
    r = y - model_fn(x, np.asarray(theta, dtype=float))
    return float(np.sum(weights * r * r))


def objective_gradient(model_fn, theta, x, y, weights, jac=None):
    """Gradient of chi2 with respect to theta: -2 J^T W (y - f)."""
    theta = np.asarray(theta, dtype=float)
    f0 = model_fn(x, theta)
    fun = lambda t: model_fn(x, t)  # noqa: E731
    inf = np.full(len(theta), np.inf)
    J = jac(x, theta) if jac is not None else _numeric_jacobian(fun, theta, f0, -inf, inf)
    return -2.0 * J.T @ (weights * (y - f0))


def _covariance(JtJ, active):
    """Inverse of the normal matrix restricted to identifiable directions.

    Returns (cov, identifiable mask).  Parameters with a component in a null
    direction of the scaled normal matrix get infinite variance.
    """
    n = len(JtJ)
    cov = np.full((n, n), np.nan)
    ok = active & (np.diag(JtJ) > 0)
    for _ in range(n):
        idx = np.flatnonzero(ok)
        if len(idx) == 0:
            break
        sub = JtJ[np.ix_(idx, idx)]
        d = np.sqrt(np.diag(sub))
        scaled = sub / np.outer(d, d)
        w, v = np.linalg.eigh(scaled)
        null = w < NULL_RTOL * max(w.max(), 1e-300)
        if not np.any(null):
            inv = np.linalg.inv(scaled) / np.outer(d, d)
            cov[np.ix_(idx, idx)] = inv
            break
        # drop the parameter with the largest weight in the null space and retry
        weight = np.sum(v[:, null] ** 2, axis=1)
        ok[idx[np.argmax(weight)]] = False
    for j in np.flatnonzero(~ok):
        cov[j, j] = np.inf
    return cov, ok


def least_squares(
    model_fn,
    initial,
    x,
    y,
    weights=None,
    bounds=None,
    names=None,
    units=None,
    log=None,
    jac=None,
    family="generic",
    absolute_sigma=None,
    max_iterations=MAX_ITERATIONS,
):
    """Minimize sum w (y - model_fn(x, theta))**2 by Levenberg-Marquardt.

    Parameters
    ----------
    model_fn : callable
        ``model_fn(x, theta) -> ndarray`` with the shape of ``y``.
    initial : array_like
        Starting point; must be finite and inside ``bounds``.
    weights : array_like, optional
        Positive weights, normally 1/sigma**2.  Defaults to ones.
    bounds : sequence of (lower, upper), optional
    names, units : sequence of str, optional
    log : sequence of bool, optional
        Fit these parameters in log space (they must be > 0).
    jac : callable, optional
        ``jac(x, theta) -> (n_points, n_params)`` derivative of the model.
    absolute_sigma : bool, optional
        Treat weights as exact 1/sigma**2 (default when ``weights`` is
        given).  Otherwise the covariance is scaled by the reduced chi2.

    Returns
    -------
    FitResult
        Never raises on non-convergence; check ``result.converged``.
    """
    theta0 = np.array(initial, dtype=float)
    n = len(theta0)
    y = np.asarray(y, dtype=float)
    if absolute_sigma is None:
        absolute_sigma = weights is not None
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != y.shape or not np.all(w > 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive, finite and shaped like y")
    if not np.all(np.isfinite(theta0)):
        raise ValueError("initial point must be finite")
    names = list(names) if names is not None else [f"p{i}" for i in range(n)]
    units = list(units) if units is not None else [""] * n
    lower = np.array([b[0] for b in bounds], dtype=float) if bounds is not None else np.full(n, -np.inf)
    upper = np.array([b[1] for b in bounds], dtype=float) if bounds is not None else np.full(n, np.inf)
    if np.any(theta0 < lower) or np.any(theta0 > upper):
        raise ValueError("initial point outside bounds")
    tf = _Transform(log if log is not None else np.zeros(n, bool))
    if np.any(theta0[tf.log] <= 0):
        raise ValueError("log-space parameters must start > 0")
    u_lo, u_hi = tf.bounds(lower, upper)
    sw = np.sqrt(w)

    def resid(u):
        with np.errstate(all="ignore"):
            try:
                f = model_fn(x, tf.to_external(u))
            except (ValueError, ArithmeticError):
                return np.full_like(y, np.inf)
        return sw * (f - y)

    def jacobian(u, r0):
        theta = tf.to_external(u)
        if jac is not None:
            return sw[:, None] * jac(x, theta) * tf.dtheta_du(u)
        return _numeric_jacobian(resid, u, r0, u_lo, u_hi)

    u = tf.to_internal(theta0)
    r = resid(u)
    cost = float(r @ r)
    if not math.isfinite(cost):
        raise ValueError("model is not finite at the initial point")
    history = [cost]
    lam = 1e-3
    scale = np.zeros(n)
    converged, message = False, "maximum iterations reached"
    it = 0
    gnorm = np.inf
    J = jacobian(u, r)
    for it in range(1, max_iterations + 1):
        g = J.T @ r
        # projected gradient: ignore components pushing against an active bound
        free = ~(((u <= u_lo) & (g > 0)) | ((u >= u_hi) & (g < 0)))
        gnorm = float(np.linalg.norm(2 * g[free]))
        if gnorm < GTOL or cost == 0.0:
            converged, message = True, "gradient below tolerance"
            it -= 1
            break
        JtJ = J.T @ J
        scale = np.maximum(scale, np.diag(JtJ))
        damp = np.where(scale > 0, scale, 1.0)
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(JtJ + lam * np.diag(damp), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            u_new = np.clip(u + step, u_lo, u_hi)
            r_new = resid(u_new)
            cost_new = float(r_new @ r_new)
            if math.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                break
            lam *= 10
        if not accepted:
            converged, message = True, "no decreasing step; at numerical minimum"
            break
        rel = (cost - cost_new) / max(cost, 1e-300)
        u, r, cost = u_new, r_new, cost_new
        history.append(cost)
        lam = max(lam / 10, 1e-12)
        J = jacobian(u, r)
        if rel < FTOL:
            converged, message = True, "relative objective change below tolerance"
            g = J.T @ r
            free = ~(((u <= u_lo) & (g > 0)) | ((u >= u_hi) & (g < 0)))
            gnorm = float(np.linalg.norm(2 * g[free]))
            break

    theta = tf.to_external(u)
    n_points = int(y.size)
    dof = n_points - n
    chi2 = cost
    reduced = chi2 / dof if dof > 0 else None
    at_bound = (u <= u_lo) | (u >= u_hi)
    JtJ = J.T @ J
    cov_u, ident = _covariance(JtJ, np.ones(n, bool))
    if not absolute_sigma and reduced is not None:
        cov_u = cov_u * reduced
    d = tf.dtheta_du(u)
    cov = cov_u * np.outer(d, d)
    for j in np.flatnonzero(~ident):
        cov[j, j] = np.inf
    errors = np.sqrt(np.where(np.isnan(np.diag(cov)), np.inf, np.diag(cov)))
    flags = []
    if not converged:
        flags.append("not-converged")
    for j in np.flatnonzero(~ident):
        flags.append(f"unidentifiable:{names[j]}")
    for j in np.flatnonzero(at_bound):
        flags.append(f"at-bound:{names[j]}")
    if absolute_sigma and dof > 0 and stats.chi2.sf(chi2, dof) < 1e-3:
        flags.append("poor-fit")
    return FitResult(
        family=family,
        parameters={k: float(v) for k, v in zip(names, theta)},
        standard_errors={k: float(e) for k, e in zip(names, errors)},
        units=dict(zip(names, units)),
        reduced_chi2=reduced,
        chi2=chi2,
        n_points=n_points,
        n_params=n,
        convergence=Convergence(bool(converged), int(it), gnorm, message),
        flags=flags,
        covariance=cov,
        cost_history=history,
    )


def reweighted_least_squares(model_fn, initial, x, y, variance, passes=2, **kwargs):
    """Least squares with weights recomputed from the fitted model.

    Weighting by observed Poisson counts pulls the fit towards downward
    fluctuations.  After a first fit with the supplied weights, each pass
    refits from the current solution with weights 1 / variance(model).
    """
    res = least_squares(model_fn, initial, x, y, **kwargs)
    for _ in range(passes):
        theta = np.array(list(res.parameters.values()))
        var = np.asarray(variance(model_fn(x, theta)), dtype=float)
        if not np.all(np.isfinite(var) & (var > 0)):
            break
        kwargs["weights"] = 1.0 / var
        res = least_squares(model_fn, theta, x, y, **kwargs)
    return res


def counts_variance(floor=1e-2):
    """Poisson variance of a count model, floored to stay positive."""
    return lambda f: np.maximum(f, floor)


def scaled_variance(y, sigma):
    """Model-based variance for data normalized from counts.

    With y = c / s and sigma = sqrt(c) / s the variance implied by a model
    value f is sigma**2 f / y; bins with y = 0 keep sigma**2.
    """
    y = np.asarray(y, dtype=float)
    s2 = np.asarray(sigma, dtype=float) ** 2
    pos = y > 0
    ratio = np.divide(s2, y, out=np.zeros_like(s2), where=pos)

    def var(f):
        return np.where(pos & (f > 0), ratio * f, s2)

    return var


def propagate(fn, theta, cov):
    """Delta-method standard error of a scalar fn(theta)."""
    theta = np.asarray(theta, dtype=float)
    f0 = fn(theta)
    grad = np.zeros(len(theta))
    for j in range(len(theta)):
        h = FD_STEP * max(abs(theta[j]), 1e-8)
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        grad[j] = (fn(up) - fn(dn)) / (2 * h)
    used = grad != 0
    sub = cov[np.ix_(used, used)]
    if not np.all(np.isfinite(sub)):
        return float(f0), math.inf
    var = grad[used] @ sub @ grad[used]
    return float(f0), float(math.sqrt(max(var, 0.0)))

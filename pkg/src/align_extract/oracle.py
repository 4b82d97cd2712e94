"""Brute-force per-state solvers used to validate the closed-form extraction rules.

Nothing in this module uses the multiplier solver or the weight formulas:
the constrained problem is minimized directly over the probability simplex
by projected gradient inside an augmented-Lagrangian loop, optionally
cross-checked against an exhaustive grid when there are at most three
actions. The log-regularized soft problem is solved in logit space with
L-BFGS instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import ConfigurationError, InfeasibleError, NumericError
from .multipliers import LOG, Regularizer

_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class SimplexInstance:
    mu_row: np.ndarray
    q_row: np.ndarray
    v_target: float
    regularizer: Regularizer = field(default=LOG)
    eta: float = 1.0

    def __post_init__(self):
        mu = np.asarray(self.mu_row, dtype=float).ravel()
        q = np.asarray(self.q_row, dtype=float).ravel()
        if mu.shape != q.shape or mu.size == 0:
            raise ConfigurationError("mu_row and q_row must be non-empty and of equal length")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-9:
            raise ConfigurationError("mu_row must be a probability vector")
        object.__setattr__(self, "mu_row", mu)
        object.__setattr__(self, "q_row", q)
        object.__setattr__(self, "v_target", float(self.v_target))

    @property
    def support(self) -> np.ndarray:
        return self.mu_row > 0

    def to_dict(self) -> dict:
        return {"mu_row": self.mu_row.tolist(), "q_row": self.q_row.tolist(), "v_target": self.v_target,
                "regularizer": self.regularizer.kind, "eta": self.eta}


def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``y`` onto the probability simplex (sort method)."""
    y = np.asarray(y, dtype=float)
    n = y.shape[-1]
    u = -np.sort(-y, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    k = np.arange(1, n + 1)
    rho = np.sum(u - css / k > 0, axis=-1, keepdims=True)
    theta = np.take_along_axis(css, rho - 1, axis=-1) / rho
    return np.maximum(y - theta, 0.0)


def _f_value(pi, mu, reg):
    r = pi / mu
    if reg.kind == "log":
        safe = np.where(r > 0, r, 1.0)
        return np.sum(np.where(r > 0, pi * np.log(safe), 0.0), axis=-1)
    return np.sum(pi * (r - 1.0), axis=-1)


def _f_grad(pi, mu, reg):
    r = pi / mu
    if reg.kind == "log":
        return np.log(np.maximum(r, _LOG_FLOOR)) + 1.0
    return 2.0 * r - 1.0


def regularization_cost(pi, mu, reg: Regularizer = LOG) -> float:
    """``E_pi[f(pi / mu)]`` over the support of ``mu``."""
    pi = np.asarray(pi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    keep = mu > 0
    if np.any(pi[~keep] > 0):
        return np.inf
    return float(_f_value(pi[keep], mu[keep], reg))


def _restart_points(n, restarts, rng, mu):
    pts = [mu.copy()]
    if restarts > 1:
        pts.extend(rng.dirichlet(np.ones(n), size=restarts - 1))
    return np.array(pts)


def _feasible_2(q, v):
    # two actions: the alignment line meets the simplex in one point
    p0 = (q[1] - v) / (q[1] - q[0])
    return np.array([p0, 1.0 - p0])


def grid_ipf(instance: SimplexInstance, resolution: float = 1e-3):
    """Exhaustive search along the feasible segment for up to three supported actions.

    Returns ``(row, objective, l1_bound)`` where ``l1_bound`` is the L1
    distance covered by one grid step.
    """
    keep = instance.support
    q, mu = instance.q_row[keep], instance.mu_row[keep]
    n = q.size
    full = np.zeros_like(instance.mu_row)
    if n > 3:
        raise ConfigurationError("grid search is limited to three supported actions")
    if n == 1:
        if not np.isclose(q[0], instance.v_target, atol=1e-12):
            raise InfeasibleError("single action cannot match V")
        full[keep] = 1.0
        return full, 0.0, 0.0
    if n == 2:
        if q[0] == q[1]:
            raise InfeasibleError("equal Q-values leave the target off the line")
        p = _feasible_2(q, instance.v_target)
        if np.any(p < 0):
            raise InfeasibleError("target outside the Q hull")
        full[keep] = p
        return full, float(_f_value(p, mu, instance.regularizer)), 0.0
    # pick a free coordinate k so the remaining pair has distinct Q
    for k, (i, j) in ((2, (0, 1)), (1, (0, 2)), (0, (1, 2))):
        if q[i] != q[j]:
            break
    else:
        raise InfeasibleError("all Q-values equal")
    t = np.arange(0.0, 1.0 + resolution / 2, resolution)
    # pi_i + pi_j = 1 - t, q_i pi_i + q_j pi_j = V - t q_k
    pj = (instance.v_target - t * q[k] - (1.0 - t) * q[i]) / (q[j] - q[i])
    pi_ = 1.0 - t - pj
    rows = np.zeros((t.size, 3))
    rows[:, k], rows[:, i], rows[:, j] = t, pi_, pj
    ok = np.all(rows >= 0, axis=1)
    if not ok.any():
        raise InfeasibleError("no feasible grid point")
    rows = rows[ok]
    obj = _f_value(rows, mu, instance.regularizer)
    best = int(np.argmin(obj))
    full[keep] = rows[best]
    dpj = -(q[k] - q[i]) / (q[j] - q[i])
    l1_step = resolution * (1.0 + abs(dpj) + abs(-1.0 - dpj))
    return full, float(obj[best]), l1_step


def oracle_ipf(instance: SimplexInstance, iters: int = 5000, restarts: int = 3, tol: float = 1e-9,
               seed: int = 0, grid_check: bool = True) -> np.ndarray:
    """Minimize ``E_pi[f(pi/mu)]`` on the simplex subject to ``E_pi[Q] = V``.

    Augmented Lagrangian on the (rescaled) alignment constraint with penalty
    doubling from 1, up to 20 rounds, inner projected gradient; the best of
    ``restarts`` starts is returned. A grid cross-check runs for at most three
    supported actions and raises :class:`NumericError` on disagreement.
    """
    keep = instance.support
    q, mu = instance.q_row[keep], instance.mu_row[keep]
    v = instance.v_target
    lo, hi = q.min(), q.max()
    if hi - lo <= 1e-12:
        if abs(v - lo) > 1e-12:
            raise InfeasibleError("single supported Q-value cannot match V")
        out = np.zeros_like(instance.mu_row)
        out[keep] = mu
        return out
    if not (lo < v < hi):
        raise InfeasibleError(f"V={v:.6g} outside the Q hull ({lo:.6g}, {hi:.6g})")
    reg = instance.regularizer
    center, scale = 0.5 * (hi + lo), 0.5 * (hi - lo)
    qt, vt = (q - center) / scale, (v - center) / scale
    rng = np.random.default_rng(seed)
    x = _restart_points(q.size, restarts, rng, mu)
    lam = np.zeros(x.shape[0])
    rho = 1.0
    for _ in range(20):
        lam_c = lam.copy()
        x = _al_inner(x, mu, qt, vt, lam_c, rho, reg, iters, tol)
        c = x @ qt - vt
        lam = lam + rho * c
        rho *= 2.0
        if np.all(np.abs(c) * scale < tol):
            break
    c = x @ qt - vt
    obj = _f_value(x, mu, reg)
    feasible = np.abs(c) * scale < tol
    if not feasible.any():
        raise NumericError("augmented Lagrangian left the alignment constraint violated",
                           residual=float(np.min(np.abs(c)) * scale))
    best = int(np.argmin(np.where(feasible, obj, np.inf)))
    out = np.zeros_like(instance.mu_row)
    out[keep] = x[best]
    if grid_check and q.size <= 3:
        g_row, g_obj, l1_step = grid_ipf(instance)
        gap = float(np.abs(g_row - out).sum())
        if obj[best] > g_obj + 1e-9 or gap > 1.5 * l1_step + 1e-6:
            raise NumericError(f"grid cross-check disagrees with the oracle (L1 gap {gap:.3e})", residual=gap)
    return out


def _al_inner(x, mu, qt, vt, lam, rho, reg, iters, tol):
    rows = []
    for r in range(x.shape[0]):
        lam_r = lam[r]

        def value(p, lam_r=lam_r):
            c = p @ qt - vt
            return float(_f_value(p, mu, reg)) + lam_r * c + 0.5 * rho * c * c

        def grad(p, lam_r=lam_r):
            c = p @ qt - vt
            return _f_grad(p, mu, reg) + (lam_r + rho * c) * qt

        rows.append(_apg(x[r], value, grad, iters, tol))
    return np.array(rows)


def _apg(x0, value, grad, iters, tol):
    """Accelerated projected gradient with backtracking and adaptive restart.

    The step test is the local Lipschitz bound ``d . (g(x+) - g(y)) <= |d|^2 / t``,
    which unlike a function-value test keeps working at rounding level.
    Stops when the gradient-mapping norm ``|x - P(x - t g)|_inf / t`` drops
    below ``tol``.
    """
    x = x0.copy()
    y = x.copy()
    gy = grad(y)
    t, k = 1.0, 1.0
    for _ in range(iters):
        while True:
            x_new = project_simplex(y - t * gy)
            d = x_new - y
            g_new = grad(x_new)
            dd = d @ d
            if d @ (g_new - gy) <= dd / t or dd == 0.0:
                break
            t *= 0.5
            if t < 1e-18:
                return x
        if np.max(np.abs(d)) / t < tol:
            return x_new
        k_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * k * k))
        if gy @ (x_new - x) > 0:
            # momentum overshoots: restart from the plain step
            k_new = 1.0
            y, gy = x_new, g_new
        else:
            y = project_simplex(x_new + ((k - 1.0) / k_new) * (x_new - x))
            gy = grad(y)
        x, k = x_new, k_new
        t = min(t * 1.25, 1e6)
    return x


def _pg_rows(x, value, grad, iters, tol):
    """Run :func:`_apg` on each row of ``x`` (rows are restarts)."""
    return np.array([_apg(row, lambda p: float(value(p[None, :], None)[0]),
                          lambda p: grad(p[None, :], None)[0], iters, tol) for row in x])


def _logit_soft(p0, mu, pen, iters, tol):
    """Minimize ``sum p (log(p/mu) + pen)`` over ``p = softmax(z)`` with L-BFGS.

    The log-regularized soft optimum is strictly positive, so the logit
    parametrization loses nothing and avoids the unbounded curvature of
    ``x log x`` at the simplex boundary.
    """
    log_mu = np.log(mu)

    def fun(z):
        logp = z - logsumexp(z)
        p = np.exp(logp)
        c = logp - log_mu + pen
        obj = p @ c
        return obj, p * (c - obj)

    z0 = np.log(np.maximum(p0, 1e-12))
    res = minimize(fun, z0, jac=True, method="L-BFGS-B",
                   options={"maxiter": iters, "gtol": tol, "ftol": 0.0, "maxcor": 30})
    return np.exp(res.x - logsumexp(res.x))


def oracle_ipf_soft(instance: SimplexInstance, v_mode: str = "fixed", iters: int = 5000, restarts: int = 3,
                    tol: float = 1e-10, seed: int = 0):
    """Minimize ``E_pi[f(pi/mu) + eta (Q - v)^2]`` on the simplex.

    ``fixed`` keeps ``v = instance.v_target``. ``joint`` alternates the
    simplex minimization with ``v <- E_pi[Q]`` until ``v`` stops moving.
    Returns ``(row, v_used)``.
    """
    if instance.eta <= 0:
        raise ConfigurationError("eta must be > 0")
    if v_mode not in ("fixed", "joint"):
        raise ConfigurationError(f"v_mode must be 'fixed' or 'joint', got {v_mode!r}")
    keep = instance.support
    q, mu = instance.q_row[keep], instance.mu_row[keep]
    reg, eta = instance.regularizer, instance.eta
    rng = np.random.default_rng(seed)

    def solve(v, start):
        pen = eta * (q - v) ** 2

        def value(p, rows):
            return _f_value(p, mu, reg) + p @ pen

        def grad(p, rows):
            return _f_grad(p, mu, reg) + pen

        if reg.kind == "log":
            x = np.array([_logit_soft(row, mu, pen, iters, tol) for row in start])
        else:
            x = _pg_rows(start.copy(), value, grad, iters, tol)
        obj = _f_value(x, mu, reg) + x @ pen
        return x[int(np.argmin(obj))]

    start = _restart_points(q.size, restarts, rng, mu)
    v = instance.v_target
    row = solve(v, start)
    if v_mode == "joint":
        for _ in range(10_000):
            v_new = float(row @ q)
            if abs(v_new - v) < tol:
                v = v_new
                break
            v = v_new
            row = solve(v, np.vstack([row, start[1:]]))
        else:
            raise NumericError("joint soft alternation did not settle", residual=abs(v_new - v))
    out = np.zeros_like(instance.mu_row)
    out[keep] = row
    return out, float(v)


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    primal_norm: float
    primal_align: float
    complementary_slackness: float
    dual_feasibility: float
    lambda_row: np.ndarray

    def max_residual(self) -> float:
        return max(abs(self.stationarity), abs(self.primal_norm), abs(self.primal_align),
                   abs(self.complementary_slackness), abs(self.dual_feasibility))

    def to_dict(self) -> dict:
        return {"stationarity": self.stationarity, "primal_norm": self.primal_norm,
                "primal_align": self.primal_align, "complementary_slackness": self.complementary_slackness,
                "dual_feasibility": self.dual_feasibility, "lambda_row": self.lambda_row.tolist()}


def kkt_check(pi_row, mu_row, q_row, v_target, alpha, beta, reg: Regularizer = LOG) -> KktReport:
    """Residuals of the first-order optimality system at ``pi`` with multipliers ``(alpha, beta)``.

    On positive-probability actions ``h'(pi/mu) + alpha + beta Q`` should
    vanish (stationarity, and its product with ``pi`` is the slackness
    residual). On zero-probability actions the slack multiplier is
    ``max(h'(0) + alpha + beta Q, 0)``; the negative part is reported as
    dual infeasibility.
    """
    pi = np.asarray(pi_row, dtype=float)
    mu = np.asarray(mu_row, dtype=float)
    q = np.asarray(q_row, dtype=float)
    lam = np.zeros_like(pi)
    keep = mu > 0
    if np.any(pi[~keep] > 0):
        stationarity = np.inf
    else:
        stationarity = 0.0
    with np.errstate(divide="ignore"):
        raw = reg.h_prime(np.where(keep, pi, 0.0) / np.where(keep, mu, 1.0)) + alpha + beta * q
    pos = keep & (pi > 0)
    zero = keep & (pi <= 0)
    if pos.any():
        stationarity = max(stationarity, float(np.max(np.abs(raw[pos]))))
    lam[zero] = np.maximum(raw[zero], 0.0)
    dual = float(np.max(np.maximum(-raw[zero], 0.0))) if zero.any() else 0.0
    slack = float(np.max(np.abs(raw[pos] * pi[pos]))) if pos.any() else 0.0
    primal_norm = max(abs(float(pi.sum()) - 1.0), float(np.max(np.maximum(-pi, 0.0))))
    primal_align = float(pi @ q) - float(v_target)
    return KktReport(float(stationarity), primal_norm, primal_align, slack, dual, lam)


def kl_rows(p_row, q_row) -> float:
    """``sum p log(p / q)`` with ``0 log 0 = 0``; ``inf`` if ``p`` puts mass where ``q`` has none."""
    p = np.asarray(p_row, dtype=float)
    q = np.asarray(q_row, dtype=float)
    pos = p > 0
    if np.any(q[pos] <= 0):
        return np.inf
    return float(max(np.sum(p[pos] * np.log(p[pos] / q[pos])), 0.0))

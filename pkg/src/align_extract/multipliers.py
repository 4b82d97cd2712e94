"""Per-state Lagrange multipliers of the alignment-constrained extraction problem.

At each state the aligned policy has the form
``pi(a) = mu(a) * max(g(-alpha - beta * Q(a)), 0)`` where ``g`` inverts the
derivative of ``h(x) = x f(x)``. ``alpha`` normalizes the row and ``beta``
enforces ``E_pi[Q] = V``.

For ``f = log`` the normalizer eliminates analytically and ``beta`` is the
unique root of a monotone 1-D function, solved by bisection. The gradient
path works for both regularizers directly on the dual objective.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigurationError, InfeasibleError

CONVERGED, INFEASIBLE, CLAMPED, UNVISITED = "converged", "infeasible", "clamped", "unvisited"
GRAD_CLIP_NORM = 1.0
# |beta * (Q range)| beyond this exhausts double-precision exponent range
_MAX_TILT = 1400.0


@dataclass(frozen=True)
class Regularizer:
    """Behavior-regularization function ``f`` with ``h(x) = x f(x)`` strictly convex."""

    kind: str = "log"

    def __post_init__(self):
        if self.kind not in ("log", "linear"):
            raise ConfigurationError(f"unknown regularizer {self.kind!r}; expected 'log' or 'linear'")

    def f(self, x):
        x = np.asarray(x, dtype=float)
        return np.log(x) if self.kind == "log" else x - 1.0

    def h(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "log":
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)
        return x * (x - 1.0)

    def h_prime(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "log":
            with np.errstate(divide="ignore"):
                return np.log(x) + 1.0
        return 2.0 * x - 1.0

    def g(self, y):
        """Inverse of :meth:`h_prime`."""
        y = np.asarray(y, dtype=float)
        return np.exp(y - 1.0) if self.kind == "log" else 0.5 * y + 0.5

    def objective(self, pi, mu) -> float:
        """``E_pi[f(pi / mu)] = sum_a mu h(pi / mu)`` over ``mu > 0``."""
        pi = np.asarray(pi, dtype=float)
        mu = np.asarray(mu, dtype=float)
        return float(np.sum(mu * self.h(pi / mu)))


LOG = Regularizer("log")
LINEAR = Regularizer("linear")


def _as_row(q_row, mu_row):
    q = np.asarray(q_row, dtype=float).ravel()
    mu = np.asarray(mu_row, dtype=float).ravel()
    if q.shape != mu.shape or q.size == 0:
        raise ConfigurationError("q_row and mu_row must be non-empty and of equal length")
    if np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-9:
        raise ConfigurationError("mu_row must be a probability vector")
    keep = mu > 0
    return q[keep], mu[keep]


def alpha_from_beta_log(beta: float, q_row, mu_row) -> float:
    """Normalizer for the log regularizer: ``alpha = log E_mu[exp(-beta Q)] - 1``."""
    q, mu = _as_row(q_row, mu_row)
    return float(logsumexp(-beta * q, b=mu)) - 1.0


def tilted_mean(beta: float, q, mu) -> float:
    """``E_mu[Q e^{-beta Q}] / E_mu[e^{-beta Q}]``, strictly decreasing in ``beta``."""
    z = -beta * q + np.log(mu)
    p = np.exp(z - z.max())
    return float(p @ q / p.sum())


def _hull_check(q, v, tol):
    lo, hi = q.min(), q.max()
    if hi - lo <= tol:
        if abs(v - lo) <= tol:
            return "degenerate"
        raise InfeasibleError(f"single supported Q-value {lo:.6g} cannot match V={v:.6g}")
    margin = 1e-13 * max(1.0, abs(lo), abs(hi))
    if not (lo + margin < v < hi - margin):
        raise InfeasibleError(f"V={v:.6g} outside the open Q hull ({lo:.6g}, {hi:.6g})")
    return "interior"


def solve_beta_log(q_row, mu_row, v_target: float, tol: float = 1e-12, bracket=None) -> float:
    """Find ``beta`` with ``tilted_mean(beta) = v_target`` by bracketed bisection.

    ``bracket`` is an optional starting interval; it is widened by doubling
    until it straddles the root, so any starting interval gives the same root.
    """
    if tol <= 0:
        raise ConfigurationError("tol must be > 0")
    q, mu = _as_row(q_row, mu_row)
    if _hull_check(q, v_target, tol) == "degenerate":
        return 0.0
    width = q.max() - q.min()
    if bracket is None:
        lo, hi = -1.0 / width, 1.0 / width
    else:
        lo, hi = sorted(float(b) for b in bracket)
        if lo == hi:
            lo, hi = lo - 1.0 / width, hi + 1.0 / width
    limit = _MAX_TILT / width
    # m(beta) decreases: need m(lo) > V > m(hi)
    step = max(hi - lo, 1.0 / width)
    while tilted_mean(lo, q, mu) <= v_target:
        hi, lo = lo, lo - step
        step *= 2.0
        if lo < -limit:
            raise InfeasibleError("beta bracket exceeded the representable range")
    step = max(hi - lo, 1.0 / width)
    while tilted_mean(hi, q, mu) >= v_target:
        lo, hi = hi, hi + step
        step *= 2.0
        if hi > limit:
            raise InfeasibleError("beta bracket exceeded the representable range")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        m = tilted_mean(mid, q, mu)
        if abs(m - v_target) < tol or mid in (lo, hi):
            return float(mid)
        if m > v_target:
            lo = mid
        else:
            hi = mid
    return float(0.5 * (lo + hi))


def multiplier_residuals(alpha: float, beta: float, q_row, mu_row, v_target: float, reg: Regularizer = LOG):
    """Normalization and alignment residuals of ``mu * max(g(-alpha - beta Q), 0)``."""
    q, mu = _as_row(q_row, mu_row)
    w = np.maximum(reg.g(-alpha - beta * q), 0.0)
    return float(mu @ w - 1.0), float(mu @ (q * w) - v_target)


@dataclass(frozen=True)
class MultiplierFit:
    alpha: float
    beta: float
    status: str
    norm_residual: float
    align_residual: float
    iterations: int = 0

    def __iter__(self):
        # unpacks as (alpha, beta)
        return iter((self.alpha, self.beta))


def _dual_value_and_grad(a, b, qt, mu, vt, reg):
    """Objective to minimize (negated L_M for log) and its gradient, in scaled coordinates."""
    arg = -a - b * qt
    if reg.kind == "log":
        e = np.exp(np.minimum(arg - 1.0, 700.0))
        val = mu @ e + a + b * vt
        grad = np.array([1.0 - mu @ e, vt - mu @ (qt * e)])
    else:
        w = np.maximum(0.5 * arg + 0.5, 0.0)
        val = mu @ (w * w) + a + b * vt
        grad = np.array([1.0 - mu @ w, vt - mu @ (qt * w)])
    return float(val), grad


def solve_multipliers_gradient(q_row, mu_row, v_target: float, reg: Regularizer = LOG,
                               lr: float = 0.5, max_iters: int = 100_000, tol: float = 1e-11) -> MultiplierFit:
    """First-order solve of the multiplier objective.

    Log: ascent on ``-E_mu[exp(-alpha - beta Q - 1)] - alpha - beta V``.
    Linear: descent on ``E_mu[1(w > 0) w^2] + alpha + beta V`` with
    ``w = (-alpha - beta Q) / 2 + 1/2``. Both partial derivatives equal the
    normalization and alignment residuals, so the loop stops once both are
    below ``tol``. Q is affinely rescaled to [-1, 1] for conditioning (the
    multipliers map back exactly), steps are clipped to norm 1 and
    backtracked until the objective improves.
    """
    if lr <= 0:
        raise ConfigurationError("lr must be > 0")
    q, mu = _as_row(q_row, mu_row)
    try:
        kind = _hull_check(q, v_target, tol)
    except InfeasibleError:
        norm_res, align_res = multiplier_residuals(-1.0, 0.0, q, mu, v_target, reg)
        return MultiplierFit(-1.0, 0.0, INFEASIBLE, norm_res, align_res, 0)
    if kind == "degenerate":
        # h'(1) = 1 for both regularizers, so alpha = -1 gives w = 1
        norm_res, align_res = multiplier_residuals(-1.0, 0.0, q, mu, v_target, reg)
        return MultiplierFit(-1.0, 0.0, CONVERGED, norm_res, align_res, 0)

    center = 0.5 * (q.max() + q.min())
    scale = 0.5 * (q.max() - q.min())
    qt = (q - center) / scale
    vt = (v_target - center) / scale
    # scaled alpha absorbs beta * center: -a - b Q = -(a + b c) - (b s) qt
    x = np.array([-1.0, 0.0])
    val, grad = _dual_value_and_grad(x[0], x[1], qt, mu, vt, reg)
    step = lr
    status = CLAMPED
    it = 0
    for it in range(1, max_iters + 1):
        gnorm = float(np.hypot(*grad))
        # residuals in original units: norm = -g0, align = -(s g1 + c g0)
        if max(abs(grad[0]), abs(scale * grad[1] + center * grad[0])) < tol:
            status = CONVERGED
            break
        direction = -grad * min(1.0, GRAD_CLIP_NORM / gnorm)
        dnorm2 = float(direction @ direction)
        t = step
        while True:
            cand = x + t * direction
            cval, cgrad = _dual_value_and_grad(cand[0], cand[1], qt, mu, vt, reg)
            if cval <= val - 1e-4 * t * dnorm2:
                break
            # near the optimum the decrease falls below float resolution
            flat = abs(cval - val) <= 1e-13 * max(1.0, abs(val))
            if flat and np.hypot(*cgrad) < gnorm:
                break
            if t < 1e-20:
                break
            t *= 0.5
        if t < 1e-20:
            break
        x, val, grad = cand, cval, cgrad
        step = min(lr, 2.0 * t)
    alpha_s, beta_s = x
    beta = beta_s / scale
    alpha = alpha_s - beta * center
    norm_res, align_res = multiplier_residuals(alpha, beta, q, mu, v_target, reg)
    if status != CONVERGED and max(abs(norm_res), abs(align_res)) < tol:
        status = CONVERGED
    return MultiplierFit(float(alpha), float(beta), status, norm_res, align_res, it)


def solve_multipliers(q_row, mu_row, v_target: float, reg: Regularizer = LOG, tol: Optional[float] = None,
                      **gradient_options) -> MultiplierFit:
    """Exact route for ``log`` (alpha elimination + bisection), gradient route for ``linear``."""
    if reg.kind == "linear":
        if tol is not None:
            gradient_options["tol"] = tol
        return solve_multipliers_gradient(q_row, mu_row, v_target, reg, **gradient_options)
    tol = 1e-12 if tol is None else tol
    try:
        beta = solve_beta_log(q_row, mu_row, v_target, tol=tol)
    except InfeasibleError:
        norm_res, align_res = multiplier_residuals(-1.0, 0.0, q_row, mu_row, v_target, reg)
        return MultiplierFit(-1.0, 0.0, INFEASIBLE, norm_res, align_res, 0)
    alpha = alpha_from_beta_log(beta, q_row, mu_row)
    norm_res, align_res = multiplier_residuals(alpha, beta, q_row, mu_row, v_target, reg)
    return MultiplierFit(alpha, beta, CONVERGED, norm_res, align_res, 0)


@dataclass(frozen=True, eq=False)
class MultiplierTable:
    alpha: np.ndarray
    beta: np.ndarray
    residual_norm: np.ndarray
    residual_align: np.ndarray
    status: tuple
    regularizer: Regularizer = field(default=LOG)

    def beta_sign_histogram(self, atol: float = 1e-12) -> dict:
        ok = np.array([s == CONVERGED for s in self.status], dtype=bool)
        b = self.beta[ok]
        return {"negative": int(np.sum(b < -atol)), "zero": int(np.sum(np.abs(b) <= atol)),
                "positive": int(np.sum(b > atol))}

    def to_dict(self) -> dict:
        return {"regularizer": self.regularizer.kind, "alpha": self.alpha.tolist(),
                "beta": self.beta.tolist(), "residual_norm": self.residual_norm.tolist(),
                "residual_align": self.residual_align.tolist(), "status": list(self.status)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def solve_multiplier_table(values, behavior, reg: Regularizer = LOG, tol: Optional[float] = None,
                           **gradient_options) -> MultiplierTable:
    """Solve every visited state of a critic; states without data are marked ``unvisited``."""
    S = values.q.shape[0]
    alpha = np.full(S, -1.0)
    beta = np.zeros(S)
    rn = np.zeros(S)
    ra = np.zeros(S)
    status = []
    for s in range(S):
        mask = values.support_mask[s]
        if not mask.any():
            status.append(UNVISITED)
            continue
        mu = behavior.probs[s] * mask
        mu = mu / mu.sum()
        fit = solve_multipliers(values.q[s][mask], mu[mask], float(values.v[s]), reg, tol=tol,
                                **gradient_options)
        alpha[s], beta[s], rn[s], ra[s] = fit.alpha, fit.beta, fit.norm_residual, fit.align_residual
        status.append(fit.status)
    return MultiplierTable(alpha, beta, rn, ra, tuple(status), reg)

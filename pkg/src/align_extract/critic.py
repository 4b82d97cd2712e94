"""Tabular implicit Q-learning critic.

V is fit by expectile regression of Q over the dataset actions at each
state, and Q by regression onto ``r + gamma * (1 - done) * V(s')``. In the
tabular case both regressions have exact per-cell minimizers, so training
alternates the two closed-form updates until the tables stop moving.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import BehaviorModel, TransitionDataset
from .errors import ConfigurationError, NumericError

EXPECTILE_MAX_ITERS = 10_000


def expectile_loss(u, tau: float):
    """Asymmetric squared loss ``|tau - 1(u < 0)| * u**2``."""
    u = np.asarray(u, dtype=float)
    out = np.abs(tau - (u < 0)) * u**2
    return float(out) if out.ndim == 0 else out


def _expectile_rows(values: np.ndarray, weights: np.ndarray, tau: float, tol: float) -> np.ndarray:
    """Batched fixed-point iteration; zero weight marks an absent entry.

    Each row must carry positive total weight.
    """
    w = weights / weights.sum(axis=1, keepdims=True)
    x = np.where(w > 0, values, 0.0)
    v = (w * x).sum(axis=1)
    for _ in range(EXPECTILE_MAX_ITERS):
        m = w * np.where(x < v[:, None], 1.0 - tau, tau)
        v_new = (m * x).sum(axis=1) / m.sum(axis=1)
        delta = np.max(np.abs(v_new - v)) if len(v) else 0.0
        v = v_new
        if delta < tol:
            return v
    raise NumericError("expectile iteration did not converge", residual=float(delta))


def solve_state_expectile(values, weights, tau: float, tol: float = 1e-12) -> float:
    """Return the ``tau``-expectile of a discrete distribution.

    Iterates ``v <- sum(w m x) / sum(w m)`` with ``m = |tau - 1(x < v)|``,
    which reaches the exact minimizer once the sign pattern settles.
    """
    if not (0.0 < tau < 1.0):
        raise ConfigurationError(f"tau must lie in (0, 1), got {tau}")
    x = np.asarray(values, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if x.size == 0 or x.shape != w.shape:
        raise ConfigurationError("values and weights must be non-empty and of equal length")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ConfigurationError("weights must be a probability vector")
    return float(_expectile_rows(x[None, :], w[None, :], tau, tol)[0])


@dataclass(frozen=True)
class CriticConfig:
    tau: float = 0.7
    gamma: float = 0.95
    max_sweeps: int = 100_000
    tol: float = 1e-9
    polyak: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise ConfigurationError(f"tau must lie in (0, 1), got {self.tau}")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.tol <= 0:
            raise ConfigurationError("tol must be > 0")
        if self.max_sweeps < 1:
            raise ConfigurationError("max_sweeps must be >= 1")
        if not (0.0 <= self.polyak <= 1.0):
            raise ConfigurationError(f"polyak must lie in [0, 1], got {self.polyak}")


@dataclass(frozen=True, eq=False)
class ValueTables:
    """Learned critic. Unsupported ``(s, a)`` cells hold NaN in ``q``."""

    q: np.ndarray
    v: np.ndarray
    tau: float
    gamma: float
    support_mask: np.ndarray
    sweeps: int = 0
    residual: float = 0.0

    def __post_init__(self):
        for name in ("q", "v", "support_mask"):
            arr = np.array(getattr(self, name), dtype=bool if name == "support_mask" else float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def visited(self) -> np.ndarray:
        return self.support_mask.any(axis=1)

    def to_dict(self) -> dict:
        q = [[None if not m else float(x) for x, m in zip(row, mrow)]
             for row, mrow in zip(self.q, self.support_mask)]
        return {"q": q, "v": self.v.tolist(), "tau": self.tau, "gamma": self.gamma,
                "support_mask": self.support_mask.tolist(), "sweeps": self.sweeps,
                "residual": self.residual}

    @classmethod
    def from_dict(cls, d: dict) -> "ValueTables":
        try:
            mask = np.array(d["support_mask"], dtype=bool)
            q = np.array([[np.nan if x is None else x for x in row] for row in d["q"]], dtype=float)
            return cls(q=q, v=np.array(d["v"], dtype=float), tau=float(d["tau"]),
                       gamma=float(d["gamma"]), support_mask=mask,
                       sweeps=int(d.get("sweeps", 0)), residual=float(d.get("residual", 0.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed critic document: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ValueTables":
        return cls.from_dict(json.loads(text))


def train_critic(dataset: TransitionDataset, behavior: BehaviorModel, config: CriticConfig) -> ValueTables:
    """Alternate exact Q and V regressions to a joint fixed point.

    The expectile at each state is taken over its dataset-supported actions,
    weighted by ``behavior.probs`` renormalized to that support (the
    empirical action frequencies when smoothing is 0). States never seen as
    ``s`` keep ``V = 0``.
    """
    if len(dataset) == 0:
        raise ConfigurationError("cannot train a critic on an empty dataset")
    S, A = behavior.probs.shape
    if dataset.s.max() >= S or dataset.s_next.max() >= S or dataset.a.max() >= A:
        raise ConfigurationError("dataset ids exceed the behavior model's state/action space")
    flat = dataset.s * A + dataset.a
    counts = np.bincount(flat, minlength=S * A).reshape(S, A)
    mask = counts > 0
    visited = mask.any(axis=1)
    weights = np.where(mask, behavior.probs, 0.0)[visited]
    reward_mean = np.bincount(flat, weights=dataset.r, minlength=S * A).reshape(S, A)
    reward_mean = np.divide(reward_mean, counts, out=np.zeros((S, A)), where=mask)
    cont = (~dataset.done).astype(float)
    gamma, tau, tol = config.gamma, config.tau, config.tol

    v = np.zeros(S)
    q = np.zeros((S, A))
    q_target = q.copy()
    residual = np.inf
    for sweep in range(1, config.max_sweeps + 1):
        boot = np.bincount(flat, weights=cont * v[dataset.s_next], minlength=S * A).reshape(S, A)
        q_new = reward_mean + gamma * np.divide(boot, counts, out=np.zeros((S, A)), where=mask)
        if config.polyak > 0:
            q_target = (1.0 - config.polyak) * q_target + config.polyak * q_new
        else:
            q_target = q_new
        v_new = np.zeros(S)
        v_new[visited] = _expectile_rows(q_target[visited], weights, tau, tol * 1e-3)
        residual = max(np.max(np.abs(q_new - q)), np.max(np.abs(v_new - v)))
        q, v = q_new, v_new
        if residual < tol:
            break
    else:
        raise NumericError(f"critic did not converge within {config.max_sweeps} sweeps", residual=float(residual))
    return ValueTables(q=np.where(mask, q_target, np.nan), v=v, tau=tau, gamma=gamma,
                       support_mask=mask, sweeps=sweep, residual=float(residual))

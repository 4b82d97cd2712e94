"""Weight families and policy extraction.

Every method produces a policy of the form ``pi(a|s) ∝ mu(a|s) w(s, a)``
over the dataset-supported actions at ``s``. The weight functions accept
scalars or arrays.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .critic import ValueTables
from .dataset import BehaviorModel
from .errors import ConfigurationError, DegenerateStateError
from .multipliers import (CONVERGED, LOG, UNVISITED, MultiplierFit, MultiplierTable,
                          Regularizer, solve_multipliers)

log = logging.getLogger(__name__)

METHODS = ("awr", "align_soft", "align_hard", "idql_expectile", "mixed")
# command-line spellings
METHOD_ALIASES = {"awr": "awr", "align-soft": "align_soft", "align-hard": "align_hard",
                  "idql": "idql_expectile", "mixed": "mixed"}
SIGNS = ("negative", "positive")


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def weight_awr(q, v, awr_alpha: float = 3.0, cap: float = 100.0):
    """``min(exp(awr_alpha * (q - v)), cap)``."""
    if awr_alpha <= 0:
        raise ConfigurationError("awr_alpha must be > 0")
    with np.errstate(over="ignore"):
        w = np.exp(awr_alpha * (np.asarray(q, dtype=float) - v))
    return _out(np.minimum(w, cap))


def weight_align_soft(q, v, eta: float = 3.0, sign: str = "negative", floor: float = 0.0,
                      cap: float = np.inf):
    """``exp(-eta (q - v)^2)`` (``sign='positive'`` flips the exponent), clipped to ``[floor, cap]``."""
    if eta <= 0:
        raise ConfigurationError("eta must be > 0")
    if sign not in SIGNS:
        raise ConfigurationError(f"exponent sign must be one of {SIGNS}, got {sign!r}")
    sigma = -1.0 if sign == "negative" else 1.0
    with np.errstate(over="ignore"):
        w = np.exp(sigma * eta * (np.asarray(q, dtype=float) - v) ** 2)
    return _out(np.clip(w, floor, cap))


def weight_align_hard(q_row, mu_row, v: float, reg: Regularizer, multipliers) -> np.ndarray:
    """``max(g(-alpha - beta Q(a)), 0)`` per action for solved ``(alpha, beta)``.

    ``mu_row`` is accepted for symmetry with the other row-level entry points;
    the weight does not depend on it.
    """
    if isinstance(multipliers, MultiplierFit) and multipliers.status != CONVERGED:
        raise ConfigurationError(f"multipliers are {multipliers.status}; fall back to the soft weight")
    alpha, beta = multipliers
    q = np.asarray(q_row, dtype=float)
    return np.maximum(reg.g(-alpha - beta * q), 0.0)


def weight_idql_expectile(q, v, tau: float = 0.7):
    """Expectile-induced weight: ``tau`` where ``q >= v``, else ``1 - tau``."""
    if not (0.0 < tau < 1.0):
        raise ConfigurationError(f"tau must lie in (0, 1), got {tau}")
    q = np.asarray(q, dtype=float)
    return _out(np.where(q >= v, tau, 1.0 - tau))


def mix_weights(w_align, w_awr, kappa: float):
    if kappa < 0:
        raise ConfigurationError("kappa must be >= 0")
    return _out(np.asarray(w_align, dtype=float) + kappa * np.asarray(w_awr, dtype=float))


@dataclass(frozen=True)
class WeightSpec:
    method: str = "align_soft"
    regularizer: Regularizer = field(default=LOG)
    eta: float = 3.0
    awr_alpha: float = 3.0
    kappa: float = 0.0
    tau: float = 0.7
    weight_floor: float = 0.01
    weight_cap: float = 100.0
    exponent_sign: str = "negative"
    name: Optional[str] = None

    def __post_init__(self):
        method = METHOD_ALIASES.get(self.method, self.method)
        if method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        object.__setattr__(self, "method", method)
        if isinstance(self.regularizer, str):
            object.__setattr__(self, "regularizer", Regularizer(self.regularizer))
        sign = {"neg": "negative", "pos": "positive"}.get(self.exponent_sign, self.exponent_sign)
        object.__setattr__(self, "exponent_sign", sign)
        if sign not in SIGNS:
            raise ConfigurationError(f"exponent sign must be one of {SIGNS}, got {self.exponent_sign!r}")
        if self.eta <= 0 or self.awr_alpha <= 0:
            raise ConfigurationError("eta and awr_alpha must be > 0")
        if self.kappa < 0:
            raise ConfigurationError("kappa must be >= 0")
        if not (0.0 < self.tau < 1.0):
            raise ConfigurationError("tau must lie in (0, 1)")
        if self.weight_floor < 0 or self.weight_cap <= 0 or self.weight_floor >= self.weight_cap:
            raise ConfigurationError("need 0 <= weight_floor < weight_cap")

    @property
    def label(self) -> str:
        return self.name or self.method

    def to_dict(self) -> dict:
        return {"method": self.method, "regularizer": self.regularizer.kind, "eta": self.eta,
                "awr_alpha": self.awr_alpha, "kappa": self.kappa, "tau": self.tau,
                "weight_floor": self.weight_floor, "weight_cap": self.weight_cap,
                "exponent_sign": self.exponent_sign, "name": self.name}

    @classmethod
    def from_dict(cls, d: dict) -> "WeightSpec":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def soft_weights(self, q, v):
        return weight_align_soft(q, v, self.eta, self.exponent_sign, self.weight_floor, self.weight_cap)

    def row_weights(self, q, v):
        """Weights for the state-local methods (everything except ``align_hard``)."""
        if self.method == "awr":
            return weight_awr(q, v, self.awr_alpha, self.weight_cap)
        if self.method == "align_soft":
            return self.soft_weights(q, v)
        if self.method == "idql_expectile":
            return weight_idql_expectile(q, v, self.tau)
        if self.method == "mixed":
            return mix_weights(self.soft_weights(q, v), weight_awr(q, v, self.awr_alpha, self.weight_cap), self.kappa)
        raise ConfigurationError("align_hard weights need solved multipliers")


@dataclass(frozen=True, eq=False)
class ExtractedPolicy:
    probs: np.ndarray
    per_state_weights: np.ndarray
    method_provenance: WeightSpec
    fallback_states: tuple = ()
    multipliers: Optional[MultiplierTable] = None

    def to_dict(self) -> dict:
        w = [[None if np.isnan(x) else float(x) for x in row] for row in self.per_state_weights]
        return {"probs": self.probs.tolist(), "weights": w,
                "fallback_states": list(self.fallback_states),
                "spec": self.method_provenance.to_dict(),
                "multipliers": None if self.multipliers is None else self.multipliers.to_dict()}

    def to_json(self, indent: Optional[int] = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def _support_row(behavior: BehaviorModel, values: ValueTables, s: int):
    mask = values.support_mask[s]
    mu = behavior.probs[s] * mask
    return mask, mu / mu.sum()


def extract_policy_full(behavior: BehaviorModel, values: ValueTables, spec: WeightSpec,
                        multiplier_options: Optional[dict] = None) -> ExtractedPolicy:
    """Reweight the behavior model by ``spec`` at every state.

    States without dataset support keep the behavior row. For
    ``align_hard``, states whose multiplier system is infeasible use the
    soft weight and are listed in ``fallback_states``.
    """
    S, A = behavior.probs.shape
    if values.q.shape != (S, A):
        raise ConfigurationError("behavior model and critic cover different spaces")
    opts = dict(multiplier_options or {})
    probs = np.array(behavior.probs, dtype=float)
    weights = np.full((S, A), np.nan)
    fallback = []
    table = None
    if spec.method == "align_hard":
        alpha = np.full(S, -1.0)
        beta = np.zeros(S)
        rn = np.zeros(S)
        ra = np.zeros(S)
        status = [UNVISITED] * S
    for s in range(S):
        mask = values.support_mask[s]
        if not mask.any():
            continue
        mask, mu = _support_row(behavior, values, s)
        q = values.q[s][mask]
        v = float(values.v[s])
        if spec.method == "align_hard":
            fit = solve_multipliers(q, mu[mask], v, spec.regularizer, **opts)
            alpha[s], beta[s], rn[s], ra[s] = fit.alpha, fit.beta, fit.norm_residual, fit.align_residual
            status[s] = fit.status
            if fit.status == CONVERGED:
                w = weight_align_hard(q, mu[mask], v, spec.regularizer, fit)
            else:
                log.info("state %d: multipliers %s, using soft weight", s, fit.status)
                fallback.append(s)
                w = spec.soft_weights(q, v)
        else:
            w = np.asarray(spec.row_weights(q, v), dtype=float)
        unnorm = mu[mask] * w
        z = unnorm.sum()
        if not z > 0:
            raise DegenerateStateError(s, f"{spec.method} weights sum to zero")
        if np.all(w == w[0]) and not np.any(behavior.probs[s][~mask]):
            # constant weight: keep the behavior row bit for bit instead of renormalizing it
            row = np.array(behavior.probs[s], dtype=float)
        else:
            row = np.zeros(A)
            row[mask] = unnorm / z
        probs[s] = row
        weights[s, mask] = w
    if spec.method == "align_hard":
        table = MultiplierTable(alpha, beta, rn, ra, tuple(status), spec.regularizer)
    probs.setflags(write=False)
    weights.setflags(write=False)
    return ExtractedPolicy(probs, weights, spec, tuple(fallback), table)


def extract_action_sampled(behavior_row, w_fn: Callable, n_samples: int, seed) -> int:
    """Draw ``n_samples`` actions from the behavior row and keep the best-weighted one.

    ``w_fn`` maps an array of action ids to their weights. Ties go to the
    lowest action id.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    mu = np.asarray(behavior_row, dtype=float)
    rng = np.random.default_rng(seed)
    actions = rng.choice(len(mu), size=n_samples, p=mu / mu.sum())
    w = np.asarray(w_fn(actions), dtype=float)
    p = w / w.sum() if w.sum() > 0 else w
    best = p.max()
    return int(actions[p == best].min())


def extract_policy_sampled(behavior: BehaviorModel, values: ValueTables, spec: WeightSpec,
                           n_samples: int, seed: int) -> ExtractedPolicy:
    """Deterministic policy that takes the sampled-mode action at each state.

    Weights come from the same per-state computation as
    :func:`extract_policy_full`; each state draws from its own substream.
    """
    from .seeding import derive_seed

    full = extract_policy_full(behavior, values, spec)
    S, A = behavior.probs.shape
    probs = np.array(behavior.probs, dtype=float)
    for s in range(S):
        mask = values.support_mask[s]
        if not mask.any():
            continue
        _, mu = _support_row(behavior, values, s)
        row_w = np.nan_to_num(full.per_state_weights[s], nan=0.0)
        a = extract_action_sampled(mu, lambda acts: row_w[acts], n_samples, derive_seed(seed, "extraction", s))
        probs[s] = 0.0
        probs[s, a] = 1.0
    probs.setflags(write=False)
    return replace(full, probs=probs)

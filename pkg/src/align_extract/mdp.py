"""Finite MDPs, gridworld construction, and exact dynamic programming.

Everything here is ground truth for the rest of the package: critics are
trained from data only, but policies are always scored with
:func:`exact_policy_evaluation` on the true model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, NumericError

# (dx, dy) for N, E, S, W
ACTION_NAMES = ("N", "E", "S", "W")
_MOVES = ((0, 1), (1, 0), (0, -1), (-1, 0))

VI_TOL = 1e-10
VI_MAX_ITERS = 1_000_000
LINEAR_SOLVE_MAX_STATES = 2000


@dataclass(frozen=True, eq=False)
class Mdp:
    """A finite discounted MDP.

    ``transition[s, a, s']`` is P(s'|s,a) and ``reward[s, a]`` the expected
    immediate reward. ``terminal`` marks absorbing states whose entry sets the
    ``done`` flag in generated datasets.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    initial_dist: np.ndarray
    state_coords: Optional[np.ndarray] = None
    terminal: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        R = np.asarray(self.reward, dtype=float)
        d0 = np.asarray(self.initial_dist, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ConfigurationError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if S < 1 or A < 1:
            raise ConfigurationError("need at least one state and one action")
        if R.shape != (S, A):
            raise ConfigurationError(f"reward must have shape {(S, A)}, got {R.shape}")
        if d0.shape != (S,):
            raise ConfigurationError(f"initial_dist must have shape {(S,)}, got {d0.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise ConfigurationError("transition rows must be probability vectors")
        if np.any(d0 < 0) or abs(d0.sum() - 1.0) > 1e-12:
            raise ConfigurationError("initial_dist must be a probability vector")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not np.all(np.isfinite(R)):
            raise ConfigurationError("reward must be finite")
        term = np.zeros(S, dtype=bool) if self.terminal is None else np.asarray(self.terminal, dtype=bool)
        if term.shape != (S,):
            raise ConfigurationError("terminal mask must have one entry per state")
        coords = None
        if self.state_coords is not None:
            coords = np.asarray(self.state_coords, dtype=float)
            if coords.ndim == 1:
                coords = coords[:, None]
            if coords.shape[0] != S:
                raise ConfigurationError("state_coords must have one row per state")
        for name, arr in (("transition", P), ("reward", R), ("initial_dist", d0),
                          ("terminal", term), ("state_coords", coords)):
            if arr is not None:
                arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "initial_dist": self.initial_dist.tolist(),
            "state_coords": None if self.state_coords is None else self.state_coords.tolist(),
            "terminal": self.terminal.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mdp":
        try:
            mdp = cls(
                transition=np.array(d["transition"], dtype=float),
                reward=np.array(d["reward"], dtype=float),
                gamma=float(d["gamma"]),
                initial_dist=np.array(d["initial_dist"], dtype=float),
                state_coords=None if d.get("state_coords") is None else np.array(d["state_coords"], dtype=float),
                terminal=d.get("terminal"),
            )
        except KeyError as exc:
            raise ConfigurationError(f"MDP document missing key {exc}") from None
        if mdp.n_states != d.get("n_states", mdp.n_states) or mdp.n_actions != d.get("n_actions", mdp.n_actions):
            raise ConfigurationError("n_states/n_actions disagree with array shapes")
        return mdp

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Mdp":
        return cls.from_dict(json.loads(text))

    def fingerprint(self) -> str:
        import hashlib

        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def build_gridworld(
    width: int,
    height: int,
    goal_cells: Sequence[int],
    step_reward: float = -0.01,
    goal_reward: float = 1.0,
    slip_prob: float = 0.0,
    gamma: float = 0.95,
) -> Mdp:
    """Four-action gridworld with absorbing goal cells.

    State ``s = y * width + x``. Moves that would leave the grid keep the
    agent in place. With probability ``slip_prob`` the move is replaced by
    one of the two perpendicular moves, chosen uniformly. Every step from a
    non-goal cell pays ``step_reward`` plus ``goal_reward`` times the
    probability of landing in a goal cell. Goal cells self-loop with zero
    reward and are excluded from the start distribution.
    """
    if width < 2 or height < 2:
        raise ConfigurationError(f"grid must be at least 2x2, got {width}x{height}")
    if not (0.0 <= slip_prob < 1.0):
        raise ConfigurationError(f"slip_prob must lie in [0, 1), got {slip_prob}")
    S = width * height
    goals = sorted({int(g) for g in goal_cells})
    if not goals:
        raise ConfigurationError("at least one goal cell is required")
    if any(g < 0 or g >= S for g in goals):
        raise ConfigurationError(f"goal cells must lie in [0, {S}), got {goals}")
    if len(goals) == S:
        raise ConfigurationError("every cell is a goal; no start states remain")

    terminal = np.zeros(S, dtype=bool)
    terminal[goals] = True

    def dest(s, move):
        x, y = s % width, s // width
        nx = min(max(x + move[0], 0), width - 1)
        ny = min(max(y + move[1], 0), height - 1)
        return ny * width + nx

    P = np.zeros((S, 4, S))
    R = np.zeros((S, 4))
    for s in range(S):
        if terminal[s]:
            P[s, :, s] = 1.0
            continue
        for a in range(4):
            perpendicular = ((a + 1) % 4, (a + 3) % 4)
            P[s, a, dest(s, _MOVES[a])] += 1.0 - slip_prob
            for b in perpendicular:
                P[s, a, dest(s, _MOVES[b])] += slip_prob / 2.0
            R[s, a] = step_reward + goal_reward * P[s, a, terminal].sum()

    d0 = np.where(terminal, 0.0, 1.0)
    d0 /= d0.sum()
    coords = np.array([(s % width, s // width) for s in range(S)], dtype=float)
    return Mdp(P, R, gamma, d0, state_coords=coords, terminal=terminal)


def check_policy(policy, n_states: int, n_actions: int, atol: float = 1e-9) -> np.ndarray:
    pi = np.asarray(policy, dtype=float)
    if pi.shape != (n_states, n_actions):
        raise ConfigurationError(f"policy must have shape {(n_states, n_actions)}, got {pi.shape}")
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > atol:
        raise ConfigurationError("policy rows must be probability vectors")
    return pi


def bellman_average(mdp: Mdp, policy: np.ndarray, v: np.ndarray) -> np.ndarray:
    """One policy-averaged Bellman backup ``sum_a pi(a|s) [R + gamma P v]``."""
    return np.sum(policy * exact_q_from_v(mdp, v), axis=1)


def exact_policy_evaluation(mdp: Mdp, policy) -> np.ndarray:
    """Return V^pi, solving the linear Bellman system directly when small."""
    pi = check_policy(policy, mdp.n_states, mdp.n_actions)
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    r_pi = np.sum(pi * mdp.reward, axis=1)
    if mdp.n_states <= LINEAR_SOLVE_MAX_STATES:
        v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, r_pi)
    else:
        v = np.zeros(mdp.n_states)
        for _ in range(VI_MAX_ITERS):
            v_new = r_pi + mdp.gamma * P_pi @ v
            if np.max(np.abs(v_new - v)) < VI_TOL:
                v = v_new
                break
            v = v_new
        else:
            raise NumericError("policy evaluation did not converge",
                               residual=float(np.max(np.abs(v_new - v))))
    residual = float(np.max(np.abs(r_pi + mdp.gamma * P_pi @ v - v)))
    if residual > 1e-8:
        raise NumericError("policy evaluation fixed point violated", residual=residual)
    return v


def exact_q_from_v(mdp: Mdp, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.n_states,):
        raise ConfigurationError(f"v must have shape {(mdp.n_states,)}, got {v.shape}")
    return mdp.reward + mdp.gamma * mdp.transition @ v


def policy_return(mdp: Mdp, policy) -> float:
    """Expected discounted return from the start distribution."""
    return float(mdp.initial_dist @ exact_policy_evaluation(mdp, policy))


def optimal_q(mdp: Mdp, tol: float = VI_TOL, max_iters: int = VI_MAX_ITERS) -> np.ndarray:
    """Q* by value iteration."""
    v = np.zeros(mdp.n_states)
    for _ in range(max_iters):
        q = exact_q_from_v(mdp, v)
        v_new = q.max(axis=1)
        delta = np.max(np.abs(v_new - v))
        v = v_new
        if delta < tol:
            return exact_q_from_v(mdp, v)
    raise NumericError("value iteration did not converge", residual=float(delta))


def greedy_policy(q, atol: float = 1e-12) -> np.ndarray:
    """Deterministic argmax policy; ties go to the lowest action id."""
    q = np.asarray(q, dtype=float)
    best = np.argmax(q >= q.max(axis=1, keepdims=True) - atol, axis=1)
    pi = np.zeros_like(q)
    pi[np.arange(q.shape[0]), best] = 1.0
    return pi


def uniform_policy(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


def epsilon_mixture(mdp: Mdp, epsilon: float) -> np.ndarray:
    """``epsilon * uniform + (1 - epsilon) * optimal`` behavior policy."""
    if not (0.0 <= epsilon <= 1.0):
        raise ConfigurationError(f"epsilon must lie in [0, 1], got {epsilon}")
    greedy = greedy_policy(optimal_q(mdp))
    return epsilon * uniform_policy(mdp.n_states, mdp.n_actions) + (1.0 - epsilon) * greedy

"""Offline transition datasets, empirical behavior models, and corruption attacks."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .errors import ConfigurationError, DatasetFormatError
from .mdp import Mdp, check_policy

CORRUPTION_KINDS = ("observation", "action", "reward", "dynamics", "mixed")
_ATTACK_ORDER = ("observation", "action", "reward", "dynamics")
REWARD_ATTACK_SCALE = 30.0


class Transition(NamedTuple):
    s: int
    a: int
    r: float
    s_next: int
    done: bool


@dataclass(frozen=True, eq=False)
class TransitionDataset:
    """Columnar store of ``(s, a, r, s_next, done)`` records in collection order."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    seed: Optional[int] = None
    n_states: Optional[int] = None
    n_actions: Optional[int] = None
    source_mdp_hash: Optional[str] = None
    # indices touched by corrupt(), keyed by attack kind
    corrupted: dict = field(default_factory=dict)

    def __post_init__(self):
        cols = {
            "s": np.asarray(self.s, dtype=np.int64),
            "a": np.asarray(self.a, dtype=np.int64),
            "r": np.asarray(self.r, dtype=float),
            "s_next": np.asarray(self.s_next, dtype=np.int64),
            "done": np.asarray(self.done, dtype=bool),
        }
        n = len(cols["s"])
        if any(c.shape != (n,) for c in cols.values()):
            raise ConfigurationError("dataset columns must be 1-D and of equal length")
        for name, col in cols.items():
            col.setflags(write=False)
            object.__setattr__(self, name, col)
        if self.n_states is not None and n and (cols["s"].max() >= self.n_states or cols["s_next"].max() >= self.n_states):
            raise ConfigurationError("state id out of range")
        if self.n_actions is not None and n and cols["a"].max() >= self.n_actions:
            raise ConfigurationError("action id out of range")
        if n and (cols["s"].min() < 0 or cols["a"].min() < 0 or cols["s_next"].min() < 0):
            raise ConfigurationError("ids must be non-negative")

    def __len__(self) -> int:
        return len(self.s)

    def __getitem__(self, i: int) -> Transition:
        return Transition(int(self.s[i]), int(self.a[i]), float(self.r[i]),
                          int(self.s_next[i]), bool(self.done[i]))

    def __iter__(self) -> Iterator[Transition]:
        for i in range(len(self)):
            yield self[i]

    def replace(self, **columns) -> "TransitionDataset":
        kwargs = dict(s=self.s, a=self.a, r=self.r, s_next=self.s_next, done=self.done,
                      seed=self.seed, n_states=self.n_states, n_actions=self.n_actions,
                      source_mdp_hash=self.source_mdp_hash, corrupted=dict(self.corrupted))
        kwargs.update(columns)
        return TransitionDataset(**kwargs)

    def coverage(self) -> float:
        """Fraction of all (s, a) pairs that appear at least once."""
        if self.n_states is None or self.n_actions is None:
            raise ConfigurationError("coverage needs n_states and n_actions")
        seen = np.zeros(self.n_states * self.n_actions, dtype=bool)
        seen[self.s * self.n_actions + self.a] = True
        return float(seen.mean())

    def to_jsonl(self) -> str:
        buf = io.StringIO()
        meta = {"seed": self.seed, "n_states": self.n_states, "n_actions": self.n_actions}
        if self.source_mdp_hash is not None:
            meta["source_mdp_hash"] = self.source_mdp_hash
        hit = {k: [int(i) for i in v] for k, v in self.corrupted.items() if len(v)}
        if hit:
            meta["corrupted"] = hit
        buf.write(json.dumps({"meta": meta}) + "\n")
        for t in self:
            buf.write(json.dumps({"s": t.s, "a": t.a, "r": t.r, "s_next": t.s_next, "done": t.done}) + "\n")
        return buf.getvalue()

    @classmethod
    def from_jsonl(cls, text: str) -> "TransitionDataset":
        meta = {}
        rows = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise DatasetFormatError("expected a JSON object", lineno)
            if "meta" in obj:
                if lineno != 1 or rows:
                    raise DatasetFormatError("meta header is only allowed on line 1", lineno)
                meta = obj["meta"] or {}
                continue
            try:
                s, a, s2 = obj["s"], obj["a"], obj["s_next"]
                r, done = obj["r"], obj["done"]
            except KeyError as exc:
                raise DatasetFormatError(f"missing field {exc}", lineno) from None
            if not all(isinstance(x, int) and not isinstance(x, bool) for x in (s, a, s2)):
                raise DatasetFormatError("s, a, s_next must be integers", lineno)
            if not isinstance(r, (int, float)) or isinstance(r, bool) or not isinstance(done, bool):
                raise DatasetFormatError("r must be a number and done a boolean", lineno)
            rows.append((s, a, float(r), s2, done))
        if rows:
            s, a, r, s2, done = map(list, zip(*rows))
        else:
            s = a = r = s2 = done = []
        try:
            return cls(s=s, a=a, r=r, s_next=s2, done=done, seed=meta.get("seed"),
                       n_states=meta.get("n_states"), n_actions=meta.get("n_actions"),
                       source_mdp_hash=meta.get("source_mdp_hash"),
                       corrupted={k: np.asarray(v, dtype=np.int64) for k, v in meta.get("corrupted", {}).items()})
        except ConfigurationError as exc:
            raise DatasetFormatError(str(exc)) from None

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def load(cls, path) -> "TransitionDataset":
        with open(path, encoding="utf-8") as fh:
            return cls.from_jsonl(fh.read())


def generate_dataset(mdp: Mdp, behavior, n_transitions: int, max_episode_len: int, seed: int) -> TransitionDataset:
    """Roll episodes from ``d0`` under ``behavior`` until ``n_transitions`` are collected.

    An episode ends on entering a terminal state (``done=True``) or after
    ``max_episode_len`` steps (truncation, ``done=False``).
    """
    if n_transitions < 1:
        raise ConfigurationError("n_transitions must be ≥ 1")
    if max_episode_len < 1:
        raise ConfigurationError("max_episode_len must be >= 1")
    pi = check_policy(behavior, mdp.n_states, mdp.n_actions)
    rng = np.random.default_rng(seed)
    d0_cdf = np.cumsum(mdp.initial_dist)
    pi_cdf = np.cumsum(pi, axis=1)
    p_cdf = np.cumsum(mdp.transition, axis=2)
    u = rng.random((n_transitions, 3))

    def draw(cdf, x):
        return min(int(np.searchsorted(cdf, x, side="right")), len(cdf) - 1)

    S = np.empty(n_transitions, dtype=np.int64)
    A = np.empty_like(S)
    S2 = np.empty_like(S)
    D = np.empty(n_transitions, dtype=bool)
    s, t = None, 0
    for i in range(n_transitions):
        if s is None:
            s, t = draw(d0_cdf, u[i, 0]), 0
        a = draw(pi_cdf[s], u[i, 1])
        s2 = draw(p_cdf[s, a], u[i, 2])
        done = bool(mdp.terminal[s2])
        S[i], A[i], S2[i], D[i] = s, a, s2, done
        t += 1
        s = None if done or t >= max_episode_len else s2
    return TransitionDataset(s=S, a=A, r=mdp.reward[S, A], s_next=S2, done=D, seed=seed,
                             n_states=mdp.n_states, n_actions=mdp.n_actions,
                             source_mdp_hash=mdp.fingerprint())


def enumerate_transitions(mdp: Mdp, repeats: int = 1) -> TransitionDataset:
    """Every non-terminal ``(s, a)`` pair ``repeats`` times, each with its most likely successor.

    Intended for deterministic MDPs, where this is a complete, perfectly
    balanced dataset: the empirical behavior policy is exactly uniform.
    """
    if repeats < 1:
        raise ConfigurationError("repeats must be >= 1")
    src = np.flatnonzero(~mdp.terminal)
    S = np.repeat(src, mdp.n_actions)
    A = np.tile(np.arange(mdp.n_actions), src.size)
    S2 = np.argmax(mdp.transition[S, A], axis=1)
    S, A, S2 = (np.tile(x, repeats) for x in (S, A, S2))
    return TransitionDataset(s=S, a=A, r=mdp.reward[S, A], s_next=S2, done=mdp.terminal[S2].copy(),
                             seed=0, n_states=mdp.n_states, n_actions=mdp.n_actions,
                             source_mdp_hash=mdp.fingerprint())


@dataclass(frozen=True, eq=False)
class BehaviorModel:
    """Empirical behavior policy mu(a|s) with optional Laplace smoothing."""

    probs: np.ndarray
    support_counts: np.ndarray
    smoothing: float = 0.0

    @property
    def visited(self) -> np.ndarray:
        return self.support_counts.sum(axis=1) > 0


def estimate_behavior(dataset: TransitionDataset, n_states: int, n_actions: int,
                      smoothing: float = 0.0) -> BehaviorModel:
    # (count(s,a) + k) / (count(s) + k * |A|); unvisited rows are uniform
    if smoothing < 0:
        raise ConfigurationError("smoothing must be >= 0")
    counts = np.zeros((n_states, n_actions), dtype=np.int64)
    np.add.at(counts, (dataset.s, dataset.a), 1)
    num = counts + smoothing
    den = num.sum(axis=1, keepdims=True)
    probs = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0 / n_actions)
    probs.setflags(write=False)
    counts.setflags(write=False)
    return BehaviorModel(probs=probs, support_counts=counts, smoothing=float(smoothing))


@dataclass(frozen=True)
class CorruptionConfig:
    kind: str
    rate: float = 0.5
    scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ConfigurationError(f"unknown corruption kind {self.kind!r}; expected one of {CORRUPTION_KINDS}")
        if not (0.0 <= self.rate <= 1.0):
            raise ConfigurationError(f"corruption rate must lie in [0, 1], got {self.rate}")
        if self.scale < 0:
            raise ConfigurationError(f"corruption scale must be >= 0, got {self.scale}")

    @property
    def label(self) -> str:
        return f"{self.kind}:{self.rate:g}:{self.scale:g}"

    def n_corrupted(self, n: int) -> int:
        # ceil with a guard so that e.g. 0.3 * 10 does not round up to 4
        return min(n, math.ceil(round(self.rate * n, 9)))


def _record_rng(seed: int, kind: str, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, _ATTACK_ORDER.index(kind), int(index)])


def _snap(points: np.ndarray, coords: np.ndarray) -> np.ndarray:
    # nearest state by Euclidean distance; argmin ties go to the lowest id
    d2 = ((points[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def corrupt(dataset: TransitionDataset, mdp: Mdp, config: CorruptionConfig) -> TransitionDataset:
    """Apply one random data-corruption attack to ``ceil(rate * N)`` records.

    Coordinate attacks add ``lambda * std`` noise with lambda uniform in
    ``[-scale, scale]`` per dimension and snap the result to the nearest
    state. The action attack resamples a different action uniformly. The
    reward attack draws from ``Uniform[-30 scale, 30 scale]``. ``mixed`` runs
    all four attacks on independent samples.
    """
    kinds = _ATTACK_ORDER if config.kind == "mixed" else (config.kind,)
    if any(k in ("observation", "dynamics") for k in kinds) and mdp.state_coords is None:
        raise ConfigurationError(f"{config.kind} attack needs state_coords on the MDP")
    n = len(dataset)
    k = config.n_corrupted(n)
    cols = {"s": dataset.s.copy(), "a": dataset.a.copy(), "r": dataset.r.copy(), "s_next": dataset.s_next.copy()}
    # std is taken over the clean dataset, before any attack runs
    coords = mdp.state_coords
    std = {"observation": coords[dataset.s].std(axis=0) if coords is not None else None,
           "dynamics": coords[dataset.s_next].std(axis=0) if coords is not None else None}
    touched = dict(dataset.corrupted)
    for kind in kinds:
        pick_rng = np.random.default_rng([config.seed, _ATTACK_ORDER.index(kind)])
        idx = np.sort(pick_rng.choice(n, size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)
        touched[kind] = idx
        if k == 0:
            continue
        if kind == "reward":
            bound = REWARD_ATTACK_SCALE * config.scale
            cols["r"][idx] = [_record_rng(config.seed, kind, i).uniform(-bound, bound) for i in idx]
        elif kind == "action":
            A = mdp.n_actions
            if A < 2:
                raise ConfigurationError("action attack needs at least two actions")
            for i in idx:
                shift = _record_rng(config.seed, kind, i).integers(1, A)
                cols["a"][i] = (cols["a"][i] + shift) % A
        else:
            field_name = "s" if kind == "observation" else "s_next"
            d = coords.shape[1]
            lam = np.array([_record_rng(config.seed, kind, i).uniform(-config.scale, config.scale, size=d) for i in idx])
            noisy = coords[cols[field_name][idx]] + lam * std[kind]
            cols[field_name][idx] = _snap(noisy, coords)
    return dataset.replace(**cols, corrupted=touched)

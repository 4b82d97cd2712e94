"""End-to-end experiments: dataset, critic, extraction, exact evaluation.

Every number in a :class:`ResultRecord` is computed by dynamic programming
on the true MDP, so records are exactly reproducible from the config and
its root seed. Parallel runs aggregate in config order; the thread count
never changes the output.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import __version__
from .critic import CriticConfig, ValueTables, train_critic
from .dataset import (BehaviorModel, CorruptionConfig, TransitionDataset, corrupt, estimate_behavior,
                      generate_dataset)
from .errors import AlignExtractError, ConfigurationError, PipelineError
from .extraction import ExtractedPolicy, WeightSpec, extract_policy_full, weight_align_soft
from .mdp import Mdp, build_gridworld, epsilon_mixture, policy_return
from .multipliers import CONVERGED, LOG, solve_multiplier_table
from .oracle import SimplexInstance, kl_rows, oracle_ipf, oracle_ipf_soft
from .seeding import derive_seed

KL_ETAS = (0.5, 1.0, 3.0, 10.0)
CSV_FIELDS = ("corruption", "method", "J", "mean_alignment", "max_alignment", "fallback_count",
              "beta_negative", "beta_zero", "beta_positive")


@contextmanager
def _stage(name):
    try:
        yield
    except PipelineError:
        raise
    except AlignExtractError as exc:
        raise PipelineError(name, exc) from exc


@dataclass(frozen=True)
class GridworldSpec:
    width: int = 5
    height: int = 5
    goals: tuple = (24,)
    step_reward: float = -0.01
    goal_reward: float = 1.0
    slip_prob: float = 0.1
    gamma: float = 0.95

    def build(self) -> Mdp:
        return build_gridworld(self.width, self.height, list(self.goals), self.step_reward,
                               self.goal_reward, self.slip_prob, self.gamma)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    mdp: GridworldSpec = field(default_factory=GridworldSpec)
    behavior_epsilon: float = 0.5
    n_transitions: int = 5000
    max_episode_len: int = 50
    seed: int = 0
    smoothing: float = 0.0
    critic: CriticConfig = field(default_factory=CriticConfig)
    methods: tuple = (WeightSpec("align_soft"),)
    corruptions: tuple = ()
    kl_etas: tuple = KL_ETAS

    def __post_init__(self):
        if not self.methods:
            raise ConfigurationError("at least one method is required")
        if not (0.0 <= self.behavior_epsilon <= 1.0):
            raise ConfigurationError("behavior_epsilon must lie in [0, 1]")
        if self.n_transitions < 1:
            raise ConfigurationError("n_transitions must be ≥ 1")
        labels = [m.label for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"method labels must be unique, got {labels}")
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "corruptions", tuple(self.corruptions))
        object.__setattr__(self, "kl_etas", tuple(float(e) for e in self.kl_etas))

    def to_dict(self) -> dict:
        c = self.critic
        return {"name": self.name,
                "mdp": {"width": self.mdp.width, "height": self.mdp.height, "goals": list(self.mdp.goals),
                        "step_reward": self.mdp.step_reward, "goal_reward": self.mdp.goal_reward,
                        "slip_prob": self.mdp.slip_prob, "gamma": self.mdp.gamma},
                "behavior": {"epsilon": self.behavior_epsilon, "smoothing": self.smoothing},
                "dataset": {"n_transitions": self.n_transitions, "max_episode_len": self.max_episode_len,
                            "seed": self.seed},
                "critic": {"tau": c.tau, "gamma": c.gamma, "max_sweeps": c.max_sweeps, "tol": c.tol,
                           "polyak": c.polyak},
                "methods": [m.to_dict() for m in self.methods],
                "corruptions": [{"kind": k.kind, "rate": k.rate, "scale": k.scale} for k in self.corruptions],
                "kl_etas": list(self.kl_etas)}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        try:
            mdp = GridworldSpec(**{k: (tuple(v) if k == "goals" else v) for k, v in d.get("mdp", {}).items()})
            beh = d.get("behavior", {})
            data = d.get("dataset", {})
            crit = dict(d.get("critic", {}))
            crit.setdefault("gamma", mdp.gamma)
            methods = tuple(WeightSpec.from_dict(m) for m in d.get("methods", [{"method": "align_soft"}]))
            corr = tuple(CorruptionConfig(**c) for c in d.get("corruptions", []))
            return cls(name=d.get("name", "experiment"), mdp=mdp,
                       behavior_epsilon=beh.get("epsilon", 0.5), smoothing=beh.get("smoothing", 0.0),
                       n_transitions=data.get("n_transitions", 5000),
                       max_episode_len=data.get("max_episode_len", 50), seed=data.get("seed", 0),
                       critic=CriticConfig(**crit), methods=methods, corruptions=corr,
                       kl_etas=tuple(d.get("kl_etas", KL_ETAS)))
        except TypeError as exc:
            raise ConfigurationError(f"bad experiment config: {exc}") from None

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))


BENCHMARKS = {
    "gridworld-5x5-mixed-v1": ExperimentConfig(
        name="gridworld-5x5-mixed-v1",
        mdp=GridworldSpec(5, 5, (24,), -0.1, 10.0, 0.1, 0.95),
        behavior_epsilon=0.5,
        n_transitions=5000,
        max_episode_len=50,
        seed=0,
        critic=CriticConfig(tau=0.7, gamma=0.95),
        methods=(WeightSpec("awr", awr_alpha=3.0), WeightSpec("align_soft", eta=3.0),
                 WeightSpec("align_hard"), WeightSpec("idql_expectile", tau=0.7),
                 WeightSpec("mixed", eta=3.0, awr_alpha=3.0, kappa=0.5)),
        corruptions=tuple(CorruptionConfig(k, 0.5, 0.5)
                          for k in ("reward", "action", "dynamics", "observation", "mixed")),
    ),
}


def alignment_residual(policy, values: ValueTables) -> np.ndarray:
    """``|sum_a pi(a|s) Q(s, a) - V(s)|`` on visited states, NaN elsewhere.

    Only supported cells enter the sum; an extracted policy puts no mass
    anywhere else.
    """
    probs = policy.probs if isinstance(policy, ExtractedPolicy) else np.asarray(policy, dtype=float)
    if probs.shape != values.q.shape:
        raise ConfigurationError("policy and critic cover different spaces")
    q = np.where(values.support_mask, values.q, 0.0)
    out = np.abs(np.sum(probs * q, axis=1) - values.v)
    return np.where(values.visited, out, np.nan)


def _state_rows(behavior: BehaviorModel, values: ValueTables, s: int):
    mask = values.support_mask[s]
    mu = behavior.probs[s][mask]
    return values.q[s][mask], mu / mu.sum(), float(values.v[s])


def kl_soft_hard_summary(behavior: BehaviorModel, values: ValueTables, etas=KL_ETAS) -> dict:
    """Per-state ``KL(soft_eta || hard)`` from the closed forms, summarized per ``eta``.

    Log regularizer, unclipped soft weights. States whose hard system is
    infeasible are skipped and counted.
    """
    table = solve_multiplier_table(values, behavior, LOG)
    out = {}
    feasible = [s for s, st in enumerate(table.status) if st == CONVERGED]
    for eta in etas:
        kls = []
        for s in feasible:
            q, mu, v = _state_rows(behavior, values, s)
            hard = mu * np.exp(-table.alpha[s] - table.beta[s] * q - 1.0)
            soft = mu * weight_align_soft(q, v, eta)
            kls.append(kl_rows(soft / soft.sum(), hard / hard.sum()))
        kls = np.array(kls)
        out[str(float(eta))] = {"n_states": int(kls.size),
                                "mean": float(kls.mean()) if kls.size else 0.0,
                                "max": float(kls.max()) if kls.size else 0.0}
    n_visited = sum(st != "unvisited" for st in table.status)
    return {"per_eta": out, "n_infeasible": n_visited - len(feasible)}


def suboptimality_curve(q_row, mu_row, v: float, etas=KL_ETAS, **oracle_options):
    """``[(eta, KL(soft_eta || hard)), ...]`` with both solutions from the brute-force oracle.

    Raises :class:`InfeasibleError` when ``v`` is outside the supported-Q hull.
    """
    mu = np.asarray(mu_row, dtype=float)
    q = np.asarray(q_row, dtype=float)
    hard = oracle_ipf(SimplexInstance(mu, q, float(v), LOG), **oracle_options)
    soft_opts = {k: val for k, val in oracle_options.items() if k in ("restarts", "seed")}
    curve = []
    for eta in etas:
        soft, _ = oracle_ipf_soft(SimplexInstance(mu, q, float(v), LOG, float(eta)), **soft_opts)
        curve.append((float(eta), kl_rows(soft, hard)))
    return curve


@dataclass
class MethodResult:
    method: str
    J: float
    mean_alignment: float
    max_alignment: float
    fallback_count: int
    fallback_states: list
    beta_sign_histogram: Optional[dict] = None

    def to_dict(self) -> dict:
        return {"method": self.method, "J": self.J, "mean_alignment": self.mean_alignment,
                "max_alignment": self.max_alignment, "fallback_count": self.fallback_count,
                "fallback_states": self.fallback_states, "beta_sign_histogram": self.beta_sign_histogram}


def evaluate_method(mdp: Mdp, behavior: BehaviorModel, values: ValueTables, spec: WeightSpec) -> MethodResult:
    with _stage(f"extract:{spec.label}"):
        policy = extract_policy_full(behavior, values, spec)
    with _stage(f"evaluate:{spec.label}"):
        J = policy_return(mdp, policy.probs)
    res = alignment_residual(policy, values)
    fb = set(policy.fallback_states)
    ok = [s for s in range(len(res)) if values.visited[s] and s not in fb]
    hist = policy.multipliers.beta_sign_histogram() if policy.multipliers is not None else None
    return MethodResult(spec.label, float(J), float(np.mean(res[ok])) if ok else 0.0,
                        float(np.max(res[ok])) if ok else 0.0, len(fb), sorted(int(s) for s in fb), hist)


def _run_pipeline(config: ExperimentConfig, mdp: Mdp, dataset: TransitionDataset, threads: int) -> dict:
    with _stage("estimate_behavior"):
        behavior = estimate_behavior(dataset, mdp.n_states, mdp.n_actions, config.smoothing)
    with _stage("train_critic"):
        values = train_critic(dataset, behavior, config.critic)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            methods = list(pool.map(lambda m: evaluate_method(mdp, behavior, values, m), config.methods))
    else:
        methods = [evaluate_method(mdp, behavior, values, m) for m in config.methods]
    with _stage("diagnostics"):
        hist = solve_multiplier_table(values, behavior, LOG).beta_sign_histogram()
        kl = kl_soft_hard_summary(behavior, values, config.kl_etas)
    return {"dataset": {"n": len(dataset), "coverage": dataset.coverage(),
                        "n_corrupted": len({i for v in dataset.corrupted.values() for i in v})},
            "critic": {"sweeps": values.sweeps, "residual": values.residual},
            "behavior_return": float(policy_return(mdp, behavior.probs)),
            "methods": [m.to_dict() for m in methods],
            "beta_sign_histogram": hist, "kl_soft_hard": kl}


@dataclass
class ResultRecord:
    config: dict
    clean: dict
    corrupted: dict = field(default_factory=dict)
    table: Optional[dict] = None
    provenance: dict = field(default_factory=dict)

    def to_dict(self, timestamps: bool = True) -> dict:
        prov = dict(self.provenance)
        if not timestamps:
            prov.pop("timestamp", None)
        return {"config": self.config, "provenance": prov, "clean": self.clean,
                "corrupted": self.corrupted, "table": self.table}

    def to_json(self, timestamps: bool = True) -> str:
        return json.dumps(self.to_dict(timestamps), indent=2, sort_keys=True)

    def canonical_json(self) -> str:
        """JSON without timestamps; byte-identical for identical configs."""
        return self.to_json(timestamps=False)

    def rows(self):
        for label, block in [("clean", self.clean)] + list(self.corrupted.items()):
            for m in block["methods"]:
                h = m["beta_sign_histogram"] or {}
                yield {"corruption": label, "method": m["method"], "J": m["J"],
                       "mean_alignment": m["mean_alignment"], "max_alignment": m["max_alignment"],
                       "fallback_count": m["fallback_count"], "beta_negative": h.get("negative", ""),
                       "beta_zero": h.get("zero", ""), "beta_positive": h.get("positive", "")}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def method(self, label: str, corruption: str = "clean") -> dict:
        block = self.clean if corruption == "clean" else self.corrupted[corruption]
        for m in block["methods"]:
            if m["method"] == label:
                return m
        raise KeyError(label)

    def save(self, json_path, csv_path=None) -> None:
        with open(json_path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")
        if csv_path is not None:
            with open(csv_path, "w", encoding="utf-8", newline="") as fh:
                fh.write(self.to_csv())


def _provenance(config: ExperimentConfig, seeds: dict) -> dict:
    return {"config_hash": config.config_hash(), "seeds": seeds, "version": __version__,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}


def _base_dataset(config: ExperimentConfig, mdp: Mdp) -> TransitionDataset:
    with _stage("behavior_policy"):
        behavior = epsilon_mixture(mdp, config.behavior_epsilon)
    with _stage("generate_dataset"):
        return generate_dataset(mdp, behavior, config.n_transitions, config.max_episode_len,
                                derive_seed(config.seed, "dataset"))


def run_experiment(config: ExperimentConfig, threads: int = 1, dataset: TransitionDataset = None) -> ResultRecord:
    """Clean-data pipeline for every method in ``config``.

    ``dataset`` replaces the generated one when given (it must come from
    the same MDP).
    """
    if threads < 1:
        raise ConfigurationError("threads must be >= 1")
    with _stage("build_mdp"):
        mdp = config.mdp.build()
    if dataset is None:
        dataset = _base_dataset(config, mdp)
    elif dataset.source_mdp_hash and dataset.source_mdp_hash != mdp.fingerprint():
        raise ConfigurationError("dataset was generated from a different MDP")
    clean = _run_pipeline(config, mdp, dataset, threads)
    seeds = {"root": config.seed, "dataset": derive_seed(config.seed, "dataset")}
    return ResultRecord(config.to_dict(), clean, provenance=_provenance(config, seeds))


def corruption_seed(config: ExperimentConfig, index: int, corruption: CorruptionConfig) -> int:
    return derive_seed(config.seed, "corruption", index, corruption.kind)


def robustness_sweep(config: ExperimentConfig, threads: int = 1) -> ResultRecord:
    """Clean run plus one run per corruption on independently corrupted copies of the base dataset.

    ``table`` holds J per method (rows) and attack (columns), with an
    ``Average`` column over the attacks.
    """
    if not config.corruptions:
        raise ConfigurationError("robustness_sweep needs at least one corruption")
    if threads < 1:
        raise ConfigurationError("threads must be >= 1")
    with _stage("build_mdp"):
        mdp = config.mdp.build()
    base = _base_dataset(config, mdp)
    clean = _run_pipeline(config, mdp, base, threads)
    labels = [c.label for c in config.corruptions]
    if len(set(labels)) != len(labels):
        raise ConfigurationError(f"corruption labels must be unique, got {labels}")
    attacks = [replace(c, seed=corruption_seed(config, i, c)) for i, c in enumerate(config.corruptions)]

    def one(cfg):
        with _stage(f"corrupt:{cfg.label}"):
            ds = corrupt(base, mdp, cfg)
        return _run_pipeline(config, mdp, ds, 1)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(one, attacks))
    else:
        blocks = [one(c) for c in attacks]
    corrupted = dict(zip(labels, blocks))
    rows = {}
    for spec in config.methods:
        js = [next(m["J"] for m in corrupted[l]["methods"] if m["method"] == spec.label) for l in labels]
        rows[spec.label] = js + [float(np.mean(js))]
    table = {"columns": labels + ["Average"], "rows": rows}
    seeds = {"root": config.seed, "dataset": derive_seed(config.seed, "dataset"),
             "corruption": {c.label: c.seed for c in attacks}}
    return ResultRecord(config.to_dict(), clean, corrupted, table, _provenance(config, seeds))

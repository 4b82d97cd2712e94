"""Batch comparison of the closed-form extraction rules against the brute-force oracle.

Each random instance is checked three ways: the hard policy against
:func:`oracle_ipf`, the soft weights against :func:`oracle_ipf_soft` for
each temperature, and the hard policy against the KKT system. Instances
are generated from per-index substreams, so results do not depend on the
order or the number of workers.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .extraction import weight_align_hard, weight_align_soft
from .multipliers import CONVERGED, LOG, Regularizer, solve_multipliers
from .oracle import SimplexInstance, kkt_check, oracle_ipf, oracle_ipf_soft
from .seeding import derive_seed, substream

DEFAULT_ETAS = (0.5, 3.0, 10.0)


def random_instance(rng: np.random.Generator, n_actions: int, reg: Regularizer = LOG) -> SimplexInstance:
    """Feasible instance with every behavior probability at least ``0.2 / n``.

    ``V`` sits between 15% and 85% of the way across the Q range, which keeps
    it strictly inside the hull.
    """
    if n_actions < 2:
        raise ConfigurationError("need at least two actions")
    mu = 0.8 * rng.dirichlet(np.ones(n_actions)) + 0.2 / n_actions
    q = rng.normal(size=n_actions)
    v = q.min() + rng.uniform(0.15, 0.85) * (q.max() - q.min())
    return SimplexInstance(mu, q, float(v), reg)


def instance_for(seed: int, index: int, reg: Regularizer = LOG, min_actions: int = 2,
                 max_actions: int = 8) -> SimplexInstance:
    rng = substream(seed, "verify-instance", index)
    n = int(rng.integers(min_actions, max_actions + 1))
    return random_instance(rng, n, reg)


def hard_closed_form(instance: SimplexInstance, **solver_options):
    """Return ``(normalized row, unnormalized row, fit)`` for ``mu * max(g(-alpha - beta Q), 0)``."""
    fit = solve_multipliers(instance.q_row, instance.mu_row, instance.v_target, instance.regularizer,
                            **solver_options)
    if fit.status != CONVERGED:
        return None, None, fit
    raw = instance.mu_row * weight_align_hard(instance.q_row, instance.mu_row, instance.v_target,
                                              instance.regularizer, fit)
    return raw / raw.sum(), raw, fit


def soft_closed_form(instance: SimplexInstance, eta: float) -> np.ndarray:
    w = instance.mu_row * weight_align_soft(instance.q_row, instance.v_target, eta)
    return w / w.sum()


@dataclass
class InstanceResult:
    index: int
    n_actions: int
    hard_l1: float
    soft_l1: dict
    kkt: dict
    kkt_max: float
    status: str
    passed: bool = False
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"index": self.index, "n_actions": self.n_actions, "hard_l1": self.hard_l1,
                "soft_l1": self.soft_l1, "kkt": self.kkt, "kkt_max": self.kkt_max,
                "status": self.status, "passed": self.passed, "seconds": self.seconds}


def check_instance(index: int, seed: int, reg: Regularizer = LOG, etas=DEFAULT_ETAS,
                   oracle_options: dict = None) -> InstanceResult:
    t0 = time.perf_counter()
    inst = instance_for(seed, index, reg)
    opts = dict(oracle_options or {})
    opts.setdefault("seed", derive_seed(seed, "oracle-restarts", index))
    row, raw, fit = hard_closed_form(inst)
    if row is None:
        return InstanceResult(index, inst.q_row.size, np.inf, {}, {}, np.inf, fit.status,
                              seconds=time.perf_counter() - t0)
    hard_l1 = float(np.abs(row - oracle_ipf(inst, **opts)).sum())
    kkt = kkt_check(raw, inst.mu_row, inst.q_row, inst.v_target, fit.alpha, fit.beta, reg)
    soft = {}
    if reg.kind == "log":
        for eta in etas:
            soft_inst = SimplexInstance(inst.mu_row, inst.q_row, inst.v_target, reg, eta)
            soft_row, _ = oracle_ipf_soft(soft_inst, seed=opts["seed"])
            soft[str(float(eta))] = float(np.abs(soft_closed_form(inst, eta) - soft_row).sum())
    kd = kkt.to_dict()
    kd.pop("lambda_row")
    return InstanceResult(index, inst.q_row.size, hard_l1, soft, kd, kkt.max_residual(), fit.status,
                          seconds=time.perf_counter() - t0)


def _worker(args):
    return check_instance(*args)


@dataclass
class VerificationReport:
    seed: int
    regularizer: str
    tol: float
    soft_tol: float
    kkt_tol: float
    results: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.results) and all(r.passed for r in self.results)

    def worst(self) -> InstanceResult:
        return max(self.results, key=lambda r: (not r.passed, r.hard_l1))

    def summary(self) -> dict:
        soft = [x for r in self.results for x in r.soft_l1.values()]
        return {"n_instances": len(self.results), "passed": self.passed,
                "n_failed": sum(not r.passed for r in self.results),
                "max_hard_l1": max((r.hard_l1 for r in self.results), default=0.0),
                "max_soft_l1": max(soft, default=0.0),
                "max_kkt": max((r.kkt_max for r in self.results), default=0.0)}

    def to_dict(self) -> dict:
        return {"seed": self.seed, "regularizer": self.regularizer, "tol": self.tol,
                "soft_tol": self.soft_tol, "kkt_tol": self.kkt_tol, "summary": self.summary(),
                "instances": [r.to_dict() for r in self.results]}

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, allow_nan=True)


def verify_batch(n_instances: int = 100, seed: int = 0, tol: float = 1e-4, soft_tol: float = 1e-3,
                 kkt_tol: float = 1e-6, reg: Regularizer = LOG, etas=DEFAULT_ETAS, threads: int = 1,
                 oracle_options: dict = None) -> VerificationReport:
    """Run :func:`check_instance` on ``n_instances`` seeded instances.

    An instance passes when its hard L1 gap is at most ``tol``, every soft
    gap at most ``soft_tol`` and every KKT residual at most ``kkt_tol``.
    """
    if n_instances < 1:
        raise ConfigurationError("n_instances must be >= 1")
    if threads < 1:
        raise ConfigurationError("threads must be >= 1")
    for name, val in (("tol", tol), ("soft_tol", soft_tol), ("kkt_tol", kkt_tol)):
        if val < 0:
            raise ConfigurationError(f"{name} must be >= 0")
    if isinstance(reg, str):
        reg = Regularizer(reg)
    jobs = [(i, seed, reg, tuple(etas), oracle_options) for i in range(n_instances)]
    if threads == 1:
        results = [_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_worker, jobs))
    for r in results:
        r.passed = bool(r.hard_l1 <= tol and r.kkt_max <= kkt_tol
                        and all(x <= soft_tol for x in r.soft_l1.values()))
    return VerificationReport(seed, reg.kind, tol, soft_tol, kkt_tol, results)

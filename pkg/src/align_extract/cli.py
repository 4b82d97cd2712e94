"""``align-extract`` command line.

Exit codes: 0 success, 1 verification failure or solver breakdown, 2 bad
usage, configuration, or input files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import __version__
from .critic import CriticConfig, ValueTables, train_critic
from .dataset import CorruptionConfig, TransitionDataset, corrupt, estimate_behavior, generate_dataset
from .errors import AlignExtractError, ConfigurationError, PipelineError
from .extraction import METHOD_ALIASES, WeightSpec, extract_policy_full, extract_policy_sampled
from .harness import BENCHMARKS, ExperimentConfig, corruption_seed, robustness_sweep, run_experiment
from .mdp import epsilon_mixture
from .seeding import derive_seed
from .verification import verify_batch

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SEED_ENV = "ALIGN_EXTRACT_SEED"

log = logging.getLogger("align_extract")


class UsageError(Exception):
    pass


def load_config(path) -> dict:
    """Parse a TOML experiment file; syntax errors keep the parser's line and column."""
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None


def parse_corruption(text: str) -> CorruptionConfig:
    """``kind:rate:scale``, e.g. ``reward:0.5:0.5``; rate and scale are optional."""
    parts = text.split(":")
    if not 1 <= len(parts) <= 3:
        raise UsageError(f"bad --corrupt value {text!r}; expected kind:rate:scale")
    try:
        nums = [float(x) for x in parts[1:]]
    except ValueError:
        raise UsageError(f"bad --corrupt value {text!r}; rate and scale must be numbers") from None
    return CorruptionConfig(parts[0], *nums)


def resolve_seed(flag, config_value=None) -> int:
    """Flag, then config file, then ``$ALIGN_EXTRACT_SEED``, then 0."""
    if flag is not None:
        return int(flag)
    if config_value is not None:
        return int(config_value)
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def build_config(args) -> ExperimentConfig:
    if getattr(args, "benchmark", None):
        if args.config:
            raise UsageError("give either --config or --benchmark, not both")
        if args.benchmark not in BENCHMARKS:
            raise UsageError(f"unknown benchmark {args.benchmark!r}; known: {sorted(BENCHMARKS)}")
        raw = BENCHMARKS[args.benchmark].to_dict()
    elif args.config:
        raw = load_config(args.config)
    else:
        raw = {}
    data = dict(raw.get("dataset", {}))
    data["seed"] = resolve_seed(args.seed, data.get("seed"))
    if getattr(args, "n", None) is not None:
        data["n_transitions"] = args.n
    if getattr(args, "max_episode_len", None) is not None:
        data["max_episode_len"] = args.max_episode_len
    raw = dict(raw, dataset=data)
    if getattr(args, "epsilon", None) is not None:
        raw["behavior"] = dict(raw.get("behavior", {}), epsilon=args.epsilon)
    if getattr(args, "corrupt", None):
        raw["corruptions"] = [{"kind": c.kind, "rate": c.rate, "scale": c.scale}
                              for c in map(parse_corruption, args.corrupt)]
    return ExperimentConfig.from_dict(raw)


def _write(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _read_dataset(path) -> TransitionDataset:
    try:
        return TransitionDataset.load(path)
    except FileNotFoundError:
        raise UsageError(f"dataset not found: {path}") from None


def _read_critic(path) -> ValueTables:
    try:
        with open(path, encoding="utf-8") as fh:
            return ValueTables.from_json(fh.read())
    except FileNotFoundError:
        raise UsageError(f"critic not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno}: {exc.msg}") from None


def cmd_gen_data(args) -> int:
    config = build_config(args)
    mdp = config.mdp.build()
    behavior = epsilon_mixture(mdp, config.behavior_epsilon)
    ds = generate_dataset(mdp, behavior, config.n_transitions, config.max_episode_len,
                          derive_seed(config.seed, "dataset"))
    # a config's corruption list describes separate sweep runs, so only explicit --corrupt flags apply here
    for i, c in enumerate(config.corruptions if args.corrupt else ()):
        ds = corrupt(ds, mdp, replace(c, seed=corruption_seed(config, i, c)))
    ds.save(args.out)
    print(f"wrote {len(ds)} transitions to {args.out}; (s,a) coverage {ds.coverage():.3f}")
    return EXIT_OK


def _critic_path(out: str, tau: float, many: bool) -> str:
    if not many:
        return out
    p = Path(out)
    return str(p.with_name(f"{p.stem}.tau{tau:g}{p.suffix}"))


def cmd_train_critic(args) -> int:
    ds = _read_dataset(args.data)
    if ds.n_states is None or ds.n_actions is None:
        raise UsageError("dataset header lacks n_states/n_actions")
    behavior = estimate_behavior(ds, ds.n_states, ds.n_actions, args.smoothing)
    taus = args.tau or [0.7]
    for tau in taus:
        cfg = CriticConfig(tau=tau, gamma=args.gamma, max_sweeps=args.max_sweeps, tol=args.tol,
                           polyak=args.polyak)
        values = train_critic(ds, behavior, cfg)
        path = _critic_path(args.out, tau, len(taus) > 1)
        _write(path, values.to_json() + "\n")
        v = values.v[values.visited]
        print(f"tau={tau:g}: {values.sweeps} sweeps, final residual {values.residual:.3e}, "
              f"V mean {v.mean():.6g} min {v.min():.6g} max {v.max():.6g} -> {path}")
    return EXIT_OK


def cmd_extract(args) -> int:
    ds = _read_dataset(args.data)
    values = _read_critic(args.critic)
    S, A = values.q.shape
    behavior = estimate_behavior(ds, S, A, args.smoothing)
    spec = WeightSpec(method=args.method, regularizer=args.regularizer, eta=args.eta, awr_alpha=args.alpha,
                      kappa=args.kappa, tau=args.tau, weight_floor=args.weight_floor,
                      weight_cap=args.weight_cap, exponent_sign=args.exponent_sign)
    if args.n_samples:
        seed = resolve_seed(args.seed)
        policy = extract_policy_sampled(behavior, values, spec, args.n_samples, derive_seed(seed, "sampling"))
    else:
        policy = extract_policy_full(behavior, values, spec)
    _write(args.out, policy.to_json(indent=2) + "\n")
    print(f"{spec.method}: wrote policy for {S} states to {args.out}; "
          f"fallback states: {list(policy.fallback_states)}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.n_instances < 1:
        raise UsageError("--n-instances must be >= 1")
    report = verify_batch(args.n_instances, resolve_seed(args.seed), args.tol, args.soft_tol, args.kkt_tol,
                          args.regularizer, threads=args.threads)
    if args.out:
        _write(args.out, report.to_json() + "\n")
    s = report.summary()
    print(f"{s['n_instances']} instances, {s['n_failed']} failed; max hard L1 {s['max_hard_l1']:.3e}, "
          f"max soft L1 {s['max_soft_l1']:.3e}, max KKT {s['max_kkt']:.3e}")
    if not report.passed:
        print("worst instance: " + json.dumps(report.worst().to_dict()), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _save_record(record, out: str) -> None:
    base = Path(out)
    if base.suffix == ".json":
        base = base.with_suffix("")
    _write(f"{base}.json", record.to_json() + "\n")
    _write(f"{base}.csv", record.to_csv())
    print(f"wrote {base}.json and {base}.csv")


def _print_methods(block, label="clean") -> None:
    for m in block["methods"]:
        print(f"{label:>22}  {m['method']:<16} J={m['J']:.6f}  max|E_pi Q - V|={m['max_alignment']:.3e}"
              f"  fallbacks={m['fallback_count']}")


def cmd_run(args) -> int:
    config = build_config(args)
    if config.corruptions:
        record = robustness_sweep(config, threads=args.threads)
    else:
        record = run_experiment(config, threads=args.threads)
    _print_methods(record.clean)
    for label, block in record.corrupted.items():
        _print_methods(block, label)
    _save_record(record, args.out)
    return EXIT_OK


def cmd_robust(args) -> int:
    config = build_config(args)
    if not config.corruptions:
        raise UsageError("no corruptions configured; add [[corruptions]] or --corrupt")
    record = robustness_sweep(config, threads=args.threads)
    cols = record.table["columns"]
    print("method".ljust(16) + "".join(c.split(":")[0][:11].rjust(12) for c in cols))
    for method, js in record.table["rows"].items():
        print(method.ljust(16) + "".join(f"{j:12.4f}" for j in js))
    _save_record(record, args.out)
    return EXIT_OK


def _add_experiment_args(p, out_default):
    p.add_argument("--config", help="TOML experiment file")
    p.add_argument("--benchmark", help=f"named benchmark config ({', '.join(BENCHMARKS)})")
    p.add_argument("--seed", type=int, help=f"root seed (falls back to the config, then ${SEED_ENV})")
    p.add_argument("--n", type=int, help="number of transitions")
    p.add_argument("--max-episode-len", type=int)
    p.add_argument("--epsilon", type=float, help="uniform share of the behavior mixture")
    p.add_argument("--corrupt", action="append", metavar="KIND:RATE:SCALE",
                   help="corruption to apply; repeatable, replaces the config's list")
    p.add_argument("--out", default=out_default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="align-extract", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--threads", type=int, default=1, help="cap on parallel workers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a JSONL transition dataset")
    _add_experiment_args(p, "dataset.jsonl")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-critic", help="fit the tabular expectile critic")
    p.add_argument("--data", required=True)
    p.add_argument("--tau", type=float, action="append", help="expectile; repeat for several")
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-sweeps", type=int, default=100_000)
    p.add_argument("--polyak", type=float, default=0.0)
    p.add_argument("--smoothing", type=float, default=0.0)
    p.add_argument("--out", default="critic.json")
    p.set_defaults(func=cmd_train_critic)

    p = sub.add_parser("extract", help="extract a policy from a critic")
    p.add_argument("--data", required=True)
    p.add_argument("--critic", required=True)
    p.add_argument("--method", required=True, choices=sorted(METHOD_ALIASES))
    p.add_argument("--eta", type=float, default=3.0)
    p.add_argument("--alpha", type=float, default=3.0, help="AWR temperature")
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=0.7)
    p.add_argument("--regularizer", choices=("log", "linear"), default="log")
    p.add_argument("--exponent-sign", choices=("neg", "pos"), default="neg")
    p.add_argument("--weight-floor", type=float, default=0.01)
    p.add_argument("--weight-cap", type=float, default=100.0)
    p.add_argument("--n-samples", type=int, help="sampled mode: best of N behavior draws per state")
    p.add_argument("--smoothing", type=float, default=0.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="policy.json")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("verify", help="closed forms vs brute-force oracle on random instances")
    p.add_argument("--n-instances", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4, help="hard-policy L1 tolerance")
    p.add_argument("--soft-tol", type=float, default=1e-3)
    p.add_argument("--kkt-tol", type=float, default=1e-6)
    p.add_argument("--regularizer", choices=("log", "linear"), default="log")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("run", help="run the experiment pipeline")
    _add_experiment_args(p, "results")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("robust", help="robustness sweep over data corruptions")
    _add_experiment_args(p, "robust")
    p.set_defaults(func=cmd_robust)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc.__cause__, ConfigurationError) else EXIT_FAIL
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AlignExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""The pinned 5x5 benchmark on clean data.

Prints the return and the alignment residual of every extraction method.
The hard method matches V to round-off on every visited state; the soft
weight narrows the gap relative to AWR but does not close it. Rerun this
after an intentional pipeline change to refresh the pinned values in
tests/test_harness.py.
"""

from align_extract.harness import BENCHMARKS, run_experiment

config = BENCHMARKS["gridworld-5x5-mixed-v1"]
record = run_experiment(config)
clean = record.clean

print(f"{config.name}: {clean['dataset']['n']} transitions, (s,a) coverage {clean['dataset']['coverage']:.2f}")
print(f"critic converged in {clean['critic']['sweeps']} sweeps (residual {clean['critic']['residual']:.1e})")
print(f"behavior return J = {clean['behavior_return']!r}\n")
print(f"{'method':<16}{'J':>22}{'mean |E_pi Q - V|':>20}{'max':>12}")
for m in clean["methods"]:
    print(f"{m['method']:<16}{m['J']!r:>22}{m['mean_alignment']:>20.3e}{m['max_alignment']:>12.3e}")

print("\nsign of the alignment multiplier beta over visited states:", clean["beta_sign_histogram"])
print("KL(soft || hard) by eta:")
for eta, cell in clean["kl_soft_hard"]["per_eta"].items():
    print(f"  eta={eta:<5} mean {cell['mean']:.4f}  max {cell['max']:.4f}  over {cell['n_states']} states")

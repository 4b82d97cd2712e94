"""Corrupt half the benchmark dataset five different ways and compare methods.

Each attack gets its own named seed, so adding or reordering attacks does
not change the others. The table is J per method and attack with the
average in the last column.
"""

import sys

from align_extract.harness import BENCHMARKS, robustness_sweep

threads = int(sys.argv[1]) if len(sys.argv) > 1 else 1
record = robustness_sweep(BENCHMARKS["gridworld-5x5-mixed-v1"], threads=threads)

cols = record.table["columns"]
print("method".ljust(16) + "".join(c.split(":")[0].rjust(13) for c in cols))
for method, js in record.table["rows"].items():
    print(method.ljust(16) + "".join(f"{j:13.3f}" for j in js))

print("\nclean J for reference:")
for m in record.clean["methods"]:
    print(f"  {m['method']:<16}{m['J']:.3f}")

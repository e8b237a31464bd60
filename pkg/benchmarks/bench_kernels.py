"""Time the compiled and numpy batch kernels on identical inputs.

    python benchmarks/bench_kernels.py [--trials 2000] [--repeat 3]

Each configuration is simulated once per backend (best of ``--repeat``
runs) and the outputs are compared for bit equality.
"""

import argparse
import sys
import time

import numpy as np

from opfix import engine
from opfix.config import example_path, load_config

CONFIGS = ("static_contractive.cfg", "averaged_box.cfg", "online_contractive.cfg", "online_averaged.cfg")


def best_of(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = sorted(engine.KERNELS)
    if "cython" not in backends:
        print("compiled kernel not built; timing the numpy kernel only")
    seeds = np.arange(args.trials)
    header = f"{'config':<26}{'L':>5}{'d':>4}" + "".join(f"{b + ' [s]':>14}" for b in backends)
    print(header + ("   speedup  identical" if len(backends) == 2 else ""))
    mismatch = False
    for name in CONFIGS:
        it = load_config(example_path(name)).iteration
        times, results = {}, {}
        for b in backends:
            times[b], results[b] = best_of(lambda: engine.simulate_batch(it, seeds, backend=b), args.repeat)
        row = f"{name:<26}{it.horizon:>5}{it.base.dim:>4}" + "".join(f"{times[b]:>14.3f}" for b in backends)
        if len(backends) == 2:
            a, p = results["cython"], results["python"]
            same = all(np.array_equal(getattr(a, f), getattr(p, f))
                       for f in ("dist", "res_sq", "mask", "clamp_count"))
            mismatch |= not same
            row += f"{times['python'] / times['cython']:>10.2f}x  {same}"
        print(row)
    return 1 if mismatch else 0


if __name__ == "__main__":
    sys.exit(main())

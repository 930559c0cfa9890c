"""Compare the compiled kernels with their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel and problem size: best wall time of each backend,
the speedup and the largest relative difference between their outputs.
"""
import argparse
import timeit

import numpy as np

from vdlab._kernels import _fallback

try:
    from vdlab._kernels import _core
except ImportError:  # fallback-only install
    _core = None


def volterra_case(n, seed=0):
    rng = np.random.default_rng(seed)
    decay = np.exp(-4.0 * np.arange(n) / n)
    left = (rng.normal(size=n) + 1j * rng.normal(size=n)) * decay * 1e-3
    right = (rng.normal(size=n) + 1j * rng.normal(size=n)) * decay * 1e-3
    source = rng.normal(size=n) + 1j * rng.normal(size=n)
    return (left, right, source)


def echo_case(n_tau, cutoff):
    t = 20.0
    return (t, np.linspace(0.0, t, n_tau), 0.05, 0.01, 1.0, cutoff)


def best_time(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def max_rel_diff(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = np.max(np.abs(b)) or 1.0
    return float(np.max(np.abs(a - b)) / scale)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if _core is None:
        print("compiled kernels are not built; only the fallback is available")
        return
    cases = [("volterra_recurrence", f"n={n}", volterra_case(n)) for n in (500, 2000, 8000)]
    cases += [("echo_kernel_scan", f"taus={n} cutoff={c}", echo_case(n, c)) for n, c in ((1001, 8), (4001, 16))]
    print(f"{'kernel':<22}{'case':<24}{'cython [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'max rel diff':>14}")
    for name, label, case in cases:
        fast, slow = getattr(_core, name), getattr(_fallback, name)
        t_fast = best_time(fast, case, args.repeat)
        t_slow = best_time(slow, case, args.repeat)
        out_fast, out_slow = fast(*case), slow(*case)
        if name == "echo_kernel_scan":
            out_fast, out_slow = out_fast[0], out_slow[0]
        diff = max_rel_diff(out_fast, out_slow)
        print(f"{name:<22}{label:<24}{t_fast:>12.4g}{t_slow:>12.4g}{t_slow / t_fast:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()

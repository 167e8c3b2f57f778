"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--repeat 3]

Prints one line per (kernel, backend) with the best wall time and the speedup
of the compiled backend. Outputs of both backends are checked for agreement.
"""

import argparse
import time

import numpy as np

from splatmark import _kernels
from splatmark.gsmodel import synth_scene
from splatmark.keying import KeySet, prf_words
from splatmark.render import orbit_cameras, prepare_splats


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def composite_inputs(n=2048, size=64):
    scene = synth_scene(0, n)
    cam = orbit_cameras(scene, count=1, width=size, height=size)[0]
    return (*prepare_splats(scene, cam), size, size, np.zeros(3))


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--size", type=int, default=64)
    args = ap.parse_args(argv)

    impls = _kernels.backends()
    keys = KeySet.generate(np.random.default_rng(0))
    T = 200_000
    words = prf_words(keys.k_sel, b"bench", 2 * T)
    comp = composite_inputs(size=args.size)
    rng = np.random.default_rng(1)
    n = 4000
    o = np.repeat(np.arange(n), 8)
    s = rng.integers(0, n, size=o.size)

    cases = {
        f"fisher_yates(T={T})": lambda m: m.fisher_yates(words, T),
        f"composite({args.size}x{args.size})": lambda m: m.composite(*comp),
        f"greedy_assign({o.size} pairs)": lambda m: m.greedy_assign(o, s, n, n),
    }
    print(f"active backend: {_kernels.BACKEND}")
    for name, fn in cases.items():
        times, outs = {}, {}
        for bname, mod in impls.items():
            times[bname], outs[bname] = _best(lambda: fn(mod), args.repeat)
        line = "  ".join(f"{b}={t * 1e3:9.2f} ms" for b, t in times.items())
        if "cython" in times:
            ref, fast = outs["python"], outs["cython"]
            ok = all(np.allclose(a, b, atol=1e-12) if isinstance(a, np.ndarray) else a == b
                     for a, b in zip(ref if isinstance(ref, tuple) else (ref,),
                                     fast if isinstance(fast, tuple) else (fast,)))
            line += f"  speedup={times['python'] / times['cython']:7.1f}x  agree={ok}"
        print(f"{name:28s} {line}")


if __name__ == "__main__":
    main()

"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from deeplcc import _kernels_py
from deeplcc.model import OvmParams

try:
    from deeplcc import _kernels as _compiled
except ImportError:
    _compiled = None


def cases(n=6, steps=2000, T=944, depth=45):
    rng = np.random.default_rng(0)
    params = OvmParams().as_tuple()
    p0 = -20.0 * np.arange(n + 1, dtype=float)
    v0 = np.full(n + 1, 15.0)
    v_head = 15.0 + rng.uniform(-1, 1, steps + 1)
    mask = np.zeros(n, dtype=np.uint8)
    mask[[1, 4]] = 1
    accel = rng.uniform(-1, 1, (steps, n))
    noise = rng.uniform(-0.3, 0.3, (steps, n))
    w = np.ascontiguousarray(rng.standard_normal((T, 11)))
    s = np.full(n, 20.0)
    ds = rng.standard_normal(n)
    v = np.full(n, 15.0)
    return {
        f"integrate_platoon ({steps} steps)":
            lambda k: k.integrate_platoon(p0, v0, v_head, mask, accel, noise, *params, 0.05),
        "platoon_step":
            lambda k: k.platoon_step(p0, v0, 15.0, mask, accel[0], noise[0], *params, 0.05),
        "ovm_accel": lambda k: k.ovm_accel(s, ds, v, *params),
        f"hankel ({T}x11, depth {depth})": lambda k: k.hankel(w, depth),
        f"page ({T}x11, depth {depth})": lambda k: k.page(w, depth),
    }


def best_time(fn, repeat):
    t = timeit.Timer(fn)
    number, _ = t.autorange()
    return min(t.repeat(repeat, number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<36}{'python [us]':>14}{'cython [us]':>14}{'speedup':>10}")
    for name, call in cases().items():
        t_py = best_time(lambda: call(_kernels_py), args.repeat)
        if _compiled is None:
            print(f"{name:<36}{t_py * 1e6:14.1f}")
            continue
        t_cy = best_time(lambda: call(_compiled), args.repeat)
        print(f"{name:<36}{t_py * 1e6:14.1f}{t_cy * 1e6:14.1f}{t_py / t_cy:9.1f}x")


if __name__ == "__main__":
    main()

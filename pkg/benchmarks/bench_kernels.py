"""Compiled vs pure-Python compositing kernels on the same projected scenes.

Usage: python benchmarks/bench_kernels.py [--sizes 1000 4000] [--res 64] [--repeats 3]

Checks that the two backends agree before timing them, then prints one row
per (splat count, dtype, pass) with the median wall time of each backend.
"""
import argparse
import time

import numpy as np

from splatshard import _kernels
from splatshard.io import SceneSpec, synth_scene
from splatshard.splat import Camera, project


def _median_ms(fn, repeats):
    t = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        t.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(t))


def run(sizes, res, repeats, seed=0):
    if "compiled" not in _kernels.available_backends():
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    cam = Camera.look_at([0.0, 0.8, 3.0], [0, 0, 0], [0, 1, 0], res, res, 0.9 * res)
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        splats = synth_scene(SceneSpec(count=n, n_views=1, width=8, height=8), seed=seed).splats
        proj = project(splats, cam, keep_cache=True)
        gc = rng.normal(size=(res, res, 3))
        gT = rng.normal(size=(res, res))
        for dtype in (np.float64, np.float32):
            out, times = {}, {}
            for name in ("compiled", "python"):
                _kernels.use_backend(name)
                fwd = lambda: _kernels.composite(proj, cam, stop_T=1e-4, dtype=dtype)
                bwd = lambda: _kernels.composite_backward(proj, cam, gc, gT, stop_T=1e-4, dtype=dtype)
                out[name] = (fwd(), bwd())
                times[name] = (_median_ms(fwd, repeats), _median_ms(bwd, repeats))
            (cc, _, _), gcomp = out["compiled"]
            (cp, _, _), gpy = out["python"]
            tol = 1e-12 if dtype is np.float64 else 1e-5
            err = max(float(np.max(np.abs(cc - cp))),
                      max(float(np.max(np.abs(a - b), initial=0.0)) for a, b in zip(gcomp, gpy)))
            if err > tol:
                raise SystemExit(f"backends disagree at n={n} {np.dtype(dtype).name}: {err:.3e}")
            for i, label in enumerate(("forward", "backward")):
                c, p = times["compiled"][i], times["python"][i]
                rows.append((n, np.dtype(dtype).name, label, c, p, p / c if c > 0 else float("inf")))
    _kernels.use_backend("compiled")
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 4000, 16000])
    ap.add_argument("--res", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)
    rows = run(args.sizes, args.res, args.repeats)
    print(f"{'splats':>7} {'dtype':>8} {'pass':>9} {'compiled_ms':>12} {'python_ms':>10} {'speedup':>8}")
    for n, dt, label, c, p, s in rows:
        print(f"{n:>7} {dt:>8} {label:>9} {c:>12.2f} {p:>10.2f} {s:>7.1f}x")


if __name__ == "__main__":
    main()

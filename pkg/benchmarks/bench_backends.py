"""Wall-clock comparison of the numba and numpy loops.

    python3 benchmarks/bench_backends.py [--iters 100000] [--seeds 20]

The first numba call of each kernel includes compilation (cached on disk
afterwards), so every case is run once untimed before measuring.
"""
import argparse
import time

import numpy as np

from tts_opt import lqr, schedules, testbeds


def _timed(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=100_000)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--lqr-iters", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rows = []
    for regime, a0, b0 in (("strongly_convex", 4.0, 8.0), ("nonconvex", 1.0, 1.0)):
        spec = testbeds.make_testbed_spec(regime, 2, 2, seed=0)
        sched = schedules.regime_schedule(regime, a0, b0)
        seeds = range(args.seeds)
        t = {be: _timed(lambda be=be: testbeds.simulate(spec, sched, args.iters, seeds, stride=10,
                                                        backend=be), args.repeat)
             for be in ("numba", "numpy")}
        rows.append((f"testbed {regime} {args.seeds}x{args.iters}", t))

    inst = lqr.reference_instance()
    dare = lqr.solve_dare(inst)
    sched = schedules.StepSchedule()
    t = {be: _timed(lambda be=be: [lqr.run_lqr_ac(inst, sched, args.lqr_iters, s, backend=be,
                                                  dare=dare, safeguard="log")
                                   for s in range(10)], args.repeat)
         for be in ("numba", "numpy")}
    rows.append((f"lqr actor-critic 10x{args.lqr_iters}", t))

    width = max(len(r[0]) for r in rows)
    print(f"{'case':<{width}}  {'numba [s]':>10}  {'numpy [s]':>10}  speedup")
    for name, t in rows:
        print(f"{name:<{width}}  {t['numba']:10.3f}  {t['numpy']:10.3f}  {t['numpy'] / t['numba']:7.1f}x")


if __name__ == "__main__":
    np.seterr(all="ignore")
    main()

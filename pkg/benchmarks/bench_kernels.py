"""Time the plate update with the numba and numpy backends.

Usage: ``python benchmarks/bench_kernels.py [--steps N] [--desk-scale]``

Both backends advance the same Dulcken system from the same random state;
the script reports microseconds per output step and checks that the two
final states agree.
"""
import argparse
import time

import numpy as np

from soundboard_lab import runner
from soundboard_lab._backend import HAS_NUMBA
from soundboard_lab.fdtd.system import PlateSystem


def time_backend(system, state, steps, backend, repeats=3):
    system.run(state.copy(), 10, gamma=0.9999, backend=backend)  # warm-up and JIT compile
    best = float("inf")
    for _ in range(repeats):
        s = state.copy()
        t0 = time.perf_counter()
        system.run(s, steps, gamma=0.9999, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, s


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--desk-scale", action="store_true")
    args = p.parse_args(argv)

    layout, tmap = runner.prepare(runner.load_spec(desk_scale=args.desk_scale or None))
    system = PlateSystem(layout, tmap, dt=1 / 480_000)
    state = system.new_state()
    rng = np.random.default_rng(0)
    state.w[...], state.bu[...] = system.from_dofs(rng.standard_normal(system.n_plate + system.n_bar) * 1e-6)
    print(f"grid {layout.grid.nx} x {layout.grid.ny}, {system.substeps} substep(s), {args.steps} steps")

    results = {}
    for backend in (["numba"] if HAS_NUMBA else []) + ["numpy"]:
        seconds, final = time_backend(system, state, args.steps, backend)
        results[backend] = final
        print(f"{backend:>6}: {1e6 * seconds / args.steps:9.1f} us/step")
    if len(results) == 2:
        a, b = results["numba"], results["numpy"]
        diff = np.abs(a.w - b.w).max() / np.abs(b.w).max()
        print(f"max relative difference of final displacement: {diff:.1e}")


if __name__ == "__main__":
    main()

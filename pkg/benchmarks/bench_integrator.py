"""Wall-clock comparison of the compiled and pure-Python integrator backends.

Runs the same impact simulation on every available backend, checks that
the trajectories agree, and prints the median time of several repeats.

    python benchmarks/bench_integrator.py [--duration 8.5] [--repeats 3]
"""

import argparse
import statistics
import time

import numpy as np

from boltrom.dynamics import REF_SYSTEM, available_backends, simulate
from boltrom.synth import impulse_force


def run(backend, duration, amplitude, preload):
    pulse = impulse_force(amplitude, duration=duration)
    start = time.perf_counter()
    traj = simulate(REF_SYSTEM, pulse, preload, (0.0, duration), output_rate=4800,
                    backend=backend)
    return time.perf_counter() - start, traj


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--duration", type=float, default=8.5, help="simulated seconds")
    p.add_argument("--amplitude", type=float, default=1000.0, help="pulse amplitude in N")
    p.add_argument("--preload", type=float, default=1018.0, help="initial tension in N")
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args(argv)

    results = {}
    for backend in available_backends():
        times, traj = [], None
        for _ in range(args.repeats):
            dt, traj = run(backend, args.duration, args.amplitude, args.preload)
            times.append(dt)
        results[backend] = (statistics.median(times), traj)

    print(f"{'backend':<10} {'median s':>10} {'T_final N':>20}")
    for backend, (dt, traj) in results.items():
        print(f"{backend:<10} {dt:>10.3f} {traj.tension[-1]:>20.12f}")
    if len(results) == 2:
        (tc, a), (tp, b) = results["compiled"], results["python"]
        diff = float(np.max(np.abs(a.states - b.states)))
        print(f"speed-up {tp / tc:.1f}x, max state difference {diff:.2e}")
    else:
        print("compiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()

"""Throughput benchmark for the simulation kernels: numba vs pure NumPy.

Runs a settling mixed-size stack and a container push, timing raw steps.
Invoked normally it measures the current backend; with --compare it
re-launches itself under both STACKPUSH_NUMBA settings and prints the
speedup table (the fallback is slow; its step counts are scaled down).
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np


def build_stack_world(seed=5):
    from stackpush import symbols
    from stackpush.physics import world as W

    dom = symbols.make_domain(8)
    sizes = np.random.default_rng(seed).uniform(0.8, 1.2, 8)
    state = frozenset(
        {symbols.fluent("hand_empty", "R"), symbols.fluent("is_in", "C", "init")}
        | {symbols.fluent("at_container", f"B{i+1}", "C") for i in range(8)})
    return W.world_for_state(dom, state, sizes, seed=seed)


def measure(steps):
    from stackpush import backend_name

    w = build_stack_world()
    w.step(5)  # trigger compilation outside the timed region
    w.wake_all()
    t0 = time.perf_counter()
    done = 0
    while done < steps:
        chunk = min(250, steps - done)
        w.wake_all()
        w.step(chunk)
        done += chunk
    awake_dt = time.perf_counter() - t0

    w.settle()
    t0 = time.perf_counter()
    w.step(steps)
    asleep_dt = time.perf_counter() - t0
    return {
        "backend": backend_name(),
        "steps": steps,
        "awake_sps": steps / awake_dt,
        "asleep_sps": steps / asleep_dt,
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=20000)
    parser.add_argument("--compare", action="store_true",
                        help="run both backends via subprocesses")
    args = parser.parse_args(argv)

    if not args.compare:
        res = measure(args.steps)
        print(f"{res['backend']:>6s}: awake {res['awake_sps']:>10.0f} steps/s"
              f"   asleep {res['asleep_sps']:>10.0f} steps/s"
              f"   ({res['steps']} steps)")
        return 0

    rows = []
    for flag, steps in (("1", args.steps), ("0", max(args.steps // 50, 200))):
        env = dict(os.environ, STACKPUSH_NUMBA=flag)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--steps", str(steps)],
            env=env, capture_output=True, text=True, check=True)
        print(out.stdout, end="")
        rows.append(out.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Wall-clock comparison of the numba kernels against the plain-numpy fallback.

Each mode runs in its own interpreter because ``RPTS_NUMBA`` is read at
import time. Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys

CASES = r"""
import json, sys, time
import numpy as np
from rpts import EnvironmentSpec, RptsConfig
from rpts._accel import NUMBA_ENABLED
from rpts.netslice import hypoexponential_reward_mc
from rpts.simulate import run_particle_bandit, run_netslice

repeat = int(sys.argv[1])
bern = EnvironmentSpec("bernoulli", np.linspace(0.51, 0.60, 10))
ns = EnvironmentSpec("netslice", np.random.default_rng(5).random(18), block_counts=(3, 3, 3))
grid = np.random.default_rng(1).uniform(0.01, 0.4, (125, 3))
cases = {
    "pts bernoulli K=10 N=100 T=2000": lambda: run_particle_bandit(bern, 100, 2000, 0),
    "rpts bernoulli K=10 N=100 T=2000": lambda: run_particle_bandit(bern, 100, 2000, 0, rpts=RptsConfig()),
    "ctx_rpts netslice 3x3x3 N=100 T=200": lambda: run_netslice(ns, 100, 200, 0, rpts=RptsConfig()),
    "sla monte carlo 125 rows x 2e4": lambda: hypoexponential_reward_mc(
        grid, np.full(125, 0.5), 20000, np.random.default_rng(0)),
}
out = {"numba": NUMBA_ENABLED, "times": {}}
for name, fn in cases.items():
    fn()  # warm-up, includes compilation
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    out["times"][name] = best
print(json.dumps(out))
"""


def run_mode(flag, repeat):
    env = dict(os.environ, RPTS_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", CASES, str(repeat)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    jit = run_mode("1", args.repeat)
    ref = run_mode("0", args.repeat)
    if not jit["numba"]:
        print("numba not available; both columns use numpy", file=sys.stderr)
    width = max(len(k) for k in jit["times"])
    print(f"{'case':<{width}}  {'numba s':>9}  {'numpy s':>9}  {'speedup':>8}")
    for name, t_jit in jit["times"].items():
        t_ref = ref["times"][name]
        print(f"{name:<{width}}  {t_jit:9.4f}  {t_ref:9.4f}  {t_ref / t_jit:7.1f}x")


if __name__ == "__main__":
    main()

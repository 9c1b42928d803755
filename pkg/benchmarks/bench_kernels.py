#!/usr/bin/env python3
"""Time the hot kernels under the numba and pure-numpy backends.

The backend is fixed at import time by FAIRRL_DISABLE_NUMBA, so each backend
runs in its own subprocess. Sampling output is hashed to confirm both paths
draw identical trajectories.

    python benchmarks/bench_kernels.py [--individuals 200000] [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys
import time

CHILD = r"""
import hashlib, json, sys, time
import numpy as np
from fairrl import backend, datagen, kernels, rng
from fairrl.solver import Evaluator, SolveProblem, solve

n, repeat = int(sys.argv[1]), int(sys.argv[2])
spec = datagen.build_fico()
pi = np.full((spec.H, spec.X), 0.5)
P, init, r = spec.kernel.probs[0], spec.kernel.initial[0], spec.reward.mean[0]
keys = rng.stream_keys(7, 0, np.ones(n, dtype=np.int64), np.arange(n))

def best(fn):
    fn()  # warm-up, includes compilation on first use
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)

out = {"backend": backend()}
out["sample"] = best(lambda: kernels.sample(keys, init, P, pi, r, kernels.REWARD_BERNOULLI, 0.97))
s, a, rw, act = kernels.sample(keys, init, P, pi, r, kernels.REWARD_BERNOULLI, 0.97)
h = hashlib.sha256()
for arr in (s, a, rw, act):
    h.update(np.ascontiguousarray(arr).tobytes())
out["sample_sha256"] = h.hexdigest()[:16]
out["count"] = best(lambda: kernels.count(s, a, rw, act, spec.S, 2))
out["forward_x1000"] = best(lambda: [kernels.forward(pi, P, init) for _ in range(1000)])
ev = Evaluator(SolveProblem.from_spec(spec, "EqOpt"))
theta = np.full((spec.q, spec.H, spec.X), 0.5)
out["adjoint_x1000"] = best(lambda: [ev(theta) for _ in range(1000)])
out["solve_dp"] = best(lambda: solve(SolveProblem.from_spec(spec, "DP", bound=0.05, eta=0.05)))
print(json.dumps(out))
"""


def run(disable: bool, n: int, repeat: int) -> dict:
    env = dict(os.environ)
    env["FAIRRL_DISABLE_NUMBA"] = "1" if disable else "0"
    proc = subprocess.run(
        [sys.executable, "-c", CHILD, str(n), str(repeat)], env=env, capture_output=True, text=True, check=True
    )
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--individuals", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    t0 = time.time()
    nb = run(False, args.individuals, args.repeat)
    np_ = run(True, args.individuals, args.repeat)
    keys = [k for k in nb if k not in ("backend", "sample_sha256")]
    print(f"{'kernel':<16}{'numba [s]':>12}{'numpy [s]':>12}{'speed-up':>10}")
    for k in keys:
        print(f"{k:<16}{nb[k]:>12.4f}{np_[k]:>12.4f}{np_[k] / nb[k]:>10.1f}")
    same = nb["sample_sha256"] == np_["sample_sha256"]
    print(f"sampling identical across backends: {same} ({nb['sample_sha256']})")
    print(f"backends: {nb['backend']} / {np_['backend']}; wall {time.time() - t0:.1f}s")
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())

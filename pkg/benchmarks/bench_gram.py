"""Compare the jitted and numpy Gram kernels (forward + backward) and a full training epoch.

Usage: python benchmarks/bench_gram.py [--sizes 200 800 1600] [--repeat 5]
"""
import argparse
import os
import subprocess
import sys
import time


CHILD = r"""
import sys, time, numpy as np
from autogp import _gram
from autogp.model import AutoGPModel, ModelConfig, OptimConfig, fit
sizes = [int(s) for s in sys.argv[1].split(",")]
repeat = int(sys.argv[2])
rng = np.random.default_rng(0)
theta = (1.3, 0.7, 2.0)
for n in sizes:
    x = rng.normal(size=n)
    g = rng.normal(size=(n, n))
    for kind, name in enumerate(("SE", "PER", "LIN", "RQ")):
        _gram.gram_forward(kind, x[:4], x[:4], theta)  # compile outside the timing
        _gram.gram_backward(kind, x[:4], x[:4], theta, g[:4, :4])
        best = min(_time(lambda: (_gram.gram_forward(kind, x, x, theta),
                                  _gram.gram_backward(kind, x, x, theta, g))) for _ in range(repeat))
        print(f"gram {name} n={n} {best * 1e3:.2f}")
M = rng.normal(size=(200, 12, 1)); y = rng.normal(size=(200, 1))
model = AutoGPModel.build(M, "SE + PER*LIN + RQ", ModelConfig(delta=2))
fit(model, M, y, OptimConfig(epochs=1))
best = min(_time(lambda: fit(model, M, y, OptimConfig(epochs=1))) for _ in range(repeat))
print(f"epoch B=200 {best * 1e3:.2f}")
"""
PRELUDE = "import time\ndef _time(f):\n    t = time.perf_counter(); f(); return time.perf_counter() - t\n"


def run(backend: str, sizes, repeat: int) -> dict:
    env = dict(os.environ, AUTOGP_NUMBA="1" if backend == "numba" else "0")
    out = subprocess.run([sys.executable, "-c", PRELUDE + CHILD, ",".join(map(str, sizes)), str(repeat)],
                         env=env, check=True, capture_output=True, text=True).stdout
    rows = {}
    for line in out.splitlines():
        *key, ms = line.split()
        rows[" ".join(key)] = float(ms)
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[200, 800, 1600])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    nb = run("numba", args.sizes, args.repeat)
    npy = run("numpy", args.sizes, args.repeat)
    print(f"{'case':<22}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for key in nb:
        print(f"{key:<22}{nb[key]:>10.2f}{npy[key]:>10.2f}{npy[key] / nb[key]:>8.2f}x")


if __name__ == "__main__":
    main()

"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--sizes 1000,100000] [--repeat 20]

Also times one full constrained-VAE training step under each backend.
"""
import argparse
import importlib
import os
import subprocess
import sys
import timeit

import numpy as np


def time_kernels(sizes, repeat):
    py = importlib.import_module("multiplexnet._kernels_py")
    try:
        cy = importlib.import_module("multiplexnet._kernels")
    except ImportError:
        print("compiled extension not built; only the fallback is timed")
        cy = None
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'n':>9}{'python us':>12}{'cython us':>12}{'speedup':>9}{'max diff':>11}")
    for n in sizes:
        x = rng.normal(scale=20.0, size=n)
        pos = np.abs(x) + 1e-3
        cases = {
            "softplus": (x,),
            "sigmoid": (x,),
            "log_expm1": (pos,),
            "log_expm1_grad": (pos,),
            "interval": (x, np.full(n, -1.0), np.full(n, 2.0)),
        }
        for name, args in cases.items():
            fp = getattr(py, name)
            t_py = min(timeit.repeat(lambda: fp(*args), number=1, repeat=repeat)) * 1e6
            if cy is None:
                print(f"{name:<16}{n:>9}{t_py:>12.1f}")
                continue
            fc = getattr(cy, name)
            t_cy = min(timeit.repeat(lambda: fc(*args), number=1, repeat=repeat)) * 1e6
            diff = float(np.max(np.abs(fp(*args) - fc(*args))))
            print(f"{name:<16}{n:>9}{t_py:>12.1f}{t_cy:>12.1f}{t_py / t_cy:>9.2f}{diff:>11.2e}")


STEP = r"""
import time, numpy as np
from multiplexnet import nets, grad as G, kernels
from multiplexnet.bench import data
from multiplexnet.layerc import compile_formula
from multiplexnet.logic import make_vars
rng = np.random.default_rng(0)
x, f, names = data.gen_six_mode(64, rng)
order = make_vars(names)
m = nets.VaeModel(2, head=compile_formula(f, order)).init(rng)
opt = nets.Adam()
def step():
    tape = G.Tape(); P = nets.lift(m.params, tape)
    loss = nets.constrained_vae_loss(x, m, rng.standard_normal((64, m.latent)), P)
    g = tape.backward(loss); opt.step(m.params, {k: g[P[k]] for k in m.params})
step()
t = time.perf_counter()
for _ in range(50):
    step()
print(kernels.BACKEND, (time.perf_counter() - t) / 50 * 1e3)
"""


def time_training_step():
    print("\nconstrained VAE step, batch 64, K=8")
    for pure in ("", "1"):
        env = dict(os.environ, MULTIPLEXNET_PURE_PYTHON=pure)
        if not pure:
            env.pop("MULTIPLEXNET_PURE_PYTHON")
        out = subprocess.run([sys.executable, "-c", STEP], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"  {out[0]:<8} {float(out[1]):.2f} ms")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="64,1000,100000")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    time_kernels([int(s) for s in args.sizes.split(",")], args.repeat)
    time_training_step()


if __name__ == "__main__":
    main()

"""Compare the compiled and pure-Python kernel backends.

Kernels run on the design of a type IV model at n=10, m=100 (d = 1000
observations, s = 1221 effects). With ``--end-to-end`` one
``gaussian_approx`` call is also timed in a subprocess per backend, since
the backend is fixed at import.

    python3 benchmarks/bench_kernels.py [--repeat 7] [--end-to-end]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from dense_inla.gmrf import InteractionType
from dense_inla.kernels import available_backends, get_backend
from dense_inla.model import assemble_model, build_design_matrix
from dense_inla.simulate import SimulationSpec

END_TO_END = """
import time, numpy as np
from dense_inla.kernels import BACKEND
from dense_inla.gmrf import InteractionType
from dense_inla.inference import gaussian_approx
from dense_inla.likelihood import PoissonLikelihood
from dense_inla.model import assemble_model, build_design_matrix
from dense_inla.simulate import SimulationSpec, simulate_dataset
sim = SimulationSpec(10, 100, InteractionType(4, 2), seed=1)
data, _ = simulate_dataset(sim)
spec = sim.model_spec()
model = assemble_model(spec, build_design_matrix(spec, data.time, data.space))
theta = np.array([1.0, 5.0, 1.0, 5.0, 1.5])
lik = PoissonLikelihood(data)
gaussian_approx(model, theta, lik)
times = []
for _ in range({repeat}):
    t0 = time.perf_counter()
    gaussian_approx(model, theta, lik)
    times.append(time.perf_counter() - t0)
print(BACKEND, min(times))
"""


def kernel_inputs(seed=0):
    sim = SimulationSpec(10, 100, InteractionType(4, 2))
    spec = sim.model_spec()
    time = np.repeat(np.arange(1, 11), 100)
    space = np.tile(np.arange(1, 101), 10)
    design = build_design_matrix(spec, time, space)
    s = assemble_model(spec, design).s
    rng = np.random.default_rng(seed)
    K = 11
    return {
        "design": design,
        "s": s,
        "M": rng.standard_normal((s, 64)),
        "v": rng.standard_normal(design.shape[0]),
        "w": rng.uniform(0.1, 5.0, design.shape[0]),
        "means": rng.standard_normal((K, s)),
        "sds": rng.uniform(0.1, 1.0, (K, s)),
        "weights": np.full(K, 1.0 / K),
        "probs": np.array([0.025, 0.5, 0.975]),
    }


def run(repeat):
    x = kernel_inputs()
    D = x["design"]
    cases = {
        "design_gather (A @ M, 64 cols)": lambda k: k.design_gather(D.cols, D.vals, x["M"]),
        "design_rmatvec (A^T v)": lambda k: k.design_rmatvec(D.cols, D.vals, x["v"], x["s"]),
        "design_gram (A^T W A)": lambda k: k.design_gram(D.cols, D.vals, x["w"], x["s"]),
        "mixture_quantiles (11 x s, 3 probs)": lambda k: k.mixture_quantiles(
            x["means"], x["sds"], x["weights"], x["probs"], 1e-8
        ),
    }
    backends = available_backends()
    print(f"d = {D.shape[0]}, s = {x['s']}, backends: {', '.join(backends)}")
    print(f"{'kernel':<38}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases.items():
        times = {}
        outs = {}
        for b in backends:
            k = get_backend(b)
            outs[b] = fn(k)
            times[b] = min(timeit.repeat(lambda: fn(k), number=1, repeat=repeat))
        if len(backends) == 2:
            np.testing.assert_allclose(outs["cython"], outs["python"], rtol=1e-9, atol=1e-9)
        speed = f"{times['python'] / times['cython']:>9.1f}x" if "cython" in times else ""
        print(f"{name:<38}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends) + speed)


def run_end_to_end(repeat):
    print("gaussian_approx, type IV, n=10, m=100:")
    for forced in ("0", "1"):
        env = dict(os.environ, DENSE_INLA_PURE_PYTHON=forced)
        out = subprocess.run(
            [sys.executable, "-c", END_TO_END.format(repeat=repeat)], env=env, capture_output=True, text=True, check=True
        )
        backend, secs = out.stdout.split()
        print(f"  {backend:<8} {float(secs) * 1e3:9.1f} ms")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=7)
    p.add_argument("--end-to-end", action="store_true")
    args = p.parse_args(argv)
    run(args.repeat)
    if args.end_to_end:
        run_end_to_end(max(1, args.repeat // 2))


if __name__ == "__main__":
    main()

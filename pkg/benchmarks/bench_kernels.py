"""Time the compiled kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is timed on both backends with identical inputs, and their
outputs are compared. A full forward/backward step on the desk-scale
network is timed last, since that is what training actually pays for.
"""
import argparse
import timeit

import numpy as np

from mtaesthetic import _pykernels, kernels, network
from mtaesthetic.objectives import LossWeights, total_loss


def cases(rng):
    x = rng.standard_normal((64, 32, 32, 16))
    n, h, w, c = x.shape
    cols = _pykernels.im2col(x, 3, 1)
    pooled, idx = _pykernels.maxpool_forward(x, 3, 2)
    dout = rng.standard_normal(pooled.shape)
    a = rng.standard_normal((40, 40))
    sym = a @ a.T
    return {
        "im2col 64x32x32x16 k3": lambda k: k.im2col(x, 3, 1),
        "col2im 64x32x32x16 k3": lambda k: k.col2im(cols, n, h, w, c, 3, 1),
        "maxpool fwd k3/2": lambda k: k.maxpool_forward(x, 3, 2),
        "maxpool bwd k3/2": lambda k: k.maxpool_backward(dout, idx, h, w, 3, 2),
        "jacobi eigh 40x40": lambda k: k.jacobi_eigh(sym.copy(), 1e-14, 100),
    }


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def train_step(repeat):
    arch = network.ArchitectureConfig.preset("mtcnn1", "desk")
    graph, params = network.build(arch, 0)
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.5, 0.5, (64, *arch.input_shape))
    y = rng.integers(0, 2, 64)
    z = (rng.random((64, arch.n_attributes)) < 0.2).astype(float)

    def step():
        tr = network.forward(graph, params, x)
        _, og, _ = total_loss(tr, y, z, params, LossWeights(0.125, 0.125))
        network.backward(graph, params, tr, og)

    out = {}
    for backend in ("numpy", "cython"):
        if backend == "cython" and not kernels.HAVE_COMPILED:
            continue
        kernels.use(backend)
        out[backend] = best(step, repeat)
    kernels.use("cython" if kernels.HAVE_COMPILED else "numpy")
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not kernels.HAVE_COMPILED:
        print("compiled kernels are not built; only the numpy backend is timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}  agree")
    for name, fn in cases(rng).items():
        t_py = best(lambda: fn(kernels.pure), args.repeat)
        if kernels.HAVE_COMPILED:
            t_c = best(lambda: fn(kernels.compiled), args.repeat)
            a, b = fn(kernels.pure), fn(kernels.compiled)
            a = a if isinstance(a, tuple) else (a,)
            b = b if isinstance(b, tuple) else (b,)
            agree = all(np.allclose(u, v, atol=1e-10) for u, v in zip(a, b) if np.ndim(u))
            print(f"{name:28s} {1e3 * t_py:10.2f} {1e3 * t_c:10.2f} {t_py / t_c:8.2f}  {agree}")
        else:
            print(f"{name:28s} {1e3 * t_py:10.2f} {'-':>10s}")
    step = train_step(args.repeat)
    line = f"{'desk train step, batch 64':28s} {1e3 * step['numpy']:10.2f}"
    if "cython" in step:
        line += f" {1e3 * step['cython']:10.2f} {step['numpy'] / step['cython']:8.2f}"
    print(line)


if __name__ == "__main__":
    main()

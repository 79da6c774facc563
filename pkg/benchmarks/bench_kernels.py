"""Compare the compiled MLP kernels with the numpy fallback.

Times one forward plus one backward pass (the per-step cost of training)
and a forward-only pass (the per-step cost of sampling), for a few widths
and batch sizes, and checks that both backends agree.

    python3 benchmarks/bench_kernels.py [--repeat 50]
"""

import argparse
import timeit

import numpy as np

from curveflow import _kernels_py

try:
    from curveflow import _kernels as _compiled
except ImportError:
    _compiled = None

CASES = [(64, 256), (64, 1024), (128, 256), (128, 1024), (256, 256)]


def make_net(width, depth=3, d_in=10, d_out=2, seed=0):
    rng = np.random.default_rng(seed)
    sizes = [d_in] + [width] * depth + [d_out]
    ws = [rng.uniform(-1, 1, (o, i)) * np.sqrt(3 / i) for i, o in zip(sizes[:-1], sizes[1:])]
    bs = [rng.standard_normal(o) * 0.1 for o in sizes[1:]]
    return ws, bs


def time_backend(mod, x, ws, bs, repeat):
    def fwd():
        mod.mlp_forward(x, ws, bs, 0)

    def train_step():
        out, cache = mod.mlp_forward(x, ws, bs, 0)
        mod.mlp_backward(np.ones_like(out), ws, cache, 0)

    f = min(timeit.repeat(fwd, number=1, repeat=repeat))
    t = min(timeit.repeat(train_step, number=1, repeat=repeat))
    return f * 1e6, t * 1e6


def max_diff(x, ws, bs):
    a, ca = _compiled.mlp_forward(x, ws, bs, 0)
    b, cb = _kernels_py.mlp_forward(x, ws, bs, 0)
    g = np.ones_like(a)
    da = _compiled.mlp_backward(g, ws, ca, 0)
    db = _kernels_py.mlp_backward(g, ws, cb, 0)
    diffs = [np.abs(a - b).max()] + [np.abs(p - q).max() for p, q in zip(da[0] + da[1], db[0] + db[1])]
    return max(diffs)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    if _compiled is None:
        print("compiled kernels not built; only the numpy backend is available")
    print(f"{'width':>5} {'batch':>5} | {'numpy fwd':>10} {'numpy f+b':>10} | "
          f"{'compiled fwd':>12} {'compiled f+b':>12} | {'speedup f+b':>11} {'max diff':>9}")
    for width, batch in CASES:
        ws, bs = make_net(width)
        x = np.random.default_rng(1).standard_normal((batch, 10))
        pf, pt = time_backend(_kernels_py, x, ws, bs, args.repeat)
        if _compiled is None:
            print(f"{width:5d} {batch:5d} | {pf:8.0f}us {pt:8.0f}us |")
            continue
        cf, ct = time_backend(_compiled, x, ws, bs, args.repeat)
        print(f"{width:5d} {batch:5d} | {pf:8.0f}us {pt:8.0f}us | {cf:10.0f}us {ct:10.0f}us | "
              f"{pt / ct:10.2f}x {max_diff(x, ws, bs):9.1e}")


if __name__ == "__main__":
    main()

"""Time the compiled and pure-Python kernel backends on benchmark-sized inputs.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat N] [--fit-iters N]

Each kernel is timed on the shapes of the default synthetic problem
(50 images of 30x30 pixels, 3 sources, 20 random features, 32 control
points), then a short fit measures the cost of a full iteration. Both
backends must agree on every output; the script checks this before timing.
"""

import argparse
import timeit

import numpy as np

from gpsep import _kernels
from gpsep.model import Hyperparams
from gpsep.optim import FitConfig, fit
from gpsep.spatial import build_kernel
from gpsep.synth import SynthConfig, generate


def _inputs(rng):
    data, _ = generate(SynthConfig(seed=0))
    n_src, J, P, F = 3, 20, data.n_subjects, data.n_features
    kf = build_kernel(data.grid, 0.5, 2.0)
    drow, dcol = kf.dkernels
    return {
        "rff_forward": (rng.normal(size=(n_src, J)), rng.normal(size=(n_src, J)), rng.uniform(0, 6.28, J),
                        rng.uniform(size=P)),
        "rff_backward": (rng.normal(size=(n_src, J)), rng.normal(size=(n_src, J)), rng.uniform(0, 6.28, J),
                         rng.uniform(size=P), rng.normal(size=(n_src, P)), rng.normal(size=(n_src, P))),
        "lik_residual_grad": (data.values, rng.normal(size=(n_src, P)), rng.normal(size=(n_src, F)), 400.0),
        "sqrt_grad_contract": (rng.normal(size=(n_src, 30, 30)), rng.normal(size=(n_src, 30, 30)), kf.sqrt_eigs,
                               drow, dcol, kf.row_vals, kf.col_vals),
    }, data


def _flatten(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(np.asarray(o, dtype=float)) for o in out])
    return np.ravel(np.asarray(out, dtype=float))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=200, help="calls per kernel timing")
    parser.add_argument("--fit-iters", type=int, default=300, help="iterations of the end-to-end timing")
    args = parser.parse_args(argv)

    backends = _kernels.available_backends()
    if len(backends) < 2:
        print("compiled backend not built; only", backends, "available")
    inputs, data = _inputs(np.random.default_rng(0))

    results = {}
    for name, call_args in inputs.items():
        outs = {}
        for b in backends:
            _kernels.use_backend(b)
            fn = getattr(_kernels, name)
            outs[b] = _flatten(fn(*call_args))
            results[(name, b)] = min(timeit.repeat(lambda: fn(*call_args), number=args.repeat, repeat=3)) / args.repeat
        if len(outs) == 2:
            a, c = outs.values()
            err = np.max(np.abs(a - c)) / max(1.0, np.max(np.abs(a)))
            if err > 1e-10:
                raise SystemExit(f"backends disagree on {name}: relative difference {err:.2e}")

    hp = Hyperparams()
    cfg = FitConfig(max_iters=args.fit_iters, window=args.fit_iters + 1)
    for b in backends:
        _kernels.use_backend(b)
        tr = fit(data, hp, cfg)
        results[("fit iteration", b)] = tr.wall_time / args.fit_iters

    names = list(inputs) + ["fit iteration"]
    print(f"{'kernel':<22}" + "".join(f"{b:>14}" for b in backends) + ("   speedup" if len(backends) == 2 else ""))
    for name in names:
        row = f"{name:<22}" + "".join(f"{results[(name, b)] * 1e6:>11.1f} us" for b in backends)
        if len(backends) == 2:
            row += f"   {results[(name, 'python')] / results[(name, 'compiled')]:>6.2f}x"
        print(row)


if __name__ == "__main__":
    main()

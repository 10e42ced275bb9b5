"""Timing comparison of the compiled kernel extension against the numpy
fallback.

Runs each hot kernel (softmax, layer norm, recurrent sequence) forward and
backward at model-shaped sizes on every importable backend and prints a
table with per-call times and the speedup of each backend over numpy.

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--dtype float32|float64]
"""

import argparse
import time

import numpy as np

from trajflow._kernels import available_backends

# model-shaped workloads: rows = agents * frames, width = embedding,
# recurrent length = full horizon with one batch lane per mode
SOFTMAX_SHAPE = (3520, 110)
LAYERNORM_SHAPE = (3520, 128)
LSTM_SHAPE = (110, 6, 128, 128)  # T, B, I, H


def _best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _softmax_case(backend, dtype, rng):
    x = (rng.normal(size=SOFTMAX_SHAPE) * 3).astype(dtype)
    dy = rng.normal(size=SOFTMAX_SHAPE).astype(dtype)
    y = backend.softmax_forward(x)
    return {
        "softmax fwd": lambda: backend.softmax_forward(x),
        "softmax bwd": lambda: backend.softmax_backward(y, dy),
    }


def _layernorm_case(backend, dtype, rng):
    rows, cols = LAYERNORM_SHAPE
    x = rng.normal(size=(rows, cols)).astype(dtype)
    gamma = rng.normal(size=cols).astype(dtype)
    beta = rng.normal(size=cols).astype(dtype)
    dy = rng.normal(size=(rows, cols)).astype(dtype)
    _, mean, rstd = backend.layernorm_forward(x, gamma, beta, 1e-5)
    return {
        "layernorm fwd": lambda: backend.layernorm_forward(x, gamma, beta, 1e-5),
        "layernorm bwd": lambda: backend.layernorm_backward(x, gamma, mean, rstd, dy),
    }


def _lstm_case(backend, dtype, rng):
    t, b, i, h = LSTM_SHAPE
    x = np.ascontiguousarray(rng.normal(size=(t, b, i)).astype(dtype))
    wx = (rng.normal(size=(i, 4 * h)) * 0.3).astype(dtype)
    wh = (rng.normal(size=(h, 4 * h)) * 0.3).astype(dtype)
    bias = rng.normal(size=4 * h).astype(dtype)
    dh = np.ascontiguousarray(rng.normal(size=(t, b, h)).astype(dtype))
    hs, cs, gates = backend.lstm_forward(x, wx, wh, bias)
    return {
        "lstm fwd": lambda: backend.lstm_forward(x, wx, wh, bias),
        "lstm bwd": lambda: backend.lstm_backward(x, wx, wh, hs, cs, gates, dh),
    }


def run(repeats, dtype):
    backends = available_backends()
    names = sorted(backends, key=lambda n: n != "numpy")  # numpy first as baseline
    rng = np.random.default_rng(0)
    rows = []
    for case in (_softmax_case, _layernorm_case, _lstm_case):
        timed = {name: case(backends[name], dtype, rng) for name in names}
        for op in timed[names[0]]:
            times = {name: _best_of(timed[name][op], repeats) for name in names}
            rows.append((op, times))
    return names, rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20, help="best-of repeat count")
    ap.add_argument("--dtype", choices=("float32", "float64"), default="float64")
    args = ap.parse_args(argv)

    names, rows = run(args.repeats, np.dtype(args.dtype))
    shapes = {
        "softmax": f"{SOFTMAX_SHAPE[0]}x{SOFTMAX_SHAPE[1]}",
        "layernorm": f"{LAYERNORM_SHAPE[0]}x{LAYERNORM_SHAPE[1]}",
        "lstm": "T{}xB{}xI{}xH{}".format(*LSTM_SHAPE),
    }
    header = f"{'op':<14} {'shape':<18}" + "".join(f" {n + ' (ms)':>14}" for n in names)
    if len(names) > 1:
        header += f" {'speedup':>9}"
    print(f"dtype={args.dtype}  repeats={args.repeats}  backends={','.join(names)}")
    print(header)
    print("-" * len(header))
    for op, times in rows:
        shape = shapes[op.split()[0]]
        line = f"{op:<14} {shape:<18}"
        for n in names:
            line += f" {times[n] * 1e3:>14.3f}"
        if len(names) > 1:
            line += f" {times[names[0]] / times[names[-1]]:>8.2f}x"
        print(line)
    if len(names) == 1:
        print("note: compiled extension not importable, timed numpy fallback only")


if __name__ == "__main__":
    main()

"""Timing comparison of the compiled kernels against the pure-python ones.

Run from the repository root:

    python3 benchmarks/bench_backends.py [--repeats N]

Each kernel is timed on sizes matching what training actually sees
(64-dim embeddings, 65-token sequences, 64x64 rasters), plus one small
end-to-end forward/backward through the full composite loss under each
backend.  The compiled extension is optional; if it is missing the
script reports python-only numbers.
"""

import argparse
import importlib
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))


def _load(name):
    if name == "python":
        from segprompt.backend import pykernels
        return pykernels
    try:
        from segprompt.backend import _kernels
        return _kernels
    except ImportError:
        return None


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(rng):
    a = rng.standard_normal((65, 64))
    b = rng.standard_normal((64, 64))
    gain = np.ones(64)
    bias = np.zeros(64)
    raster = (rng.random((64, 64)) < 0.4).astype(np.uint8)
    states = np.arange(4096, dtype=np.uint64)
    p = rng.standard_normal(4096)
    gvec = rng.standard_normal(4096)
    mvec = np.zeros(4096)
    vvec = np.zeros(4096)
    g = rng.standard_normal((65, 64))
    return [
        ("mm 65x64 @ 64x64", lambda k: k.mm(a, b)),
        ("mm_at", lambda k: k.mm_at(a, a)),
        ("mm_bt", lambda k: k.mm_bt(a, np.ascontiguousarray(b.T))),
        ("softmax_rows", lambda k: k.softmax_rows(a)),
        ("layer_norm_rows", lambda k: k.layer_norm_rows(a, gain, bias, 1e-5)),
        ("gelu", lambda k: k.gelu(a)),
        ("gelu_grad", lambda k: k.gelu_grad(a, g)),
        (
            "layer_norm_rows_grad",
            lambda k: k.layer_norm_rows_grad(
                a, gain, *k.layer_norm_rows(a, gain, bias, 1e-5)[1:], g
            ),
        ),
        (
            "adam_update 4096",
            lambda k: k.adam_update(
                p.copy(), gvec, mvec.copy(), vvec.copy(), 3, 1e-3, 0.9, 0.999, 1e-8
            ),
        ),
        ("mix64_array 4096", lambda k: k.mix64_array(states.copy())),
        ("binary_dilate r=1", lambda k: k.binary_dilate(raster, 1)),
        ("binary_erode r=1", lambda k: k.binary_erode(raster, 1)),
        ("label_components4", lambda k: k.label_components4(raster)),
    ]


def end_to_end(backend_name, repeats):
    """Forward+backward of the composite loss on a 2-image batch."""
    os.environ["SEGPROMPT_BACKEND"] = backend_name
    for mod in [m for m in list(sys.modules) if m.startswith("segprompt")]:
        del sys.modules[mod]
    importlib.invalidate_caches()
    from segprompt import autodiff as ad
    from segprompt.gradcheck import _tiny_setup
    from segprompt.optim import zero_grads
    from segprompt.training import batch_loss

    params, images, labels = _tiny_setup(trial=0)

    def run():
        breakdown = batch_loss(params, images, labels, 0.5)
        ad.backward(breakdown.l_total)
        zero_grads(params.tensors)

    return time_call(run, repeats)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    py = _load("python")
    comp = _load("compiled")
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)

    print(f"{'kernel':<22} {'python':>12} {'compiled':>12} {'speedup':>9}")
    for label, fn in cases:
        t_py = time_call(lambda: fn(py), args.repeats)
        if comp is None:
            print(f"{label:<22} {t_py * 1e6:>10.1f}us {'n/a':>12} {'':>9}")
            continue
        t_c = time_call(lambda: fn(comp), args.repeats)
        ratio = t_py / t_c if t_c > 0 else float("inf")
        print(
            f"{label:<22} {t_py * 1e6:>10.1f}us {t_c * 1e6:>10.1f}us "
            f"{ratio:>8.2f}x"
        )

    saved = os.environ.get("SEGPROMPT_BACKEND", "")
    try:
        t_py = end_to_end("python", max(2, args.repeats // 2))
        line = f"{'loss fwd+bwd (2 img)':<22} {t_py * 1e3:>10.1f}ms"
        if comp is not None:
            t_c = end_to_end("compiled", max(2, args.repeats // 2))
            line += f" {t_c * 1e3:>10.1f}ms {t_py / t_c:>8.2f}x"
        print(line)
    finally:
        os.environ["SEGPROMPT_BACKEND"] = saved


if __name__ == "__main__":
    main()

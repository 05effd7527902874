"""Compiled and pure-python kernels must agree to float ulps."""

import subprocess
import sys

import numpy as np
import pytest

from segprompt.backend import pykernels as py

ck = pytest.importorskip(
    "segprompt.backend._kernels", reason="compiled extension not built"
)

rng = np.random.default_rng(123)


def test_backend_name_exported():
    import segprompt.backend as b

    assert b.BACKEND in ("python", "compiled")
    assert b.kernels.NAME == b.BACKEND


def test_invalid_backend_env_rejected():
    code = (
        "import os; os.environ['SEGPROMPT_BACKEND']='fortran';"
        "import segprompt.backend"
    )
    proc = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True)
    assert proc.returncode != 0
    assert "SEGPROMPT_BACKEND" in proc.stderr


def test_forced_python_backend():
    code = (
        "import os; os.environ['SEGPROMPT_BACKEND']='python';"
        "import segprompt.backend as b; print(b.BACKEND)"
    )
    proc = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip() == "python"


def test_mix64_array_parity():
    states = rng.integers(0, 2**64, size=500, dtype=np.uint64)
    assert np.array_equal(py.mix64_array(states), ck.mix64_array(states))


def test_matmul_parity():
    a = rng.standard_normal((17, 33))
    b = rng.standard_normal((33, 9))
    assert np.allclose(py.mm(a, b), ck.mm(a, b), rtol=0, atol=1e-12)
    c = rng.standard_normal((17, 21))
    assert np.allclose(py.mm_at(a, c), ck.mm_at(a, c), rtol=0, atol=1e-12)
    d = rng.standard_normal((9, 33))
    assert np.allclose(py.mm_bt(a, d), ck.mm_bt(a, d), rtol=0, atol=1e-12)


def test_softmax_parity():
    x = rng.standard_normal((11, 7)) * 30
    assert np.allclose(py.softmax_rows(x), ck.softmax_rows(x), atol=1e-14)


def test_layer_norm_parity():
    x = rng.standard_normal((19, 24))
    gain = rng.standard_normal(24) + 2.0
    bias = rng.standard_normal(24)
    dy = rng.standard_normal((19, 24))
    ya, ma, ra = py.layer_norm_rows(x, gain, bias, 1e-5)
    yb, mb, rb = ck.layer_norm_rows(x, gain, bias, 1e-5)
    assert np.allclose(ya, yb, atol=1e-12)
    assert np.allclose(ma, mb, atol=1e-14)
    assert np.allclose(ra, rb, atol=1e-12)
    ga = py.layer_norm_rows_grad(x, gain, ma, ra, dy)
    gb = ck.layer_norm_rows_grad(x, gain, mb, rb, dy)
    for pa, pb in zip(ga, gb):
        assert np.allclose(pa, pb, atol=1e-12)


def test_gelu_parity():
    x = rng.standard_normal((8, 13)) * 4
    dy = rng.standard_normal((8, 13))
    assert np.allclose(py.gelu(x), ck.gelu(x), atol=1e-14)
    assert np.allclose(py.gelu_grad(x, dy), ck.gelu_grad(x, dy), atol=1e-14)


def test_adam_parity():
    p1 = rng.standard_normal(301)
    p2 = p1.copy()
    g = rng.standard_normal(301)
    m1, v1 = np.zeros(301), np.zeros(301)
    m2, v2 = np.zeros(301), np.zeros(301)
    for step in (1, 2, 3):
        py.adam_update(p1, g, m1, v1, step, 1e-3, 0.9, 0.999, 1e-8)
        ck.adam_update(p2, g, m2, v2, step, 1e-3, 0.9, 0.999, 1e-8)
    assert np.array_equal(p1, p2)
    assert np.array_equal(m1, m2)
    assert np.array_equal(v1, v2)


def test_morphology_parity():
    mask = (rng.random((48, 48)) < 0.3).astype(np.uint8)
    for r in (0, 1, 2, 3):
        assert np.array_equal(py.binary_dilate(mask, r), ck.binary_dilate(mask, r))
        assert np.array_equal(py.binary_erode(mask, r), ck.binary_erode(mask, r))


def test_labeling_parity():
    for density in (0.2, 0.5, 0.8):
        mask = (rng.random((40, 40)) < density).astype(np.uint8)
        la, na = py.label_components4(mask)
        lb, nb = ck.label_components4(mask)
        assert na == nb
        assert np.array_equal(np.asarray(la), np.asarray(lb))

"""Backend parity: the compiled kernels must match the numpy reference."""

import numpy as np
import numpy.testing as npt
import pytest

from trajflow._kernels import available_backends

BACKENDS = available_backends()


def _tol(dtype):
    return 1e-13 if dtype == np.float64 else 2e-6


@pytest.fixture(params=[k for k in BACKENDS if k != "numpy"])
def other(request):
    if len(BACKENDS) < 2:
        pytest.skip("only the numpy backend is importable")
    return BACKENDS[request.param]


@pytest.fixture(params=[np.float64, np.float32])
def dtype(request):
    return request.param


def test_softmax_parity(other, dtype):
    nb = BACKENDS["numpy"]
    rng = np.random.default_rng(7)
    for rows, cols in [(1, 1), (3, 5), (17, 64), (40, 2)]:
        x = (rng.normal(size=(rows, cols)) * 4).astype(dtype)
        y_ref = nb.softmax_forward(x)
        y = other.softmax_forward(x)
        npt.assert_allclose(y, y_ref, rtol=0, atol=_tol(dtype))
        dy = rng.normal(size=(rows, cols)).astype(dtype)
        npt.assert_allclose(
            other.softmax_backward(y, dy), nb.softmax_backward(y_ref, dy), rtol=0, atol=_tol(dtype)
        )


def test_layernorm_parity(other, dtype):
    nb = BACKENDS["numpy"]
    rng = np.random.default_rng(8)
    for rows, cols in [(1, 2), (5, 9), (12, 128)]:
        x = rng.normal(size=(rows, cols)).astype(dtype)
        gamma = rng.normal(size=cols).astype(dtype)
        beta = rng.normal(size=cols).astype(dtype)
        y_ref, m_ref, r_ref = nb.layernorm_forward(x, gamma, beta, 1e-5)
        y, m, r = other.layernorm_forward(x, gamma, beta, 1e-5)
        npt.assert_allclose(y, y_ref, rtol=0, atol=_tol(dtype) * 10)
        npt.assert_allclose(m, m_ref, rtol=0, atol=_tol(dtype))
        npt.assert_allclose(r, r_ref, rtol=1e-6 if dtype == np.float32 else 1e-14, atol=0)
        dy = rng.normal(size=(rows, cols)).astype(dtype)
        for a, b in zip(
            other.layernorm_backward(x, gamma, m, r, dy),
            nb.layernorm_backward(x, gamma, m_ref, r_ref, dy),
        ):
            npt.assert_allclose(a, b, rtol=0, atol=_tol(dtype) * 100)


def test_lstm_parity(other, dtype):
    nb = BACKENDS["numpy"]
    rng = np.random.default_rng(9)
    for t, b, i, h in [(1, 1, 1, 1), (4, 3, 6, 5), (11, 2, 8, 8)]:
        x = np.ascontiguousarray(rng.normal(size=(t, b, i)).astype(dtype))
        wx = rng.normal(size=(i, 4 * h)).astype(dtype) * 0.5
        wh = rng.normal(size=(h, 4 * h)).astype(dtype) * 0.5
        bias = rng.normal(size=4 * h).astype(dtype)
        h_ref, c_ref, g_ref = nb.lstm_forward(x, wx, wh, bias)
        h_out, c_out, g_out = other.lstm_forward(x, wx, wh, bias)
        npt.assert_allclose(h_out, h_ref, rtol=0, atol=_tol(dtype) * 10)
        npt.assert_allclose(c_out, c_ref, rtol=0, atol=_tol(dtype) * 10)
        npt.assert_allclose(g_out, g_ref, rtol=0, atol=_tol(dtype) * 10)
        dh = np.ascontiguousarray(rng.normal(size=(t, b, h)).astype(dtype))
        for a, bb in zip(
            other.lstm_backward(x, wx, wh, h_out, c_out, g_out, dh),
            nb.lstm_backward(x, wx, wh, h_ref, c_ref, g_ref, dh),
        ):
            npt.assert_allclose(a, bb, rtol=0, atol=_tol(dtype) * 100)


def test_selected_backend_exports_all_kernels():
    from trajflow import _kernels

    for fn in (
        "softmax_forward",
        "softmax_backward",
        "layernorm_forward",
        "layernorm_backward",
        "lstm_forward",
        "lstm_backward",
    ):
        assert callable(getattr(_kernels, fn))
    assert _kernels.NAME in BACKENDS

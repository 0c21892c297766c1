"""The compiled and numpy kernels must agree, and each must match an independent formula."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpsep import _kernels, _kernels_py

compiled_only = pytest.mark.skipif("compiled" not in _kernels.available_backends(),
                                   reason="compiled backend not built")

dims = st.tuples(st.integers(1, 4), st.integers(1, 6), st.integers(1, 9))


def _rand(seed, *shape):
    return np.random.default_rng(seed).standard_normal(shape)


@given(dims, st.integers(0, 2**31))
def test_rff_forward_formula(backend, shape, seed):
    n, J, T = shape
    om, w = 5 * _rand(seed, n, J), _rand(seed + 1, n, J)
    b = np.random.default_rng(seed).uniform(0, 2 * np.pi, J)
    t = np.random.default_rng(seed + 2).uniform(0, 1, T)
    vals, der = _kernels.rff_forward(om, w, b, t)
    for i in range(n):
        for k in range(T):
            ref = np.sqrt(2 / J) * sum(w[i, j] * np.cos(om[i, j] * t[k] + b[j]) for j in range(J))
            dref = -np.sqrt(2 / J) * sum(w[i, j] * om[i, j] * np.sin(om[i, j] * t[k] + b[j]) for j in range(J))
            assert vals[i, k] == pytest.approx(ref, abs=1e-12)
            assert der[i, k] == pytest.approx(dref, abs=1e-11)


@given(dims, st.integers(0, 2**31))
def test_rff_backward_is_the_adjoint(backend, shape, seed):
    n, J, T = shape
    rng = np.random.default_rng(seed)
    om, w, b, t = rng.normal(size=(n, J)), rng.normal(size=(n, J)), rng.uniform(0, 6, J), rng.uniform(0, 1, T)
    gv, gd = rng.normal(size=(n, T)), rng.normal(size=(n, T))
    g_om, g_w, g_t = _kernels.rff_backward(om, w, b, t, gv, gd)

    def f(om_, w_, t_):
        v, d = _kernels.rff_forward(om_, w_, b, t_)
        return float(np.sum(gv * v) + np.sum(gd * d))

    h = 1e-6
    d_om, d_w, d_t = rng.normal(size=(n, J)), rng.normal(size=(n, J)), rng.normal(size=T)
    fd_om = (f(om + h * d_om, w, t) - f(om - h * d_om, w, t)) / (2 * h)
    fd_w = (f(om, w + h * d_w, t) - f(om, w - h * d_w, t)) / (2 * h)
    fd_t = (f(om, w, t + h * d_t) - f(om, w, t - h * d_t)) / (2 * h)
    assert np.sum(g_om * d_om) == pytest.approx(fd_om, rel=1e-5, abs=1e-7)
    assert np.sum(g_w * d_w) == pytest.approx(fd_w, rel=1e-5, abs=1e-7)
    assert np.sum(g_t * d_t) == pytest.approx(fd_t, rel=1e-5, abs=1e-7)


def test_rff_backward_accepts_missing_upstream(backend, rng):
    om, w, b, t = rng.normal(size=(2, 3)), rng.normal(size=(2, 3)), rng.uniform(0, 6, 3), rng.uniform(0, 1, 4)
    g_om, g_w, g_t = _kernels.rff_backward(om, w, b, t, None, None)
    assert not g_om.any() and not g_w.any() and not g_t.any()


@given(st.tuples(st.integers(1, 4), st.integers(1, 12), st.integers(1, 15)), st.integers(0, 2**31))
def test_lik_residual_grad_formula(backend, shape, seed):
    n, P, F = shape
    rng = np.random.default_rng(seed)
    y, s, a = rng.normal(size=(P, F)), rng.normal(size=(n, P)), rng.normal(size=(n, F))
    sq, g_s, g_a = _kernels.lik_residual_grad(y, s, a, 2.5)
    r = y - s.T @ a
    assert sq == pytest.approx(np.sum(r**2), rel=1e-12)
    np.testing.assert_allclose(g_s, 2.5 * a @ r.T, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(g_a, 2.5 * s @ r, rtol=1e-10, atol=1e-12)


@compiled_only
@given(st.tuples(st.integers(1, 3), st.integers(1, 6), st.integers(1, 6)), st.integers(0, 2**31))
def test_sqrt_grad_contract_backends_agree(shape, seed):
    n, H, W = shape
    rng = np.random.default_rng(seed)
    gt, kt = rng.normal(size=(n, H, W)), rng.normal(size=(n, H, W))
    rv, cv = rng.uniform(0.1, 2, H), rng.uniform(0.1, 2, W)
    q = np.sqrt(np.outer(rv, cv) + 1e-3)
    dr, dc = rng.normal(size=(H, H)), rng.normal(size=(W, W))
    args = (gt, kt, q, dr, dc, rv, cv)
    with _kernels.use_backend("python"):
        ref = _kernels.sqrt_grad_contract(*args)
    with _kernels.use_backend("compiled"):
        out = _kernels.sqrt_grad_contract(*args)
    np.testing.assert_allclose(out, ref, rtol=1e-10, atol=1e-12)


@compiled_only
def test_lik_reduction_independent_of_threads(rng):
    y, s, a = rng.normal(size=(50, 900)), rng.normal(size=(3, 50)), rng.normal(size=(3, 900))
    from gpsep import _core

    ref = _core.lik_residual_grad(y, s, a, 1.0, 8, 1)
    for n in (2, 4, 8):
        out = _core.lik_residual_grad(y, s, a, 1.0, 8, n)
        assert out[0] == ref[0]
        np.testing.assert_array_equal(out[1], ref[1])
        np.testing.assert_array_equal(out[2], ref[2])


def test_numpy_reference_module_is_complete():
    for name in ("rff_forward", "rff_backward", "lik_residual_grad", "sqrt_grad_contract"):
        assert callable(getattr(_kernels_py, name))


def test_use_backend_context_restores(backend):
    before = _kernels.backend()
    with _kernels.use_backend("python"):
        assert _kernels.backend() == "python"
    assert _kernels.backend() == before
    with pytest.raises(ValueError):
        _kernels.use_backend("fortran")


def test_environment_forces_pure_python():
    env = dict(os.environ, GPSEP_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from gpsep import _kernels; print(_kernels.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"

import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from multiplexnet import _kernels_py as py

try:
    from multiplexnet import _kernels as cy
except ImportError:  # extension not built
    cy = None

needs_ext = pytest.mark.skipif(cy is None, reason="compiled kernels not built")


@needs_ext
@pytest.mark.parametrize("name", ["softplus", "sigmoid"])
def test_unary_parity(name):
    x = np.concatenate([np.linspace(-800, 800, 4001), [0.0, -0.0, 1e-300, -1e-300]])
    np.testing.assert_allclose(getattr(cy, name)(x), getattr(py, name)(x), rtol=4e-16, atol=0)


@needs_ext
@pytest.mark.parametrize("name", ["log_expm1", "log_expm1_grad"])
def test_positive_parity(name):
    x = np.geomspace(1e-12, 700, 4001)
    np.testing.assert_allclose(getattr(cy, name)(x), getattr(py, name)(x), rtol=1e-14)


@needs_ext
def test_interval_parity_and_shapes():
    rng = np.random.default_rng(0)
    raw = rng.normal(scale=10, size=(7, 3))
    lo, hi = np.full((7, 3), -1.0), np.full((7, 3), 2.5)
    np.testing.assert_allclose(cy.interval(raw, lo, hi), py.interval(raw, lo, hi), rtol=1e-15)
    for fn in (cy.softplus, cy.sigmoid):
        assert fn(np.float64(0.5)).shape == ()
        assert fn(np.zeros((2, 3))).shape == (2, 3)


def test_fallback_values():
    assert py.softplus(np.array(0.0)) == np.log(2)
    assert py.sigmoid(np.array(-1000.0)) == 0.0
    assert np.isfinite(py.log_expm1(np.array([1e-300, 1000.0]))).all()


def test_backend_switch():
    code = "import multiplexnet.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, MULTIPLEXNET_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
    k = importlib.import_module("multiplexnet.kernels")
    assert k.BACKEND == ("cython" if cy is not None and not os.environ.get(
        "MULTIPLEXNET_PURE_PYTHON") else "python")

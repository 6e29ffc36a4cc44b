"""The compiled extension and the pure-NumPy fallback must agree exactly."""

import numpy as np
import pytest

from fslm._core import available_backends, get_backend, use_backend
from fslm._util import rng_for
from fslm.metrics import KdTree
from fslm.sim.hh import (
    HhConstants,
    StimulusProtocol,
    default_hh_prior,
    exemplar_params,
    simulate_hh_batch,
)

HAS_COMPILED = "compiled" in available_backends()
needs_compiled = pytest.mark.skipif(
    not HAS_COMPILED, reason="compiled extension not built"
)


def test_available_backends_always_include_python():
    assert "python" in available_backends()


def test_use_backend_overrides_and_restores():
    with use_backend("python") as backend:
        assert backend.name == "python"
        assert get_backend().name == "python"
    # nested override wins, then unwinds
    if HAS_COMPILED:
        with use_backend("python"):
            with use_backend("compiled"):
                assert get_backend().name == "compiled"
            assert get_backend().name == "python"


def test_unknown_backend_rejected():
    with pytest.raises(ValueError, match="unknown backend"):
        with use_backend("gpu"):
            pass


def test_env_variable_selects_backend(monkeypatch):
    monkeypatch.setenv("FSLM_BACKEND", "python")
    assert get_backend().name == "python"


@needs_compiled
def test_hh_integration_backends_agree():
    rng = rng_for("backend", "hh")
    prior = default_hh_prior()
    thetas = prior.sample(16, rng)
    # include the exemplar so the comparison covers a known spiking trace
    thetas[0] = exemplar_params().to_array()
    protocol = StimulusProtocol(total_ms=200.0, duration_ms=80.0)
    with use_backend("python"):
        v_py, gates_py, div_py = simulate_hh_batch(thetas, protocol, HhConstants())
    with use_backend("compiled"):
        v_cy, gates_cy, div_cy = simulate_hh_batch(thetas, protocol, HhConstants())
    np.testing.assert_array_equal(div_py, div_cy)
    assert np.allclose(v_py, v_cy, rtol=0, atol=1e-9)
    assert np.allclose(gates_py, gates_cy, rtol=0, atol=1e-12)


@needs_compiled
def test_kd_queries_backends_agree_with_ties():
    rng = rng_for("backend", "kd")
    # quantized coordinates force exact distance ties
    pts = np.round(rng.uniform(-2, 2, size=(400, 3)), 1)
    queries = np.round(rng.uniform(-2, 2, size=(150, 3)), 1)
    with use_backend("python"):
        tree = KdTree(pts)
        idx_py, d2_py = tree.query(queries)
    with use_backend("compiled"):
        tree = KdTree(pts)
        idx_cy, d2_cy = tree.query(queries)
    # winners (including tie-breaks) must match exactly; the accumulated
    # distances may differ by float summation order between C and NumPy
    np.testing.assert_array_equal(idx_py, idx_cy)
    np.testing.assert_allclose(d2_py, d2_cy, rtol=1e-12)

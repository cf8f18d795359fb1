import os
import subprocess
import sys

import numpy as np
import pytest

from fairot import _accel, kernels
from fairot._parallel import max_workers, pmap
from fairot.otcore import Empirical1D, SinkhornConfig, exact_wasserstein_1d, sinkhorn

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not importable")


def both(fn):
    out = {}
    for name in ("numba", "numpy"):
        with _accel.use_backend(name):
            out[name] = fn()
    return out["numba"], out["numpy"]


def test_cost_matrix_parity(rng):
    x, y = rng.normal(size=17), rng.normal(size=11)
    for p in (1, 2):
        nb, np_ = both(lambda: kernels.cost_matrix(x, y, p))
        assert np.array_equal(nb, np_)
        assert np.allclose(nb, np.abs(x[:, None] - y[None, :]) ** p, rtol=1e-15)


def test_monotone_plan_parity(rng):
    a, b = rng.dirichlet(np.ones(9)), rng.dirichlet(np.ones(6))
    nb, np_ = both(lambda: kernels.monotone_plan(a, b))
    for u, v in zip(nb, np_):
        assert np.allclose(u, v, atol=1e-15)
    assert nb[2].sum() == pytest.approx(1.0)


def test_wasserstein_parity(rng):
    for _ in range(20):
        a = Empirical1D.from_samples(rng.normal(size=8), rng.dirichlet(np.ones(8)))
        b = Empirical1D.from_samples(rng.normal(size=5) + 1, rng.dirichlet(np.ones(5)))
        for p in (1, 2):
            nb, np_ = both(lambda: exact_wasserstein_1d(p, a, b))
            assert nb == pytest.approx(np_, rel=1e-13, abs=1e-15)


def test_sinkhorn_parity(rng):
    C = rng.random((25, 30))
    a, b = rng.dirichlet(np.ones(25)), rng.dirichlet(np.ones(30))
    for eps in (0.1, 0.01, 1e-3):
        cfg = SinkhornConfig(epsilon=eps, tol=1e-9)
        nb, np_ = both(lambda: sinkhorn(C, a, b, cfg))
        assert nb.converged and np_.converged
        assert np.allclose(nb.plan.entries, np_.plan.entries, atol=1e-8)
        assert nb.transport_cost == pytest.approx(np_.transport_cost, rel=1e-7)


def test_plan_from_potentials_parity(rng):
    C = rng.random((6, 7))
    f, g = rng.normal(size=6) * 0.1, rng.normal(size=7) * 0.1
    nb, np_ = both(lambda: kernels.plan_from_potentials(C, f, g, 0.3))
    assert np.allclose(nb, np_, rtol=1e-14)


def test_use_backend_restores():
    before = _accel.backend()
    with _accel.use_backend("numpy"):
        assert _accel.backend() == "numpy"
    assert _accel.backend() == before
    with pytest.raises(ValueError):
        _accel.set_backend("cuda")


def test_env_flag_disables_numba():
    code = "from fairot import _accel; print(_accel.backend())"
    env = dict(os.environ, **{_accel.ENV_FLAG: "1"})
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env[_accel.ENV_FLAG] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numba"


def test_thread_cap(monkeypatch):
    monkeypatch.delenv("FAIROT_THREADS", raising=False)
    assert max_workers() == 1
    assert max_workers(4) == 4
    monkeypatch.setenv("FAIROT_THREADS", "2")
    assert max_workers(8) == 2
    assert max_workers() == 2
    assert pmap(lambda v: v * v, range(10), 4) == [v * v for v in range(10)]

import os
import subprocess
import sys

import numpy as np
import pytest

from rspmle import (
    BACKEND,
    BinomialObservationModel,
    Observation,
    RspContext,
    build_grid,
    gaussian_landscape,
    make_rng,
    observation_log_likelihood,
    sample_path,
)
from rspmle import _core_py, _kernels
from rspmle.incomplete import binomial_log_likelihood

compiled = pytest.importorskip("rspmle._core")


@pytest.fixture
def python_kernels(monkeypatch):
    def use():
        monkeypatch.setattr(_kernels, "chain_series", _core_py.chain_series)
        monkeypatch.setattr(_kernels, "sample_walk", _core_py.sample_walk)

    return use


def _observations():
    return [
        Observation(0, 35, "nodes", (7, 14, 21)),
        Observation(5, 30, "edges", ((11, 16), (16, 22))),
        Observation(2, 33, "nodes", (8,)),
    ]


def test_backend_is_compiled_when_built():
    assert BACKEND == "compiled"


@pytest.mark.parametrize("beta", [0.05, 1.0, 6.0])
@pytest.mark.parametrize("prior", ["uniform", "given"])
def test_series_backends_agree(beta, prior, python_kernels):
    g = build_grid(6, 6, gaussian_landscape(6, 6, seed=3))
    ctx = RspContext(g, beta)
    want = [observation_log_likelihood(ctx, o, prior) for o in _observations()]
    python_kernels()
    got = [observation_log_likelihood(RspContext(g, beta), o, prior) for o in _observations()]
    assert got == pytest.approx(want, rel=1e-12)


def test_geometric_series_backends_agree(python_kernels):
    g = build_grid(6, 6)
    ctx = RspContext(g, 0.7)
    o = _observations()[1]
    model = BinomialObservationModel(0.3)
    want = binomial_log_likelihood(ctx, model, o.s, o.t, o.obs, method="series")
    python_kernels()
    got = binomial_log_likelihood(RspContext(g, 0.7), model, o.s, o.t, o.obs, method="series")
    assert got == pytest.approx(want, rel=1e-12)


def test_sampler_backends_draw_identical_paths(python_kernels):
    g = build_grid(8, 8)
    ctx = RspContext(g, 0.4)
    want = [sample_path(ctx, 0, 63, make_rng(5)) for _ in range(5)]
    python_kernels()
    got = [sample_path(RspContext(g, 0.4), 0, 63, make_rng(5)) for _ in range(5)]
    assert got == want


def test_env_forces_python_backend():
    env = dict(os.environ, RSPMLE_BACKEND="python")
    out = subprocess.run(
        [sys.executable, "-c", "import rspmle; print(rspmle.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


def test_kernel_status_codes_match():
    # a cap of one term leaves both kernels unconverged with status 1
    g = build_grid(5, 5)
    ctx = RspContext(g, 0.05)
    from rspmle.incomplete import build_operator, completion_bounds

    op = build_operator(ctx, 0, 24, "nodes", [6, 12])
    system = ctx.absorbed(24)
    G, gamma = completion_bounds(ctx, op)
    D = system.D
    args = (
        D.indptr.astype(np.int64), D.indices.astype(np.int64), D.data, op.t, op.seed,
        op.src, op.dst, op.weight, G, gamma, _kernels.LAW_UNIFORM, 0.0, 1e-12, 1, 1e-250,
    )
    a = compiled.chain_series(*args)
    b = _core_py.chain_series(*args)
    assert a[3] == b[3] == 1
    assert a[1] == b[1]

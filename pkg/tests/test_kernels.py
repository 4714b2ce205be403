"""The compiled and pure-Python kernels must agree bit for bit."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ecdf_ks, proportional_share
from tdprobe import _kernels

BACKENDS = [_kernels.python] + ([_kernels.compiled] if _kernels.compiled else [])


@pytest.fixture(params=BACKENDS, ids=lambda k: k.BACKEND)
def kernel(request):
    return request.param


def test_compiled_backend_is_active():
    if _kernels.compiled is None:
        pytest.skip("extension not built")
    assert _kernels.BACKEND == "cython"


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=1, max_size=50), st.lists(st.integers(0, 20), min_size=1, max_size=50))
def test_ks_backends_agree_with_oracle(a, b):
    sa, sb = np.sort(np.array(a, float)), np.sort(np.array(b, float))
    want = ecdf_ks(a, b)
    for k in BACKENDS:
        assert k.ks_sorted(sa, sb) == want


def test_allocate_examples(kernel):
    out = np.zeros(2)
    kernel.allocate(np.array([8e6, 8e6]), np.ones(2), 8e6, out)
    assert list(out) == [4e6, 4e6]
    out = np.zeros(1)
    kernel.allocate(np.array([4e6]), np.ones(1), 10e6, out)
    assert list(out) == [4e6]


def test_allocate_loaded_link_constants(kernel):
    # four 4 Mbit/s flows, weights 2/1/2/2, 12 Mbit/s: shares 12*8/28 and 12*4/28
    out = np.zeros(4)
    kernel.allocate(np.full(4, 4e6), np.array([2.0, 1.0, 2.0, 2.0]), 12e6, out)
    assert out == pytest.approx([24e6 / 7, 12e6 / 7, 24e6 / 7, 24e6 / 7], rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1e7), st.floats(0.1, 10)), min_size=1, max_size=8), st.floats(1e3, 3e7))
def test_allocate_matches_oracle(flows, cap):
    d = np.array([f[0] for f in flows])
    w = np.array([f[1] for f in flows])
    want = proportional_share(list(d), list(w), cap)
    outs = []
    for k in BACKENDS:
        out = np.zeros(len(flows))
        k.allocate(d, w, cap, out)
        assert out == pytest.approx(want, rel=1e-9, abs=1e-6)
        assert np.all(out <= d * (1 + 1e-12))
        outs.append(out)
    for o in outs[1:]:
        assert np.array_equal(o, outs[0])


def test_simulate_link_backends_identical():
    rng = np.random.default_rng(3)
    offered = rng.uniform(0, 5e6, size=(300, 5))
    rate = np.array([0.0, 250_000.0, 0.0, 100_000.0, 0.0])
    burst = np.array([0.0, 125_000.0, 0.0, 10_000.0, 0.0])
    weight = np.array([1.0, 2.0, 1.0, 0.5, 3.0])
    results = []
    for k in BACKENDS:
        alloc, dem = np.zeros_like(offered), np.zeros_like(offered)
        k.simulate_link(offered, rate, burst, weight, 12e6, 0.01, alloc, dem)
        results.append((alloc, dem))
    for alloc, dem in results[1:]:
        assert np.array_equal(alloc, results[0][0])
        assert np.array_equal(dem, results[0][1])


def test_fallback_selected_by_environment():
    env = {**os.environ, "TDPROBE_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", "import tdprobe; print(tdprobe.KERNEL_BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"

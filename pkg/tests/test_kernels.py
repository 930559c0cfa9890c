import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vdlab import _kernels
from vdlab._kernels import _fallback

compiled = pytest.importorskip("vdlab._kernels._core", reason="compiled kernels not built")


def random_kernel(rng, n):
    decay = np.exp(-0.05 * np.arange(n))
    left = (rng.normal(size=n) + 1j * rng.normal(size=n)) * decay * 0.01
    right = (rng.normal(size=n) + 1j * rng.normal(size=n)) * decay * 0.01
    source = rng.normal(size=n) + 1j * rng.normal(size=n)
    return left, right, source


class TestBackendSelection:
    def test_default_is_compiled(self):
        if os.environ.get("VDLAB_PURE_PYTHON") != "1":
            assert _kernels.BACKEND == "cython"

    def test_env_forces_fallback(self):
        code = "import vdlab; print(vdlab.BACKEND)"
        env = dict(os.environ, VDLAB_PURE_PYTHON="1")
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "python"


class TestVolterraRecurrence:
    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 300))
    def test_parity(self, seed, n):
        args = random_kernel(np.random.default_rng(seed), n)
        a = np.asarray(compiled.volterra_recurrence(*args))
        b = _fallback.volterra_recurrence(*args)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14 * np.max(np.abs(b)))

    def test_against_direct_sum(self, rng):
        left, right, source = random_kernel(rng, 40)
        rho = np.asarray(compiled.volterra_recurrence(left, right, source))
        for n in range(1, 40):
            acc = source[n] + left[n] * rho[0] + right[0] * rho[n]
            acc += sum((left[n - j] + right[n - j]) * rho[j] for j in range(1, n))
            assert abs(rho[n] - acc) < 1e-13 * max(1.0, abs(rho[n]))

    def test_empty(self):
        empty = np.zeros(0, dtype=complex)
        assert np.asarray(compiled.volterra_recurrence(empty, empty, empty)).size == 0
        assert _fallback.volterra_recurrence(empty, empty, empty).size == 0

    def test_overflow_saturates(self):
        n = 400
        grow = np.full(n, 100.0 + 0j)
        out = [np.asarray(impl(grow, np.zeros(n, dtype=complex), np.ones(n, dtype=complex)))
               for impl in (compiled.volterra_recurrence, _fallback.volterra_recurrence)]
        for rho in out:
            assert not np.all(np.abs(rho) < 1e300)
        first = [int(np.argmax(~(np.abs(r) < 1e300))) for r in out]
        assert first[0] == first[1]


class TestEchoKernelScan:
    @settings(max_examples=25, deadline=None)
    @given(t=st.floats(0.5, 40.0), dl=st.floats(0.01, 0.3), dm=st.floats(0.0, 0.2),
           gamma=st.floats(0.0, 3.0), cutoff=st.integers(1, 10))
    def test_parity(self, t, dl, dm, gamma, cutoff):
        taus = np.linspace(0, t, 37)
        va, ka, la = (np.asarray(x) for x in compiled.echo_kernel_scan(t, taus, dl, dm, gamma, cutoff))
        vb, kb, lb = _fallback.echo_kernel_scan(t, taus, dl, dm, gamma, cutoff)
        np.testing.assert_allclose(va, vb, rtol=1e-13)
        np.testing.assert_array_equal(ka, kb)
        np.testing.assert_array_equal(la, lb)

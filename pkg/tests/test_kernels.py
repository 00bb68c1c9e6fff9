import os
import subprocess
import sys

import numpy as np
import pytest

from hybridens import _kernels_py, kernels

compiled = pytest.importorskip("hybridens._kernels")


class TestBackendParity:
    def test_selected_backend(self):
        assert kernels.BACKEND in ("cython", "python")

    def test_legendre(self):
        x = np.linspace(-1, 1, 37)
        np.testing.assert_allclose(compiled.legendre_table(12, x), _kernels_py.legendre_table(12, x),
                                   rtol=1e-13, atol=1e-15)

    def test_tendency(self):
        x = np.random.default_rng(0).standard_normal((2, 4, 8)) * 3
        np.testing.assert_allclose(compiled.l96_tendency(x, 8.0, 0.05), _kernels_py.l96_tendency(x, 8.0, 0.05),
                                   rtol=1e-13, atol=1e-13)

    def test_integrate(self):
        x = 8.0 + np.random.default_rng(1).standard_normal((1, 4, 8))
        a, fa = compiled.l96_integrate(x, 8.0, 0.05, 0.01, 20, 5, 1e3)
        b, fb = _kernels_py.l96_integrate(x, 8.0, 0.05, 0.01, 20, 5, 1e3)
        assert fa == fb == -1
        np.testing.assert_allclose(a, b, rtol=1e-11)

    def test_blow_up_step_matches(self):
        x = 8.0 + np.random.default_rng(2).standard_normal((1, 4, 8))
        _, fa = compiled.l96_integrate(x, 1e4, 0.05, 0.05, 100, 1, 1e3)
        _, fb = _kernels_py.l96_integrate(x, 1e4, 0.05, 0.05, 100, 1, 1e3)
        assert fa == fb > 0

    def test_fair_crps(self):
        rng = np.random.default_rng(3)
        m, y = rng.standard_normal((7, 4, 8)), rng.standard_normal((4, 8))
        np.testing.assert_allclose(compiled.fair_crps_points(m, y), _kernels_py.fair_crps_points(m, y),
                                   rtol=1e-12, atol=1e-14)

    def test_environment_forces_fallback(self):
        env = dict(os.environ, HYBRIDENS_PURE_PYTHON="1")
        res = subprocess.run([sys.executable, "-c", "from hybridens import kernels; print(kernels.BACKEND)"],
                             env=env, capture_output=True, text=True, check=True)
        assert res.stdout.strip() == "python"

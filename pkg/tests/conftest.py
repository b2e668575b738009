import math

import numpy as np
import pytest

from vortex_topo.field_core import PerturbationParams, VortexParams
from vortex_topo.topology import alpha_critical

BASE = VortexParams(B0=2.0, r_s=1.0, z_s=1.0)
BASE_PERT = PerturbationParams(alpha=0.2, k=0.25)

# electron orbit geometry: r_s = 25 cm, z_s = 75 cm, B0 = 5 T, k z_s = 0.1 pi
ORBIT_VORTEX = VortexParams(B0=5.0, r_s=0.25, z_s=0.75)
ORBIT_K = math.pi * 0.1 / 0.75
ORBIT_PERT = PerturbationParams(alpha=0.1, k=ORBIT_K)


def at_fraction(params, k, q):
    """Perturbation at ``q * alpha_c``."""
    return PerturbationParams(alpha=q * alpha_critical(params, k), k=k)


def points_inside(params, n, seed, scale=0.95):
    """Uniform points inside the unperturbed separatrix ellipsoid shrunk by ``scale``."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        q = rng.uniform(-1, 1, size=(4 * n, 3))
        q = q[np.sum(q * q, axis=1) < 1.0]
        out.extend(q.tolist())
    q = np.array(out[:n]) * scale
    return q * np.array([params.r_s, params.r_s, params.z_s])


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """List of ``(number, passed, detail)`` shown in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE_KEY, [])
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, passed, detail in sorted(results):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")

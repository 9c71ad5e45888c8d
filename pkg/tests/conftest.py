import sys

import numpy as np
import pytest

from photostereo.render import SceneSpec, Specular, render_scene, sample_hemisphere_lights


def hemisphere_grid(max_inclination_deg: float, n_incl: int = 40, n_azim: int = 72) -> np.ndarray:
    """Unit vectors on a regular (inclination, azimuth) grid, inclination in [0, max]."""
    t = np.radians(np.linspace(0.0, max_inclination_deg, n_incl))
    p = np.linspace(0.0, 2 * np.pi, n_azim, endpoint=False)
    t, p = np.meshgrid(t, p, indexing="ij")
    return np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1).reshape(-1, 3)


def random_hemisphere(rng, n: int, max_inclination_deg: float = 90.0) -> np.ndarray:
    zmin = np.cos(np.radians(max_inclination_deg))
    z = rng.uniform(zmin, 1.0, n)
    phi = rng.uniform(0.0, 2 * np.pi, n)
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


@pytest.fixture(scope="session")
def lambertian_sphere():
    spec = SceneSpec("sphere", (65, 65))
    return render_scene(spec, sample_hemisphere_lights(96, 90, seed=0))


@pytest.fixture(scope="session")
def specular_bumps():
    spec = SceneSpec("bumps", (40, 40), albedo=0.8, specular=Specular(0.5, 20), seed=3)
    return render_scene(spec, sample_hemisphere_lights(64, 90, seed=3))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        status, detail = module.VERDICTS.get(n, ("NOT RUN", ""))
        terminalreporter.write_line(f"criterion {n:2d}: {status:7s} {detail}")

"""Shared fixtures: meshes and solved runs reused across test modules.

Everything here is deterministic, so session scope is safe; tests only
read from these objects (geometry caches fill in lazily, which is fine).
"""

import numpy as np
import pytest

from legmsfem import cli, finefem, mesh


@pytest.fixture(scope="session")
def quad44():
    return mesh.build_coarse("quad", 4, 4)


@pytest.fixture(scope="session")
def tri44():
    return mesh.build_coarse("triangle", 4, 4)


@pytest.fixture(scope="session")
def fine_quad44(quad44):
    return mesh.refine_to_fine(quad44, 8)


@pytest.fixture(scope="session")
def fine_tri44(tri44):
    return mesh.refine_to_fine(tri44, 8)


@pytest.fixture(scope="session")
def small_bench():
    """Resolved periodic problem at desk scale: eps=1/4, 4x4 quads,
    fine cell 1/32 = eps/8."""
    cfg = cli.RunConfig.from_dict({
        "schema": 1, "kind": "quad", "nx": 4, "ny": 4, "n_sub": 8,
        "coefficient": {"type": "periodic_benchmark", "eps": 0.25},
        "rhs": {"type": "constant", "value": -1.0}, "N": 2, "M": 0})
    return cli.run_single(cfg)


@pytest.fixture(scope="session")
def small_bench_bubbles():
    cfg = cli.RunConfig.from_dict({
        "schema": 1, "kind": "quad", "nx": 4, "ny": 4, "n_sub": 8,
        "coefficient": {"type": "periodic_benchmark", "eps": 0.25},
        "rhs": {"type": "constant", "value": -1.0}, "N": 2, "M": 1})
    return cli.run_single(cfg)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260819)


def fourier_poisson_center(terms: int = 400) -> float:
    """Series value at the center of the unit square for -lap v = 1."""
    s = 0.0
    for m in range(1, terms, 2):
        for n in range(1, terms, 2):
            s += (16.0 / (np.pi**4 * m * n * (m * m + n * n))
                  * np.sin(m * np.pi / 2) * np.sin(n * np.pi / 2))
    return s


def fourier_poisson_integral(terms: int = 800) -> float:
    """Series value of the integral of v for -lap v = 1."""
    s = 0.0
    for m in range(1, terms, 2):
        for n in range(1, terms, 2):
            s += 64.0 / (np.pi**6 * m * m * n * n * (m * m + n * n))
    return s

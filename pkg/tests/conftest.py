"""Shared fixtures.  The pipeline runs take seconds each, so they are computed once per session."""

import numpy as np
import pytest
from hypothesis import settings

from thinfree.pipelines import l_shape_points, run_named_example, run_prop_subsets, run_thm_approx
from thinfree.polyalg import radial_power

settings.register_profile("thinfree", deadline=None, max_examples=60)
settings.load_profile("thinfree")


@pytest.fixture(scope="session")
def run_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("runs")


@pytest.fixture(scope="session")
def named(run_dir):
    """Lazily computed pinned examples, written to ``run_dir/<name>``."""
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = run_named_example(name, out_dir=run_dir / name)
        return cache[name]

    return get


@pytest.fixture(scope="session")
def subsets_report(run_dir):
    f = radial_power(2, 2) - 0.5
    return run_prop_subsets(f, 0.1, out_dir=run_dir / "subsets", keep_fields=True)


@pytest.fixture(scope="session")
def lshape_report(run_dir):
    return run_thm_approx(l_shape_points(), 0.2, out_dir=run_dir / "approx")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

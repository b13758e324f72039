import sys
from pathlib import Path

import pytest
from hypothesis import settings

from stmesh.binoctree import ExtractionConfig
from stmesh.field import OccupancyFieldSpec, make_field
from stmesh.pipeline import extract
from stmesh.trajectory import generate_path

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

TOY_ROOT = dict(root_origin=(-1.6, -1.6, -1.6), root_size=3.2)


@pytest.fixture(scope="session")
def sphere():
    return make_field(OccupancyFieldSpec("sphere", 0, {"center": (0, 0, 0), "radius": 1.0}))


@pytest.fixture(scope="session")
def blobs():
    return make_field(
        OccupancyFieldSpec(
            "blobs",
            3,
            {
                "ellipsoids": [[0, 0, 0, 0.9, 0.7, 0.8], [0.5, 0.4, 0.2, 0.5, 0.5, 0.6]],
                "amplitude": 0.3,
                "frequency": 1.5,
            },
        )
    )


@pytest.fixture(scope="session")
def fly_path():
    return generate_path("flythrough", 4, 6, start=(-3, 0.3, 0.2), end=(3, -0.2, 0.1), width=64, height=48)


@pytest.fixture(scope="session")
def toy_config(fly_path):
    return ExtractionConfig(
        max_depth=5, time_levels=3, d_hat_1=40, d_hat_2=8, contraction=1.0, delta_t=0.5, **TOY_ROOT
    ).resolved(fly_path)


@pytest.fixture(scope="session")
def toy_extraction(sphere, fly_path, toy_config):
    """Sphere flythrough with temporal splits: the shared 4D fixture."""
    return extract(sphere, fly_path, toy_config)

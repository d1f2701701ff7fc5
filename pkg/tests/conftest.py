import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lod2recon.geodata_io import GeoTransform
from lod2recon.rectangles import OrientedRect
from lod2recon.roofs import RoofParams
from lod2recon.synthetic import BuildingSpec, generate_scene

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

NORTH_UP = GeoTransform(0.5, 0.0, 0.0, -0.5, 300000.25, 4400000.75)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_spec():
    """Three buildings of different kinds on a 128x128 patch."""
    return [
        BuildingSpec(OrientedRect(34.0, 36.0, 40.0, 24.0, 0.0), "Gable",
                     RoofParams(110.0, 107.0), (200, 60, 60)),
        BuildingSpec(OrientedRect(90.0, 40.0, 36.0, 30.0, math.radians(30)), "Flat",
                     RoofParams(106.0, 106.0), (60, 160, 70)),
        BuildingSpec(OrientedRect(64.0, 96.0, 60.0, 26.0, math.radians(95)), "Hip",
                     RoofParams(111.5, 108.0, 6.0, 0.0), (70, 90, 200)),
    ]


@pytest.fixture
def small_scene(small_spec):
    return generate_scene(small_spec, (128, 128), gsd_m=0.5, noise_sigma_m=0.05, seed=3,
                          geo=NORTH_UP)


ACCEPTANCE = {}


def record_acceptance(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {title}: {detail}")

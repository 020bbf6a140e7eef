import numpy as np
import pytest

from v2xtwin.scene import scene_from_dict

F60 = 60e9


def make_scene(objects=(), materials=("metal", "concrete", "wood"), templates=None, frequency=F60):
    doc = {
        "carrier_frequency_hz": frequency,
        "materials": [m if isinstance(m, dict) else {"name": m} for m in materials],
        "objects": list(objects),
        "vehicle_templates": templates if templates is not None else [
            {"name": "car", "size": [4.5, 1.8, 1.5], "antenna_offset": [0.0, 0.0, 1.8]},
        ],
    }
    return scene_from_dict(doc)


def box(oid, center, size, material="concrete", yaw=0.0):
    return {"id": oid, "material": material, "mesh": {"box": {"center": list(center), "size": list(size), "yaw": yaw}}}


def ground(oid="ground", half=1000.0, material="metal", z=0.0):
    h = half
    return {"id": oid, "material": material, "mesh": {"tris": [
        [[-h, -h, z], [h, -h, z], [h, h, z]],
        [[-h, -h, z], [h, h, z], [-h, h, z]],
    ]}}


@pytest.fixture
def empty_scene():
    return make_scene()


@pytest.fixture
def ground_scene():
    return make_scene([ground()])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion, shown after the test session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

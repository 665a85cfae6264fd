import numpy as np
import pytest

from granulometer.delineation import DelineationNet, Particle, ScaleCalibration

# pass/fail lines recorded by the acceptance suite, echoed in the terminal summary
CRITERIA_LINES = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES):
            terminalreporter.write_line(line)


def make_net(minor_px, unresolved_fraction=0.0, region_area=None, weights=None):
    """A DelineationNet holding circular particles of the given minor axes (px)."""
    parts = []
    for i, d in enumerate(minor_px, start=1):
        w = 1.0 if weights is None else float(weights[i - 1])
        parts.append(Particle(i, max(9, int(round(np.pi * d * d / 4))), (0.0, 0.0), float(d), float(d), 0.0, w))
    area = region_area if region_area is not None else max(1, sum(p.area for p in parts))
    return DelineationNet(np.zeros((1, 1), dtype=np.int32), parts, float(unresolved_fraction), int(area))


@pytest.fixture
def unit_cal():
    return ScaleCalibration(1.0, "manual_trace", 1)

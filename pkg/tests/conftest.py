import numpy as np
import pytest

from walkerpose.pose import View, frame_from_arrays
from walkerpose.synth import TEMPLATES


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(name): acceptance criterion; prints a pass/fail line")
    config.addinivalue_line(
        "markers", "acceptance: acceptance-suite tests (train on the full synthetic dataset)")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and report.when == "call":
        name = marker.args[0]
        status = "PASS" if report.passed else "FAIL"
        print(f"\n[{status}] acceptance criterion: {name}")


def make_frame(coords=None, vis=None, ts=0, pid="p00", view=View.FULL_BODY, fsr=None):
    if coords is None:
        coords = TEMPLATES["standing"].coords
    if vis is None:
        vis = np.ones(33)
    return frame_from_arrays(np.asarray(coords, dtype=float), np.asarray(vis, dtype=float),
                             timestamp_ms=ts, participant_id=pid, view=view, fsr=fsr)


@pytest.fixture
def standing_frame():
    return make_frame(fsr=(0.7, 0.7))


def dyadic_random_coords(rng, scale_bits=12, span=4096):
    """Coordinates on a 2^-scale_bits grid: float sums/differences are exact."""
    k = rng.integers(-span, span, size=(33, 3))
    return k.astype(np.float64) / (1 << scale_bits)

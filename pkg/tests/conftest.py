import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from salmonkit.data import (
    EYE_TRACKING,
    POINT_CLICK,
    RECT_DRAW,
    Dataset,
    ImageRecord,
    SubjectRecord,
    ViewingGeometry,
    make_object_mask,
)

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def box_mask(shape, x0, y0, x1, y1):
    m = np.zeros(shape, dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_dataset():
    """One 40x60 image, two boxes, hand-made events in every modality."""
    h, w = 40, 60
    im = ImageRecord("img", w, h, None)
    masks = [make_object_mask("img_a", "img", box_mask((h, w), 5, 5, 15, 15)),
             make_object_mask("img_b", "img", box_mask((h, w), 35, 10, 55, 30))]
    recs = [
        SubjectRecord("e0", "img", EYE_TRACKING, [[10, 10, 2], [45, 20, 2]]),
        SubjectRecord("e1", "img", EYE_TRACKING, [[45, 20, 1]]),
        SubjectRecord("p0", "img", POINT_CLICK, [[10, 10], [12, 12]]),
        SubjectRecord("p1", "img", POINT_CLICK, [[40, 15]]),
        SubjectRecord("p2", "img", POINT_CLICK, []),
        SubjectRecord("r0", "img", RECT_DRAW, [[5, 5, 15, 15]]),
        SubjectRecord("r1", "img", RECT_DRAW, [[0, 0, 2, 2]]),
    ]
    return Dataset([im], masks, recs, ViewingGeometry(r_v=32.0))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from geometry import BallInclusion, PerforatedGeometry  # noqa: E402


@pytest.fixture
def centered_ball():
    """Unit window with one ball of radius 0.25 at its center."""
    def build(t=1.0, r=0.25, delta=0.1, r_star=0.5):
        return PerforatedGeometry(n=2, t=t, balls=(BallInclusion((t / 2, t / 2), r),), delta=delta, r_star=r_star)
    return build


@pytest.fixture
def empty_geometry():
    def build(t=1.0, delta=0.3, r_star=0.5, n=2):
        return PerforatedGeometry(n=n, t=t, balls=(), delta=delta, r_star=r_star)
    return build

from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import make_session  # noqa: E402


@pytest.fixture
def golden_session():
    """Fixed session used by every golden-file prompt test."""
    return make_session(
        "g1",
        ["Cameras", "Camera Batteries", "Camera Lenses", "Tripods"],
        [[1, 2], [3, 4]],
        intents=["extend shooting time", "stable long exposures"],
    )

import numpy as np
import pytest

from scnowcast.gridstore import CADENCE, DomainGrid, EventSeries, GriddedField

TOY_GRID = DomainGrid(cell_rows=3, cell_cols=3, pixels_per_cell_side=6, levels=2)


def random_series(grid, n_frames, seed=0, event_id="toy", scale=20.0, offset=10.0):
    rng = np.random.default_rng(seed)
    frames = []
    for t in range(n_frames):
        ts = t * CADENCE
        frames.append({v: GriddedField(v, ts, offset + scale * rng.standard_normal(grid.shape))
                       for v in ("W", "BYC", "R")})
    return EventSeries(grid, frames, event_id=event_id)


def constant_series(grid, n_frames, value=0.0, event_id="const"):
    frames = [{v: GriddedField(v, t * CADENCE, np.full(grid.shape, value)) for v in ("W", "BYC", "R")}
              for t in range(n_frames)]
    return EventSeries(grid, frames, event_id=event_id)


@pytest.fixture
def toy_grid():
    return TOY_GRID


@pytest.fixture
def toy_series():
    return random_series(TOY_GRID, 5, seed=3)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])

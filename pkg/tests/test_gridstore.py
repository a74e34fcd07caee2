import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from scnowcast.gridstore import (
    SGF_HEADER,
    DomainGrid,
    EventSeries,
    FieldFormatError,
    GriddedField,
    SynthParams,
    event_seeds,
    label_fraction,
    read_event,
    read_field,
    synth_event,
    write_event,
    write_field,
)

from conftest import TOY_GRID, random_series


def test_default_grid_dimensions():
    g = DomainGrid()
    assert (g.pixel_rows, g.pixel_cols) == (186, 234)
    assert g.levels == 20
    assert g.n_cells == 1209


@pytest.mark.parametrize("kw", [{"cell_rows": 0}, {"levels": 0}, {"pixels_per_cell_side": -1}])
def test_grid_rejects_nonpositive(kw):
    with pytest.raises(ValueError):
        DomainGrid(**kw)


def test_field_rejects_bad_inputs():
    with pytest.raises(ValueError):
        GriddedField("Q", 0, np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        GriddedField("R", 0, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        GriddedField("R", 0, np.array([[[np.inf]]]))


finite32 = st.floats(width=32, allow_nan=False, allow_infinity=False)


@settings(max_examples=40, deadline=None)
@given(values=hnp.arrays(np.float32, hnp.array_shapes(min_dims=3, max_dims=3, max_side=6), elements=finite32),
       ts=st.integers(0, 2**40), var=st.sampled_from(["W", "BYC", "R"]))
def test_sgf_round_trip_bit_exact(tmp_path_factory, values, ts, var):
    path = tmp_path_factory.mktemp("sgf") / "f.sgf"
    f = GriddedField(var, ts, values)
    write_field(f, path)
    back = read_field(path)
    assert back == f
    assert back.values.tobytes() == f.values.tobytes()


def test_sgf_file_size_default_grid(tmp_path):
    f = GriddedField("R", 900, np.zeros(DomainGrid().shape))
    write_field(f, tmp_path / "R.sgf")
    assert (tmp_path / "R.sgf").stat().st_size == 32 + 20 * 186 * 234 * 4
    assert SGF_HEADER.size == 32


def test_nan_rejected_before_writing(tmp_path):
    f = GriddedField("R", 0, np.zeros((1, 2, 2)))
    f.values[0, 1, 1] = np.nan
    with pytest.raises(ValueError):
        write_field(f, tmp_path / "bad.sgf")
    assert not (tmp_path / "bad.sgf").exists()


def _written(tmp_path):
    path = tmp_path / "f.sgf"
    write_field(GriddedField("W", 5, np.arange(12, dtype=np.float32).reshape(1, 3, 4)), path)
    return path


def test_bad_magic(tmp_path):
    path = _written(tmp_path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(FieldFormatError, match="magic"):
        read_field(path)


def test_truncated_payload(tmp_path):
    path = _written(tmp_path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(FieldFormatError, match="truncated"):
        read_field(path)


def test_dims_inconsistent_with_payload(tmp_path):
    path = _written(tmp_path)
    path.write_bytes(path.read_bytes() + b"\0\0\0\0")
    with pytest.raises(FieldFormatError):
        read_field(path)


def test_nan_in_file_rejected(tmp_path):
    path = _written(tmp_path)
    raw = bytearray(path.read_bytes())
    raw[32:36] = struct.pack("<f", float("nan"))
    path.write_bytes(bytes(raw))
    with pytest.raises(FieldFormatError, match="non-finite"):
        read_field(path)


def test_series_cadence_and_variables():
    s = random_series(TOY_GRID, 3)
    frames = list(s.frames)
    bad = dict(frames[2])
    bad["R"] = GriddedField("R", 5000, bad["R"].values)
    with pytest.raises(ValueError):
        EventSeries(TOY_GRID, frames[:2] + [bad])
    missing = {k: v for k, v in frames[0].items() if k != "W"}
    with pytest.raises(ValueError):
        EventSeries(TOY_GRID, [missing])


def test_event_round_trip(tmp_path):
    s = random_series(TOY_GRID, 4, event_id="ev")
    paths = write_event(s, tmp_path / "ev")
    assert len(paths) == 4 * 3 + 1
    back = read_event(tmp_path / "ev")
    assert back.grid == s.grid and back.timestamps == s.timestamps
    for a, b in zip(s.frames, back.frames):
        assert all(a[v] == b[v] for v in a)


SMALL = DomainGrid(cell_rows=8, cell_cols=9, levels=4)


def test_synth_deterministic():
    p = SynthParams(n_frames=5, seed=11)
    a, b = synth_event(SMALL, p), synth_event(SMALL, p)
    for fa, fb in zip(a.frames, b.frames):
        assert all(fa[v] == fb[v] for v in fa)


def test_synth_no_storms_all_background():
    s = synth_event(SMALL, SynthParams(n_frames=5, n_storms=(0, 0), seed=2))
    assert label_fraction(s) == 0.0
    assert max(fr["R"].values.max() for fr in s.frames) < 35.0


def test_synth_params_validation():
    with pytest.raises(ValueError):
        SynthParams(target_positive_fraction=0.6)
    with pytest.raises(ValueError):
        SynthParams(peak_dbz=(50.0, 40.0))


def test_default_base_rate_in_band():
    s = synth_event(DomainGrid(), SynthParams(seed=1))
    assert 0.03 <= label_fraction(s) <= 0.07


def test_event_seeds_distinct_and_stable():
    a = event_seeds(5, 7)
    assert a == event_seeds(5, 7)
    assert len(set(a)) == 7

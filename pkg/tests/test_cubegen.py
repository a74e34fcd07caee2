import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scnowcast.cubegen import (
    CHANNELS,
    CubeArray,
    CubeBank,
    EventHoldout,
    KFold,
    NormStats,
    apply_norm,
    build_samples,
    eligible_times,
    extract_window,
    fit_norm,
    label_cell,
    read_samples_manifest,
    split,
    split_indices,
    temporal_diff,
    write_samples_manifest,
)
from scnowcast.gridstore import DomainGrid, GriddedField

from conftest import TOY_GRID, constant_series, random_series


def brute_window(values, r, c, p=6):
    """Pixel-by-pixel scan of the 3x3-cell neighbourhood with zero fill."""
    lv, nr, nc = values.shape
    out = np.zeros((lv, 3 * p, 3 * p), dtype=values.dtype)
    for i in range(3 * p):
        for j in range(3 * p):
            gi, gj = (r - 1) * p + i, (c - 1) * p + j
            if 0 <= gi < nr and 0 <= gj < nc:
                out[:, i, j] = values[:, gi, gj]
    return out


def brute_label(values, r, c, p=6):
    for lv in range(values.shape[0]):
        for i in range(r * p, (r + 1) * p):
            for j in range(c * p, (c + 1) * p):
                if values[lv, i, j] > 35.0:
                    return 1
    return 0


def test_channel_order():
    assert CHANNELS == ("w", "dw", "byc", "dbyc", "R", "dR")


def test_temporal_diff_examples():
    a = GriddedField("W", 900, np.full((2, 6, 6), 5.0))
    b = GriddedField("W", 0, np.full((2, 6, 6), 3.0))
    assert np.all(temporal_diff(a, b).values == 2.0)
    same = GriddedField("W", 0, np.full((2, 6, 6), 5.0))
    assert np.all(temporal_diff(a, same).values == 0.0)
    with pytest.raises(ValueError):
        temporal_diff(a, GriddedField("R", 0, np.zeros((2, 6, 6))))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_temporal_diff_antisymmetric(seed):
    rng = np.random.default_rng(seed)
    a = GriddedField("R", 900, rng.standard_normal((2, 6, 6)))
    b = GriddedField("R", 900, rng.standard_normal((2, 6, 6)))
    a1 = GriddedField("R", 1800, a.values)
    assert np.array_equal(temporal_diff(a1, b).values, -temporal_diff(
        GriddedField("R", 1800, b.values), GriddedField("R", 900, a.values)).values)


def test_window_interior_constant():
    f = GriddedField("R", 0, np.full(DomainGrid().shape, 7.0))
    w = extract_window(f, (10, 10))
    assert w.shape == (20, 18, 18) and np.all(w == 7.0)


def test_window_corner_zero_fill():
    f = GriddedField("R", 0, np.full(DomainGrid().shape, 7.0))
    w = extract_window(f, (0, 0))
    assert np.all(w[:, :6, :] == 0) and np.all(w[:, :, :6] == 0)
    assert np.all(w[:, 6:, 6:] == 7.0)


def test_window_matches_brute_force_on_toy_grid():
    rng = np.random.default_rng(0)
    vals = rng.standard_normal(TOY_GRID.shape).astype(np.float32)
    f = GriddedField("W", 0, vals)
    for r in range(3):
        for c in range(3):
            w = extract_window(f, (r, c))
            assert np.array_equal(w, brute_window(vals, r, c))
            for lv in range(TOY_GRID.levels):
                assert w[lv, 9, 9] == vals[lv, r * 6 + 3, c * 6 + 3]


@settings(max_examples=30, deadline=None)
@given(r=st.integers(1, 3), c=st.integers(1, 4), seed=st.integers(0, 1000))
def test_window_translation_consistency(r, c, seed):
    """Moving one cell right shifts the window content by six pixels."""
    g = DomainGrid(cell_rows=5, cell_cols=6, levels=1)
    vals = np.random.default_rng(seed).standard_normal(g.shape).astype(np.float32)
    f = GriddedField("R", 0, vals)
    a, b = extract_window(f, (r, c)), extract_window(f, (r, c + 1))
    assert np.array_equal(a[:, :, 6:], b[:, :, :12])


def test_window_rejects_outside_cell():
    f = GriddedField("R", 0, np.zeros(TOY_GRID.shape))
    with pytest.raises(IndexError):
        extract_window(f, (3, 0))


def test_label_threshold_strict():
    vals = np.full(TOY_GRID.shape, 35.0)
    assert label_cell(GriddedField("R", 0, vals), (1, 1)) == 0
    vals = np.full(TOY_GRID.shape, -10.0)
    vals[1, 8, 8] = 35.1
    f = GriddedField("R", 0, vals)
    assert label_cell(f, (1, 1)) == 1
    assert label_cell(f, (0, 0)) == 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), bump=st.floats(0, 50))
def test_label_monotone(seed, bump):
    rng = np.random.default_rng(seed)
    vals = rng.uniform(20, 40, TOY_GRID.shape)
    before = label_cell(GriddedField("R", 0, vals), (1, 2))
    idx = tuple(rng.integers(0, n) for n in TOY_GRID.shape)
    vals[idx] += bump
    assert label_cell(GriddedField("R", 0, vals), (1, 2)) >= before


def test_samples_match_brute_force_on_toy_grid():
    s = random_series(TOY_GRID, 5, seed=4, scale=15.0, offset=0.0)
    samples = build_samples(s)
    times = eligible_times(s)
    assert times == [1, 2]
    assert len(samples) == len(times) * 9
    k = 0
    for t in times:
        fr, prev, fut = s.frames[t], s.frames[t - 1], s.frames[t + 2]
        for r in range(3):
            for c in range(3):
                cube = samples[k]
                assert cube.cell == (r, c) and cube.issue_time == fr["R"].timestamp
                for ch, var in ((0, "W"), (2, "BYC"), (4, "R")):
                    cur = brute_window(fr[var].values, r, c)
                    assert np.array_equal(cube.data[ch], cur)
                    d = brute_window(fr[var].values - prev[var].values, r, c)
                    assert np.array_equal(cube.data[ch + 1], d)
                assert cube.label == brute_label(fut["R"].values, r, c)
                k += 1
    assert {c.label for c in samples} == {0, 1}


def test_sample_count_default_grid_six_frames():
    s = constant_series(DomainGrid(), 6)
    bank = CubeBank([s])
    assert len(bank) == 3627
    assert sorted(set(bank.time_idx.tolist())) == [1, 2, 3]


def test_all_zero_series():
    bank = CubeBank([constant_series(TOY_GRID, 4)])
    assert not bank.labels.any()
    assert not bank.batch(np.arange(len(bank))).any()


def test_bank_requires_four_frames():
    with pytest.raises(ValueError):
        CubeBank([constant_series(TOY_GRID, 3)])
    with pytest.raises(ValueError):
        build_samples(constant_series(TOY_GRID, 3))


def test_dw_channel_is_window_of_diff(toy_series):
    bank = CubeBank([toy_series])
    i = 13
    cube = bank.cube(i)
    t = int(bank.time_idx[i])
    diff = temporal_diff(toy_series.frames[t]["W"], toy_series.frames[t - 1]["W"])
    assert np.array_equal(cube.data[1], extract_window(diff, cube.cell))


def test_manifest_round_trip(tmp_path, toy_series):
    bank = CubeBank([toy_series])
    write_samples_manifest(bank, tmp_path / "m.csv")
    rows = read_samples_manifest(tmp_path / "m.csv")
    assert len(rows) == len(bank)
    assert rows[0] == ("toy", 900, 0, 0, int(bank.labels[0]))


def test_norm_standardises(toy_series):
    bank = CubeBank([toy_series])
    stats = fit_norm(bank)
    x = stats.apply(bank.batch(np.arange(len(bank)))).astype(np.float64)
    assert np.all(np.abs(x.mean(axis=(0, 2, 3, 4))) < 1e-4)
    assert np.all(np.abs(x.std(axis=(0, 2, 3, 4)) - 1) < 1e-3)
    samples = build_samples(toy_series)
    assert np.allclose(fit_norm(samples).mean, stats.mean)


def test_norm_constant_channel_guard():
    data = np.random.default_rng(0).standard_normal((4, 6, 2, 18, 18)).astype(np.float32)
    data[:, 3] = 2.5
    arr = CubeArray(data, [0, 1, 0, 1])
    stats = fit_norm(arr)
    assert stats.degenerate[3] and not stats.degenerate[0]
    out = apply_norm(arr, stats)
    assert np.all(out.data[:, 3] == 0)


def test_norm_twice_differs_unless_identity(toy_series):
    x = CubeBank([toy_series]).batch(np.arange(5))
    stats = NormStats(np.full(6, 3.0), np.full(6, 2.0))
    assert not np.allclose(stats.apply(stats.apply(x)), stats.apply(x))
    ident = NormStats.identity()
    assert np.array_equal(ident.apply(ident.apply(x)), x)


def test_kfold_sizes_3627():
    folds = split_indices(3627, KFold(5, seed=0))
    assert sorted(len(te) for _, te in folds) == [725, 725, 725, 726, 726]
    tests = np.concatenate([te for _, te in folds])
    assert np.array_equal(np.sort(tests), np.arange(3627))
    for tr, te in folds:
        assert len(np.intersect1d(tr, te)) == 0 and len(tr) + len(te) == 3627


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 500), k=st.integers(2, 10), seed=st.integers(0, 100))
def test_kfold_partition_property(n, k, seed):
    if n < k:
        with pytest.raises(ValueError):
            split_indices(n, KFold(k, seed))
        return
    folds = split_indices(n, KFold(k, seed))
    sizes = [len(te) for _, te in folds]
    assert max(sizes) - min(sizes) <= 1
    assert np.array_equal(np.sort(np.concatenate([te for _, te in folds])), np.arange(n))


def test_event_holdout():
    names = list("ABCDEFG")
    series = [random_series(TOY_GRID, 4, seed=i, event_id=e) for i, e in enumerate(names)]
    bank = CubeBank(series)
    ((tr, te),) = split(bank, EventHoldout(tuple("ABCDE"), ("F", "G")))
    assert set(te.event_ids) == {"F", "G"}
    assert set(tr.event_ids) == set("ABCDE")
    with pytest.raises(ValueError):
        EventHoldout(("A", "B"), ("B",))
    with pytest.raises(ValueError):
        split(bank, EventHoldout(("A",), ("Z",)))


def test_split_lists_and_banks_agree(toy_series):
    samples = build_samples(toy_series)
    bank = CubeBank([toy_series])
    for (ltr, lte), (btr, bte) in zip(split(samples, KFold(3, 1)), split(bank, KFold(3, 1))):
        assert [s.label for s in lte] == bte.labels.tolist()
        assert len(ltr) == len(btr)

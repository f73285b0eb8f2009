import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slipnet.events import Event, EventStream, MalformedHeader, Trial
from slipnet.preprocess import (
    GRID_SIZE,
    SAMPLES_PER_PHASE,
    VOLUME_SHAPE,
    WINDOW_US,
    DatasetManifest,
    MissingOnsets,
    SlipState,
    SpikeVolume,
    TooFewTrials,
    WrongResolution,
    bin_window,
    crop_and_filter,
    extract_samples,
    load_volume,
    pool_events,
    read_dataset_manifest,
    save_volume,
    split_sizes,
    split_trials,
    tile_windows,
    write_dataset_manifest,
)


def raw_stream(rows):
    return EventStream.from_events([Event(*r) for r in rows], 640, 480)


def grid_stream(rows):
    return EventStream.from_events([Event(*r) for r in rows], GRID_SIZE, GRID_SIZE)


class TestCropAndFilter:
    def test_center_pixel_rebases(self):
        out = crop_and_filter(raw_stream([(0, 320, 240, 1)]))
        assert out.sensor_width == 400 and out.sensor_height == 400
        assert (out.x[0], out.y[0]) == (200, 200)

    def test_left_of_crop_dropped(self):
        assert len(crop_and_filter(raw_stream([(0, 119, 240, 1)]))) == 0

    def test_negative_polarity_dropped(self):
        assert len(crop_and_filter(raw_stream([(0, 320, 240, -1)]))) == 0

    def test_crop_edges(self):
        out = crop_and_filter(
            raw_stream([(0, 120, 40, 1), (1, 519, 439, 1), (2, 520, 240, 1), (3, 320, 440, 1)])
        )
        assert len(out) == 2
        assert (out.x[0], out.y[0]) == (0, 0)
        assert (out.x[1], out.y[1]) == (399, 399)

    def test_wrong_resolution(self):
        with pytest.raises(WrongResolution):
            crop_and_filter(EventStream.empty(400, 400))

    def test_order_and_times_preserved(self):
        out = crop_and_filter(raw_stream([(5, 200, 200, 1), (9, 210, 220, 1)]))
        assert list(out.t_us) == [5, 9]


class TestPoolEvents:
    def cropped(self, rows):
        return EventStream.from_events([Event(*r) for r in rows], 400, 400)

    def test_cell_zero(self):
        out = pool_events(self.cropped([(0, 0, 0, 1), (1, 19, 19, 1)]))
        assert out.sensor_width == GRID_SIZE and out.sensor_height == GRID_SIZE
        assert list(zip(out.x, out.y)) == [(0, 0), (0, 0)]

    def test_last_cell(self):
        out = pool_events(self.cropped([(0, 399, 399, 1)]))
        assert (out.x[0], out.y[0]) == (19, 19)

    def test_cell_boundary(self):
        out = pool_events(self.cropped([(0, 20, 0, 1), (1, 39, 199, 1)]))
        assert list(zip(out.x, out.y)) == [(1, 0), (1, 9)]

    def test_wrong_resolution(self):
        with pytest.raises(WrongResolution):
            pool_events(EventStream.empty(640, 480))


class TestBinWindow:
    def test_three_events_one_cell(self):
        t0 = 1_000_000
        s = grid_stream([(t0 + 500, 5, 7, 1)] * 3)
        vol = bin_window(s, t0)
        assert vol.counts.shape == VOLUME_SHAPE
        assert vol.counts[0, 0, 7, 5] == 3
        assert vol.counts.sum() == 3

    def test_window_end_excluded(self):
        t0 = 0
        s = grid_stream([(29_999, 1, 1, 1), (30_000, 1, 1, 1)])
        vol = bin_window(s, t0)
        assert vol.counts.sum() == 1
        assert vol.counts[29, 0, 1, 1] == 1

    def test_events_before_start_excluded(self):
        s = grid_stream([(999, 0, 0, 1), (1_000, 0, 0, 1)])
        vol = bin_window(s, 1_000)
        assert vol.counts.sum() == 1
        assert vol.counts[0, 0, 0, 0] == 1

    def test_bin_boundaries(self):
        s = grid_stream([(0, 0, 0, 1), (999, 0, 0, 1), (1_000, 0, 0, 1)])
        vol = bin_window(s, 0)
        assert vol.counts[0, 0, 0, 0] == 2
        assert vol.counts[1, 0, 0, 0] == 1

    def test_wrong_resolution(self):
        with pytest.raises(WrongResolution):
            bin_window(EventStream.empty(400, 400), 0)


class TestTileWindows:
    def test_matches_per_slot_binning(self):
        rng = np.random.default_rng(7)
        n = 500
        t = np.sort(rng.integers(0, 150_000, n))
        s = EventStream(GRID_SIZE, GRID_SIZE, t,
                        rng.integers(0, 20, n).astype(np.int32),
                        rng.integers(0, 20, n).astype(np.int32),
                        np.ones(n, np.int8))
        tiled = tile_windows(s)
        assert tiled.shape[0] == int(t[-1]) // WINDOW_US + 1
        for k in range(tiled.shape[0]):
            assert np.array_equal(tiled[k], bin_window(s, k * WINDOW_US).counts)

    def test_empty_stream(self):
        assert tile_windows(EventStream.empty(GRID_SIZE, GRID_SIZE)).shape[0] == 0


class TestExtractSamples:
    def phase_stream(self, incipient_us, gross_us, end_us):
        # one event per ms, plus a final event so the stream spans end_us
        t = np.append(np.arange(0, end_us - 1, 1_000, dtype=np.int64), end_us - 1)
        n = len(t)
        return EventStream(GRID_SIZE, GRID_SIZE, t,
                           np.full(n, 3, np.int32), np.full(n, 4, np.int32),
                           np.ones(n, np.int8))

    def test_600ms_phase_gives_20_windows(self):
        s = self.phase_stream(600_000, 630_000, 660_000)
        samples = extract_samples(s, 600_000, 630_000, seed=0)
        noslip = [x for x in samples if x.label == SlipState.NO_SLIP]
        assert len(noslip) == 20

    def test_900ms_phase_gives_30_windows(self):
        s = self.phase_stream(900_000, 930_000, 960_000)
        noslip = [x for x in extract_samples(s, 900_000, 930_000, seed=0)
                  if x.label == SlipState.NO_SLIP]
        assert len(noslip) == 30

    def test_long_phase_capped_at_50_disjoint(self):
        s = self.phase_stream(3_000_000, 3_030_000, 3_060_000)
        noslip = [x for x in extract_samples(s, 3_000_000, 3_030_000, seed=1)
                  if x.label == SlipState.NO_SLIP]
        assert len(noslip) == SAMPLES_PER_PHASE
        starts = [x.t_start_us for x in noslip]
        assert starts == sorted(starts)
        assert len(set(starts)) == 50
        for t0 in starts:
            assert t0 % WINDOW_US == 0 and 0 <= t0 < 3_000_000
        # different seeds pick different subsets
        other = [x.t_start_us for x in extract_samples(s, 3_000_000, 3_030_000, seed=2)
                 if x.label == SlipState.NO_SLIP]
        assert other != starts

    def test_noslip_tiles_backward_from_onset(self):
        s = self.phase_stream(45_000, 75_000, 105_000)
        noslip = [x for x in extract_samples(s, 45_000, 75_000, seed=0)
                  if x.label == SlipState.NO_SLIP]
        assert [x.t_start_us for x in noslip] == [15_000]

    def test_phase_labels_and_alignment(self):
        s = self.phase_stream(60_000, 120_000, 210_000)
        samples = extract_samples(s, 60_000, 120_000, seed=0)
        by_label = {}
        for x in samples:
            by_label.setdefault(x.label, []).append(x.t_start_us)
        assert by_label[SlipState.NO_SLIP] == [0, 30_000]
        assert by_label[SlipState.INCIPIENT] == [60_000, 90_000]
        assert by_label[SlipState.GROSS] == [120_000, 150_000, 180_000]

    def test_missing_onsets(self):
        s = self.phase_stream(60_000, 120_000, 210_000)
        with pytest.raises(MissingOnsets):
            extract_samples(s, None, 120_000, seed=0)
        with pytest.raises(MissingOnsets):
            extract_samples(s, 60_000, None, seed=0)

    def test_volumes_match_bin_window(self):
        s = self.phase_stream(60_000, 120_000, 210_000)
        for sample in extract_samples(s, 60_000, 120_000, seed=0):
            assert sample.volume == bin_window(s, sample.t_start_us)


def tiny_trial(i):
    # events shift with i so trials are distinguishable after binning
    dx = (i * 20) % 200
    s = raw_stream([(0, 200 + dx, 240, 1), (45_000, 210 + dx, 250, 1), (89_999, 220 + dx, 260, 1)])
    return Trial(s, incipient_onset_us=30_000, gross_onset_us=60_000, scenario={"i": i})


class TestSplitTrials:
    def test_split_sizes_frozen(self):
        assert split_sizes(864) == (604, 129, 131)

    def test_split_sizes_sum(self):
        for n in (10, 11, 99, 100, 864):
            assert sum(split_sizes(n)) == n

    def test_864_trials_split_by_trial(self):
        trials = [tiny_trial(i) for i in range(864)]
        split = split_trials(trials, seed=42)
        # every tiny trial yields exactly 3 samples (one slot per phase)
        assert len(split.train) == 604 * 3
        assert len(split.val) == 129 * 3
        assert len(split.test) == 131 * 3

    def test_same_seed_same_split(self):
        trials = [tiny_trial(i) for i in range(20)]
        a = split_trials(trials, seed=9)
        b = split_trials(trials, seed=9)
        for sa, sb in zip(a.train + a.val + a.test, b.train + b.val + b.test):
            assert sa.label == sb.label
            assert sa.t_start_us == sb.t_start_us
            assert sa.volume == sb.volume

    def test_different_seed_different_assignment(self):
        trials = [tiny_trial(i) for i in range(30)]
        a = split_trials(trials, seed=1)
        b = split_trials(trials, seed=2)
        assert any(
            sa.t_start_us != sb.t_start_us or not np.array_equal(sa.volume.counts, sb.volume.counts)
            for sa, sb in zip(a.train, b.train)
        ) or len(a.train) != len(b.train)

    def test_too_few_trials(self):
        trials = [tiny_trial(i) for i in range(3)]
        with pytest.raises(TooFewTrials):
            split_trials(trials, seed=0)
        split = split_trials(trials, seed=0, allow_small=True)
        assert len(split.train) + len(split.val) + len(split.test) == 9

    def test_labels_per_phase(self):
        trials = [tiny_trial(i) for i in range(12)]
        split = split_trials(trials, seed=3)
        labels = [s.label for s in split.train]
        assert set(labels) == {SlipState.NO_SLIP, SlipState.INCIPIENT, SlipState.GROSS}


class TestVolumeFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        vol = SpikeVolume(rng.integers(0, 9, VOLUME_SHAPE).astype(np.uint16))
        p = tmp_path / "v.spkv"
        save_volume(vol, p)
        assert p.stat().st_size == 14 + 2 * int(np.prod(VOLUME_SHAPE))
        assert load_volume(p) == vol

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "v.spkv"
        save_volume(SpikeVolume(np.zeros(VOLUME_SHAPE, np.uint16)), p)
        raw = bytearray(p.read_bytes())
        raw[:4] = b"NOPE"
        p.write_bytes(raw)
        with pytest.raises(MalformedHeader):
            load_volume(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "v.spkv"
        save_volume(SpikeVolume(np.zeros(VOLUME_SHAPE, np.uint16)), p)
        p.write_bytes(p.read_bytes()[:-2])
        with pytest.raises(MalformedHeader):
            load_volume(p)

    def test_wrong_shape_rejected_in_memory(self):
        with pytest.raises(WrongResolution):
            SpikeVolume(np.zeros((30, 1, 19, 20), np.uint16))


class TestManifest:
    def test_roundtrip(self, tmp_path):
        m = DatasetManifest(seed=77, rows=[(0, "train", "a/b.ntev"), (1, "test", "c.ntev")])
        p = tmp_path / "manifest.txt"
        write_dataset_manifest(m, p)
        back = read_dataset_manifest(p)
        assert back.seed == 77
        assert back.ratios == m.ratios
        assert back.samples_per_phase == m.samples_per_phase
        assert back.labels_source == "trial_onsets"
        assert back.rows == m.rows

    def test_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "other.txt"
        p.write_text("hello\n")
        with pytest.raises(MalformedHeader):
            read_dataset_manifest(p)

    def test_rejects_unknown_split(self, tmp_path):
        p = tmp_path / "manifest.txt"
        p.write_text("# slipnet dataset manifest v1\nseed=1\ntrial\t0\tfoo\tx.ntev\n")
        with pytest.raises(MalformedHeader):
            read_dataset_manifest(p)


@st.composite
def pooled_streams(draw):
    n = draw(st.integers(0, 300))
    deltas = draw(st.lists(st.integers(0, 2_000), min_size=n, max_size=n))
    t = np.cumsum(np.array(deltas, np.int64)) if n else np.empty(0, np.int64)
    xs = draw(st.lists(st.integers(0, GRID_SIZE - 1), min_size=n, max_size=n))
    ys = draw(st.lists(st.integers(0, GRID_SIZE - 1), min_size=n, max_size=n))
    return EventStream(GRID_SIZE, GRID_SIZE, t, np.array(xs, np.int32),
                       np.array(ys, np.int32), np.ones(n, np.int8))


@settings(max_examples=50, deadline=None)
@given(stream=pooled_streams(), t0=st.integers(0, 100_000))
def test_bin_window_conserves_events(stream, t0):
    vol = bin_window(stream, t0)
    # independent count: scan events one by one
    expected = sum(1 for e in stream if t0 <= e.t_us < t0 + WINDOW_US)
    assert int(vol.counts.sum()) == expected
    for e in stream:
        if t0 <= e.t_us < t0 + WINDOW_US:
            step = (e.t_us - t0) // 1_000
            assert vol.counts[step, 0, e.y, e.x] >= 1


@settings(max_examples=30, deadline=None)
@given(stream=pooled_streams())
def test_tile_windows_conserves_events(stream):
    tiled = tile_windows(stream)
    assert int(tiled.sum()) == len(stream)

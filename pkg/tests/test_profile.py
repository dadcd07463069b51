import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import spearmanr

from wigait.channel import SceneConfig, Trajectories, WalkerParams, WalkSegment, scatterer_trajectories, synthesize_csi
from wigait.dsp import clean_amplitudes, principal_components
from wigait.errors import AlignmentError, DegenerateInputError, LengthError
from wigait.pipeline import PreprocessConfig, detection_series, idle_threshold
from wigait.profile import (BLOCK, N_BINS, PROFILE_ROWS, STFT_EPS, WalkingProfile, build_profile,
                            detect_walking, energy_of_interest, n_chunks, opposite_direction,
                            reverse_features, reverse_profile, segment_windows, split_windows,
                            standardize, standardize_features, stft_spectrogram, time_delta,
                            window_offsets)


def tone(freq, n=4000, fs=1000.0):
    return np.sin(2 * np.pi * freq * np.arange(n) / fs)


def random_profile(seed=0, T=24):
    """Profile with a genuine delta block (zero first column)."""
    rng = np.random.default_rng(seed)
    low = rng.standard_normal((3, N_BINS, T))
    high = rng.standard_normal((3, N_BINS, T))
    return build_profile(low, high, subject_label=3, direction_label=1)


class TestEnergyOfInterest:
    def test_in_band_tone(self):
        assert np.all(energy_of_interest(tone(40.0)) >= 0.95)

    def test_out_of_band_tone(self):
        assert np.all(energy_of_interest(tone(5.0)) <= 0.05)

    def test_zero_signal(self):
        npt.assert_array_equal(energy_of_interest(np.zeros(1000)), 0.0)

    def test_matches_single_frame_oracle(self):
        x = np.random.default_rng(0).standard_normal(256)
        frame = (x - x.mean()) * np.hanning(256)
        p = np.abs(np.fft.fft(frame)[:129]) ** 2
        f = np.arange(129) * 1000 / 256
        want = p[(f >= 20) & (f <= 60)].sum() / p.sum()
        assert energy_of_interest(x)[0] == pytest.approx(want, rel=1e-12)

    def test_frame_count(self):
        assert energy_of_interest(np.ones(1000)).shape == ((1000 - 256) // 64 + 1,)

    def test_short(self):
        with pytest.raises(LengthError):
            energy_of_interest(np.ones(255))


class TestDetectWalking:
    def test_idle_gives_nothing(self):
        assert detect_walking(np.full(200, 0.1), 0.2) == []

    def test_strict_threshold(self):
        assert detect_walking(np.full(100, 0.5), 0.5) == []
        assert detect_walking(np.full(100, 0.5 + 1e-12), 0.5) != []

    def test_short_gaps_merge_and_short_runs_drop(self):
        ei = np.zeros(100)
        ei[10:30] = 1.0  # 1.28 s
        ei[33:50] = 1.0  # gap of 3 frames = 0.192 s
        ei[70:75] = 1.0  # 0.32 s, too short
        (start, end), = detect_walking(ei, 0.5)
        assert start == pytest.approx(10 * 0.064)
        assert end == pytest.approx(50 * 0.064)

    def test_long_gap_splits(self):
        ei = np.zeros(100)
        ei[0:20] = 1.0
        ei[30:50] = 1.0
        assert len(detect_walking(ei, 0.5)) == 2

    def test_simulated_walk_is_found(self):
        fs = 1000.0
        scene = SceneConfig(rng_seed=5)
        walker = WalkerParams(0)
        pre = PreprocessConfig()
        walk = scatterer_trajectories(walker, WalkSegment((3.0, 7.0), (3.0, 2.0), 6, 5.0), fs, t0=2.0)
        walk = Trajectories(walk.times[:-1], walk.positions[:, :-1], walk.velocities[:, :-1], walk.reflectivity)
        traj = Trajectories.concatenate([
            Trajectories.stationary(walker, (3.0, 7.0), 2000, fs),
            walk,
            Trajectories.stationary(walker, (3.0, 2.0), 2000, fs, t0=7.0),
        ])
        low, _ = synthesize_csi(scene, traj)
        threshold = idle_threshold(scene, walker, pre)
        found = detect_walking(energy_of_interest(detection_series(low, pre)), threshold)
        assert len(found) == 1
        s, e = found[0]
        overlap = max(0.0, min(e, 7.0) - max(s, 2.0))
        assert overlap / 5.0 >= 0.9


class TestSpectrogram:
    def test_tone_localized(self):
        spec = stft_spectrogram(tone(40.0))
        peak = spec.bin_frequencies[np.argmax(spec.bins, axis=0)]
        assert np.all(np.abs(peak - 40.0) <= 1000 / 1024)

    def test_zero_signal(self):
        spec = stft_spectrogram(np.zeros(4000))
        npt.assert_array_equal(spec.bins, np.log10(STFT_EPS))

    def test_geometry(self):
        spec = stft_spectrogram(np.random.default_rng(0).standard_normal(4000))
        assert spec.bins.shape == (64, 24)
        assert n_chunks(4000) == 24
        assert spec.bin_frequencies[0] == pytest.approx(10.74, abs=0.01)
        assert spec.bin_frequencies[-1] == pytest.approx(72.27, abs=0.01)
        assert np.all(np.diff(spec.bin_frequencies) > 0)

    def test_matches_direct_chunk(self):
        x = np.random.default_rng(1).standard_normal(2000)
        spec = stft_spectrogram(x)
        t = 5
        seg = x[t * 128:t * 128 + 1024]
        w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(1024) / 1024)
        X = np.fft.fft(seg * w)[11:75]
        npt.assert_allclose(spec.bins[:, t], np.log10(np.abs(X) ** 2 + 1e-12), rtol=1e-10)

    def test_leading_axes(self):
        x = np.random.default_rng(2).standard_normal((2, 3, 1500))
        spec = stft_spectrogram(x)
        npt.assert_allclose(spec.bins[1, 2], stft_spectrogram(x[1, 2]).bins)

    def test_short(self):
        with pytest.raises(LengthError):
            stft_spectrogram(np.ones(1000))

    def test_approaching_walker_energy_rises(self):
        tr = scatterer_trajectories(WalkerParams(0), WalkSegment((3.0, 8.0), (3.0, 1.0), 6, 7.0), 1000.0)
        low, _ = synthesize_csi(SceneConfig(), tr)
        comps, _, _ = principal_components(clean_amplitudes(low.csi[0].astype(complex)), 1)
        energy = np.sum(10.0 ** stft_spectrogram(comps[0]).bins, axis=0)
        res = spearmanr(np.arange(len(energy)), energy)
        assert res.statistic > 0 and res.pvalue < 0.01


class TestBuildProfile:
    def test_layout_by_sentinels(self):
        T = 5
        low = np.stack([np.full((N_BINS, T), 10.0 + c) for c in range(3)])
        high = np.stack([np.full((N_BINS, T), 20.0 + c) for c in range(3)])
        low = low + np.arange(T)  # primary rows grow by 1 per chunk
        high = high + 2 * np.arange(T)
        f = build_profile(low, high).features
        assert f.shape == (PROFILE_ROWS, T)
        for c in range(3):
            rows = slice(c * N_BINS, (c + 1) * N_BINS)
            npt.assert_array_equal(f[rows, 0], 10.0 + c)
            npt.assert_array_equal(f[2 * BLOCK:][rows, 0], 20.0 + c)
        npt.assert_array_equal(f[BLOCK:2 * BLOCK, 1:], 1.0)
        npt.assert_array_equal(f[3 * BLOCK:, 1:], 2.0)
        npt.assert_array_equal(f[BLOCK:2 * BLOCK, 0], 0.0)
        npt.assert_array_equal(f[3 * BLOCK:, 0], 0.0)

    def test_constant_spectrograms_have_zero_delta(self):
        f = build_profile(np.ones((3, N_BINS, 7)), 2 * np.ones((3, N_BINS, 7))).features
        npt.assert_array_equal(f[BLOCK:2 * BLOCK], 0.0)
        npt.assert_array_equal(f[3 * BLOCK:], 0.0)

    def test_spectrogram_objects(self):
        x = np.random.default_rng(3).standard_normal((6, 4000))
        specs = [stft_spectrogram(s) for s in x]
        p = build_profile(specs[:3], specs[3:], 2, 5)
        assert p.features.shape == (768, 24)
        assert (p.subject_label, p.direction_label) == (2, 5)

    def test_chunk_mismatch(self):
        with pytest.raises(AlignmentError):
            build_profile(np.ones((3, N_BINS, 7)), np.ones((3, N_BINS, 8)))

    def test_time_delta(self):
        npt.assert_array_equal(time_delta(np.array([[1.0, 4.0, 2.0]])), [[0.0, 3.0, -2.0]])


class TestReversal:
    def test_involution(self):
        p = random_profile()
        q = reverse_profile(reverse_profile(p))
        npt.assert_array_equal(q.features, p.features)
        assert (q.subject_label, q.direction_label, q.reversed) == (p.subject_label, p.direction_label, p.reversed)

    def test_labels(self):
        p = random_profile()
        assert p.direction_label == 1
        r = reverse_profile(p)
        assert r.direction_label == 5
        assert r.subject_label == p.subject_label
        assert r.reversed
        npt.assert_array_equal(opposite_direction(np.arange(8)), [4, 5, 6, 7, 0, 1, 2, 3])

    def test_delta_recomputed_exactly(self):
        f = reverse_profile(random_profile(1)).features
        for base in (0, 2 * BLOCK):
            prim = f[base:base + BLOCK]
            npt.assert_array_equal(f[base + BLOCK:base + 2 * BLOCK], time_delta(prim))

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (PROFILE_ROWS, 6), elements=st.floats(-1e6, 1e6)))
    def test_involution_on_arbitrary_matrices(self, f):
        npt.assert_array_equal(reverse_features(reverse_features(f)), f)

    def test_batched(self):
        a, b = random_profile(2).features, random_profile(3).features
        out = reverse_features(np.stack([a, b]))
        npt.assert_array_equal(out[1], reverse_features(b))


class TestStandardize:
    def test_moments(self):
        z = standardize(random_profile()).features
        assert abs(z.mean()) < 1e-6
        assert abs(z.std() - 1) < 1e-6

    def test_idempotent(self):
        z = standardize(random_profile()).features
        npt.assert_allclose(standardize_features(z), z, atol=1e-6)

    @pytest.mark.parametrize("a,b", [(2.5, -3.0), (0.01, 100.0), (7.0, 0.0)])
    def test_affine_invariant(self, a, b):
        f = random_profile(4).features
        npt.assert_allclose(standardize_features(a * f + b), standardize_features(f), atol=1e-9)

    def test_constant(self):
        with pytest.raises(DegenerateInputError):
            standardize(WalkingProfile(np.ones((768, 4)), 0, 0))

    def test_per_profile_in_batch(self):
        f = np.stack([random_profile(5).features, 10 * random_profile(6).features + 3])
        z = standardize_features(f)
        npt.assert_allclose(z[1], standardize_features(f[1]))


class TestWindows:
    def test_offsets(self):
        assert window_offsets(5000) == [0, 500, 1000]
        assert window_offsets(3900) == []
        assert len(window_offsets(10626)) == 14

    def test_segment(self):
        windows, skipped = segment_windows(20000, [(100, 5100, {"trip": 0}), (6000, 9900, {"trip": 1})])
        assert [w.start for w in windows] == [100, 600, 1100]
        assert all(w.length == 4000 and w.labels["trip"] == 0 for w in windows)
        assert skipped == [(6000, 9900, {"trip": 1})]

    def test_windows_stay_inside_recording(self):
        windows, _ = segment_windows(5000, [(0, 9000, {})])
        assert all(w.start + w.length <= 5000 for w in windows)

    def test_split_holds_out_whole_trips(self):
        groups = {}
        wid = 0
        for key in [(s, p, d) for s in range(2) for p in range(2) for d in (0, 4)]:
            groups[key] = {}
            for trip in range(5):
                groups[key][trip] = list(range(wid, wid + 3))
                wid += 3
        train, val, test = split_windows(groups, 0.2, seed=1)
        assert set(train).isdisjoint(val) and set(train).isdisjoint(test) and set(val).isdisjoint(test)
        assert sorted(train + val + test) == list(range(wid))
        for trips in groups.values():
            held = [t for t, ws in trips.items() if set(ws) & (set(val) | set(test))]
            assert len(held) == 1
            assert set(trips[held[0]]) <= set(val) | set(test)
        assert abs(len(val) - len(test)) <= len(groups)
        assert split_windows(groups, 0.2, seed=1) == (train, val, test)

    def test_single_trip_groups_stay_in_training(self):
        train, val, test = split_windows({(0, 0, 0): {0: [0, 1, 2]}}, 0.2)
        assert (train, val, test) == ([0, 1, 2], [], [])

import numpy as np
import pytest

from rfcnn.data import (
    NormalizationStats,
    SpectrogramConfig,
    Split,
    compute_mel_spectrogram,
    dataset_from_container,
    generate_synthetic,
    load_container,
    matched_filter_scores,
    mel_band_centers,
    normalize,
    random_crop,
    read_manifest,
    save_container,
    write_manifest,
)
from rfcnn.metrics import PredictionSet, macro_pr_auc


class TestSpectrogramConfig:
    def test_defaults(self):
        cfg = SpectrogramConfig()
        assert cfg.n_mels == 256 and cfg.window_size == 2048
        assert cfg.overlap == 0.75 and cfg.hop == 512

    def test_long_clip_overlap(self):
        assert SpectrogramConfig(overlap=0.25).hop == 1536

    def test_invalid_overlap(self):
        with pytest.raises(ValueError):
            SpectrogramConfig(overlap=1.0)
        with pytest.raises(ValueError):
            SpectrogramConfig(overlap=0.333)  # non-integer hop


class TestMelSpectrogram:
    def test_frame_count_ten_second_clip(self):
        cfg = SpectrogramConfig()
        waveform = np.zeros(220500)
        spec = compute_mel_spectrogram(waveform, cfg)
        assert spec.shape == (256, (220500 - 2048) // 512 + 1)
        assert spec.shape[1] == 427

    def test_frame_count_formula_random_lengths(self):
        rng = np.random.default_rng(0)
        cfg = SpectrogramConfig(n_mels=16, window_size=256, overlap=0.5, sample_rate=8000)
        for _ in range(10):
            n = int(rng.integers(256, 5000))
            spec = compute_mel_spectrogram(rng.standard_normal(n), cfg)
            assert spec.shape == (16, (n - 256) // cfg.hop + 1)

    def test_sine_at_band_center_has_argmax_in_band(self):
        cfg = SpectrogramConfig(n_mels=48, window_size=1024, overlap=0.5, sample_rate=16000)
        centers = mel_band_centers(cfg)
        for band in (20, 30, 40):
            t = np.arange(16000) / cfg.sample_rate
            tone = np.sin(2.0 * np.pi * centers[band] * t)
            spec = compute_mel_spectrogram(tone, cfg)
            energy = spec.mean(axis=1)
            assert int(np.argmax(energy)) == band

    def test_silence_gives_uniform_floor(self):
        cfg = SpectrogramConfig(n_mels=8, window_size=128, overlap=0.5, sample_rate=4000)
        spec = compute_mel_spectrogram(np.zeros(1000), cfg)
        assert np.all(spec == spec[0, 0])

    def test_too_short_waveform(self):
        with pytest.raises(ValueError):
            compute_mel_spectrogram(np.zeros(100), SpectrogramConfig())

    def test_log_compression_switchable(self):
        cfg = SpectrogramConfig(n_mels=8, window_size=128, overlap=0.5,
                                sample_rate=4000, log_compress=False)
        spec = compute_mel_spectrogram(np.random.default_rng(0).standard_normal(1000), cfg)
        assert np.all(spec >= 0.0)  # raw mel power


class TestNormalization:
    def test_self_normalization(self):
        rng = np.random.default_rng(1)
        x = 3.0 + 2.0 * rng.standard_normal((10, 1, 16, 20))
        stats = NormalizationStats.from_training_split(x)
        normed = normalize(x, stats)
        flattened = normed.transpose(2, 0, 1, 3).reshape(16, -1)
        assert np.abs(flattened.mean(axis=1)).max() < 1e-6
        assert np.abs(flattened.std(axis=1) - 1.0).max() < 1e-4

    def test_constant_bin_zeroed(self):
        x = np.full((4, 1, 3, 5), 7.0)
        stats = NormalizationStats.from_training_split(x)
        np.testing.assert_allclose(normalize(x, stats), 0.0)

    def test_held_out_split_not_recentred(self):
        rng = np.random.default_rng(2)
        train = rng.standard_normal((20, 1, 8, 8))
        test = 1.5 + rng.standard_normal((20, 1, 8, 8))
        stats = NormalizationStats.from_training_split(train)
        normed_test = normalize(test, stats)
        assert abs(normed_test.mean()) > 0.5  # the shift survives: no leak

    def test_stats_ignore_test_data(self):
        rng = np.random.default_rng(3)
        train = [rng.standard_normal((1, 4, 6)) for _ in range(5)]
        stats_a = NormalizationStats.from_training_split(train)
        stats_b = NormalizationStats.from_training_split([a.copy() for a in train])
        np.testing.assert_array_equal(stats_a.mean, stats_b.mean)
        np.testing.assert_array_equal(stats_a.std, stats_b.std)


class TestRandomCrop:
    def test_full_width_is_identity(self):
        x = np.arange(24.0).reshape(2, 3, 4)
        out = random_crop(x, 4, np.random.default_rng(0))
        np.testing.assert_array_equal(out, x)

    def test_fixed_seed_reproducible(self):
        x = np.random.default_rng(1).standard_normal((1, 8, 100))
        a = random_crop(x, 10, np.random.default_rng(7))
        b = random_crop(x, 10, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_start_positions_uniform_chi_square(self):
        rng = np.random.default_rng(11)
        x = np.zeros((1, 100))
        x[0] = np.arange(100)
        n_starts = 100 - 10 + 1
        counts = np.zeros(n_starts)
        for _ in range(10_000):
            out = random_crop(x, 10, rng)
            counts[int(out[0, 0])] += 1
        expected = 10_000 / n_starts
        chi2 = ((counts - expected) ** 2 / expected).sum()
        df = n_starts - 1
        assert abs(chi2 - df) < 3.0 * np.sqrt(2.0 * df)

    def test_too_short_clip(self):
        with pytest.raises(ValueError):
            random_crop(np.zeros((1, 5)), 6, np.random.default_rng(0))


class TestSyntheticGenerator:
    def test_deterministic(self):
        a = generate_synthetic(3, 5, 8, 4, seed=42)
        b = generate_synthetic(3, 5, 8, 4, seed=42)
        for xa, xb in zip(a.train.x, b.train.x):
            np.testing.assert_array_equal(xa, xb)
        np.testing.assert_array_equal(a.test.y, b.test.y)

    def test_train_only(self):
        ds = generate_synthetic(3, 5, 6, 0, seed=0)
        assert len(ds.train) == 6 and len(ds.test) == 0

    def test_label_prior_within_binomial_bounds(self):
        density = 0.3
        ds = generate_synthetic(4, 5, 400, 0, seed=1, label_density=density)
        n = len(ds.train)
        sigma = np.sqrt(density * (1 - density) / n)
        assert np.all(np.abs(ds.train.y.mean(axis=0) - density) < 3.0 * sigma + 1e-9)

    def test_matched_filter_solves_test_split(self):
        ds = generate_synthetic(5, 7, 40, 80, seed=5)
        raw = matched_filter_scores(ds.test, ds.templates, ds.template_rows)
        lo = raw.min(axis=0, keepdims=True)
        hi = raw.max(axis=0, keepdims=True)
        scores = (raw - lo) / np.maximum(hi - lo, 1e-12)
        preds = PredictionSet(scores=scores, labels=(ds.test.y >= 0.5).astype(int),
                              mask=ds.test.mask)
        assert macro_pr_auc(preds) > 0.95

    def test_unknown_fraction_masks_labels(self):
        ds = generate_synthetic(4, 5, 200, 0, seed=2, unknown_fraction=0.5)
        frac_known = ds.train.mask.mean()
        assert 0.4 < frac_known < 0.6

    def test_pattern_must_fit(self):
        with pytest.raises(ValueError):
            generate_synthetic(2, 100, 4, 0, seed=0, height=64, width=64)


class TestContainer:
    def test_round_trip_byte_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        ids = ["clip_a", "clip_b", "clip_c"]
        labels = rng.uniform(size=(3, 4)).astype(np.float32)
        mask = rng.uniform(size=(3, 4)) < 0.8
        specs = [rng.standard_normal((8, 12)).astype(np.float32) for _ in range(3)]
        path = tmp_path / "data.rfd"
        save_container(path, ids, labels, mask, specs)
        first = path.read_bytes()
        r_ids, r_labels, r_mask, r_specs = load_container(path)
        assert r_ids == ids
        np.testing.assert_array_equal(r_labels, labels)
        np.testing.assert_array_equal(r_mask, mask)
        for a, b in zip(r_specs, specs):
            np.testing.assert_array_equal(a, b)
        save_container(path, r_ids, r_labels, r_mask, r_specs)
        assert path.read_bytes() == first

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.rfd"
        path.write_bytes(b"NOTDATA" + b"\x00" * 32)
        with pytest.raises(ValueError):
            load_container(path)

    def test_manifest_round_trip(self, tmp_path):
        path = tmp_path / "manifest.csv"
        mapping = {"a": "train", "b": "test", "c": "train"}
        write_manifest(path, mapping)
        assert read_manifest(path) == mapping

    def test_dataset_from_container(self, tmp_path):
        rng = np.random.default_rng(7)
        ids = [f"s{i}" for i in range(6)]
        labels = (rng.uniform(size=(6, 3)) < 0.5).astype(np.float32)
        mask = np.ones((6, 3), dtype=bool)
        specs = [rng.standard_normal((5, 9)).astype(np.float32) for _ in range(6)]
        container = tmp_path / "d.rfd"
        manifest = tmp_path / "m.csv"
        save_container(container, ids, labels, mask, specs)
        write_manifest(manifest, {i: ("train" if n < 4 else "test") for n, i in enumerate(ids)})
        ds = dataset_from_container(container, manifest)
        assert len(ds.train) == 4 and len(ds.test) == 2
        assert ds.n_classes == 3
        assert ds.train.x[0].shape == (1, 5, 9)

    def test_unassigned_sample_rejected(self, tmp_path):
        container = tmp_path / "d.rfd"
        manifest = tmp_path / "m.csv"
        save_container(container, ["a"], np.zeros((1, 2), dtype=np.float32),
                       np.ones((1, 2), dtype=bool), [np.zeros((3, 3), dtype=np.float32)])
        write_manifest(manifest, {"other": "train"})
        with pytest.raises(ValueError):
            dataset_from_container(container, manifest)


class TestSplit:
    def test_stacked_requires_uniform_shapes(self):
        split = Split(
            x=[np.zeros((1, 4, 5), dtype=np.float32), np.zeros((1, 4, 6), dtype=np.float32)],
            y=np.zeros((2, 1), dtype=np.float32),
            mask=np.ones((2, 1), dtype=bool),
        )
        with pytest.raises(ValueError):
            split.stacked()

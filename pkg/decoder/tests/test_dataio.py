import hashlib
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from decoder import dataio, dsp
from decoder.exceptions import ConfigurationError, FormatError, LabelError, ParameterError, RangeError

from .helpers import small_synth


def random_trialset(n=6, c=3, t=40, fs=100.0, seed=0):
    rng = np.random.default_rng(seed)
    return dataio.TrialSet(rng.standard_normal((n, c, t)), np.arange(n) % 2, fs, ["rest", "move"],
                           [f"C{i}" for i in range(c)], {"subject": 3})


def phase_rows(x, trim=0.1):
    return dsp.trim_edges(dsp.instantaneous_phase(x), trim)


class ContainerTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_preserves_float32_payload(self):
        ts = random_trialset()
        path = dataio.save_trialset(ts, self.root / "set.eegb")
        loaded = dataio.load_trialset(path)
        np.testing.assert_array_equal(loaded.trials, ts.trials.astype(np.float32).astype(np.float64))
        np.testing.assert_array_equal(loaded.labels, ts.labels)
        self.assertEqual(loaded.fs_hz, 100.0)
        self.assertEqual(loaded.class_names, ["rest", "move"])
        self.assertEqual(loaded.channel_names, ["C0", "C1", "C2"])
        self.assertEqual(loaded.metadata, {"subject": 3})

    def test_bad_magic(self):
        path = self.root / "bad.eegb"
        path.write_bytes(b"NOTEEG" + b"\x00" * 64)
        with self.assertRaises(FormatError) as ctx:
            dataio.load_trialset(path)
        self.assertEqual(ctx.exception.offset, 0)

    def test_short_payload(self):
        header = {"version": "1.0", "n_trials": 288, "n_channels": 22, "n_samples": 250, "fs_hz": 250.0,
                  "class_names": list(dataio.MI_CLASSES), "labels": [0] * 288}
        path = dataio.write_container(self.root / "short.eegb", dataio.TRIALSET_MAGIC, header, b"\x00" * 1024)
        with self.assertRaises(FormatError) as ctx:
            dataio.load_trialset(path)
        self.assertIsNotNone(ctx.exception.offset)

    def test_missing_header_keys_and_future_version(self):
        path = dataio.write_container(self.root / "keys.eegb", dataio.TRIALSET_MAGIC, {"version": "1.0"}, b"")
        with self.assertRaises(FormatError):
            dataio.load_trialset(path)
        header = {"version": "9.0", "n_trials": 1, "n_channels": 2, "n_samples": 8, "fs_hz": 1.0,
                  "class_names": ["a", "b"], "labels": [0]}
        path = dataio.write_container(self.root / "v9.eegb", dataio.TRIALSET_MAGIC, header, b"\x00" * 64)
        with self.assertRaises(FormatError):
            dataio.load_trialset(path)


class TrialSetTests(SimpleTestCase):
    def test_whole_valued_float_labels_are_accepted(self):
        ts = dataio.TrialSet(np.zeros((3, 2, 16)), np.array([0.0, 1.0, 1.0]), 100.0, ["a", "b"])
        np.testing.assert_array_equal(ts.labels, [0, 1, 1])
        self.assertEqual(ts.labels.dtype, np.int64)

    def test_fractional_labels_are_rejected(self):
        for labels in ([0.0, 1.7, 1.0], [0.0, np.nan, 1.0], ["a", "b", "a"]):
            with self.subTest(labels=labels), self.assertRaises(LabelError):
                dataio.TrialSet(np.zeros((3, 2, 16)), np.array(labels), 100.0, ["a", "b"])


class PreprocessTests(SimpleTestCase):
    def test_crop_to_one_second(self):
        ts = random_trialset(n=4, c=3, t=500, fs=250.0)
        out = dataio.preprocess(ts, scale=1.0)
        self.assertEqual(out.n_samples, 250)
        self.assertEqual(out.metadata["preprocess"]["order"], "filter-scale-crop")
        with self.assertRaises(RangeError):
            dataio.crop(ts, 1.0, 2.5)

    def test_full_window_crop_is_identity(self):
        ts = random_trialset(t=50, fs=100.0)
        np.testing.assert_array_equal(dataio.crop(ts, 0.0, 0.5).trials, ts.trials)

    def test_scaling_to_microvolts(self):
        ts = random_trialset(n=2, c=2, t=500, fs=250.0, seed=1)
        ts = ts.replace(ts.trials * 1e-5)
        out = dataio.preprocess(ts)
        rms = float(np.sqrt(np.mean(out.trials ** 2)))
        self.assertTrue(1.0 < rms < 100.0, rms)

    def test_line_noise_attenuated(self):
        fs = 250.0
        t = np.arange(750) / fs
        hum = np.tile(np.sin(2 * np.pi * 50 * t), (2, 2, 1))
        ts = dataio.TrialSet(hum, [0, 1], fs, ["a", "b"])
        out = dataio.preprocess(ts, scale=1.0, crop_s=(1.0, 2.0))
        gain = np.sqrt(np.mean(out.trials ** 2)) / np.sqrt(0.5)
        self.assertLessEqual(20 * math.log10(gain), -20.0)

    def test_presets(self):
        self.assertEqual(dataio.get_preset("mmidb").n_channels, 64)
        with self.assertRaises(ConfigurationError):
            dataio.get_preset("unknown")

    def test_convert_arrays(self):
        rng = np.random.default_rng(2)
        ts = dataio.convert_arrays(rng.standard_normal((4, 22, 500)) * 1e-5, [0, 1, 2, 3], 250.0, "bciciv2a")
        self.assertEqual(ts.trials.shape, (4, 22, 250))
        self.assertEqual(ts.metadata["preset"], "bciciv2a")
        with self.assertRaises(ConfigurationError):
            dataio.convert_arrays(rng.standard_normal((4, 21, 500)), [0, 1, 2, 3], 250.0, "bciciv2a")


class SyntheticTests(SimpleTestCase):
    def test_deterministic_bytes(self):
        cfg = small_synth(n_trials_per_class=5)
        with tempfile.TemporaryDirectory() as tmp:
            digests = []
            for name in ("a.eegb", "b.eegb"):
                ts, _ = dataio.generate_synthetic(cfg)
                path = dataio.save_trialset(ts, Path(tmp) / name)
                digests.append(hashlib.sha256(path.read_bytes()).hexdigest())
        self.assertEqual(digests[0], digests[1])

    def test_shapes_and_mixing_condition(self):
        ts, truth = dataio.generate_synthetic(small_synth())
        self.assertEqual(ts.trials.shape, (80, 8, 160))
        self.assertEqual(np.bincount(ts.labels).tolist(), [20, 20, 20, 20])
        self.assertLessEqual(np.linalg.cond(truth.mixing_matrix), dataio.MAX_CONDITION)
        self.assertTrue(np.all(np.isfinite(ts.trials)))

    def test_finite_for_other_configs(self):
        for seed in range(3):
            cfg = small_synth(n_trials_per_class=3, seed=seed, n_sources=4, n_channels=6, fs_hz=128.0,
                              snr_db=5.0 + 5 * seed)
            ts, _ = dataio.generate_synthetic(cfg)
            self.assertTrue(np.all(np.isfinite(ts.trials)))

    def test_locked_pair_is_phase_locked(self):
        cfg = small_synth()
        ts, truth = dataio.generate_synthetic(cfg)
        for trial, label in enumerate(ts.labels):
            x, y = truth.locked_pairs[label]
            phases = phase_rows(truth.sources[trial, [x, y]])
            self.assertGreaterEqual(dsp.plv(phases[0], phases[1]), 0.9)

    def test_unlocked_source_is_not_locked(self):
        cfg = small_synth()
        ts, truth = dataio.generate_synthetic(cfg)
        values = []
        for trial, label in enumerate(ts.labels):
            x, _ = truth.locked_pairs[label]
            other = next(s for s in range(cfg.n_sources) if s not in truth.locked_pairs[label])
            phases = phase_rows(truth.sources[trial, [x, other]])
            values.append(dsp.plv(phases[0], phases[1]))
        self.assertLessEqual(float(np.mean(values)), 0.3)

    def test_ground_truth_round_trip(self):
        _, truth = dataio.generate_synthetic(small_synth(n_trials_per_class=2))
        with tempfile.TemporaryDirectory() as tmp:
            path = dataio.save_ground_truth(truth, Path(tmp) / "gt.json")
            loaded = dataio.load_ground_truth(path)
        np.testing.assert_allclose(loaded.mixing_matrix, truth.mixing_matrix)
        self.assertEqual(loaded.locked_pairs, [tuple(p) for p in truth.locked_pairs])
        self.assertIsNone(loaded.sources)

    def test_infeasible_band(self):
        with self.assertRaises(ParameterError):
            small_synth(fs_hz=30.0)
        with self.assertRaises(ParameterError):
            small_synth(n_sources=9)

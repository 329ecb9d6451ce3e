import json
import tempfile
from pathlib import Path

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase, override_settings

from decoder import runconfig
from decoder.dataio import TrialSet
from decoder.exceptions import ConfigurationError
from decoder.serializers import PlvEntrySerializer, RunReportSerializer, SpatialFilterSerializer
from decoder.trainer import FoldResult, RunReport


class ResolveTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write_config(self, payload):
        path = self.root / "run.json"
        path.write_text(json.dumps(payload))
        return path

    def test_flags_override_file(self):
        path = self.write_config({"seed": 1, "dataset": "a.eegb", "hyperparams": {"epochs": 10, "n_spatial": 4},
                                  "cv": {"k": 3}})
        cfg = runconfig.resolve("train", path, seed=7, epochs=20, folds=None, phaser=True)
        self.assertEqual(cfg.seed, 7)
        self.assertEqual(cfg.hyperparams, {"epochs": 20, "n_spatial": 4, "use_phase_shifter": True})
        self.assertEqual(cfg.cv, {"k": 3})
        self.assertEqual(cfg.dataset, "a.eegb")

    def test_invalid_configs(self):
        with self.assertRaises(ConfigurationError):
            runconfig.resolve("train")
        with self.assertRaises(ConfigurationError):
            runconfig.resolve("analyze", dataset="a.eegb")
        with self.assertRaises(ConfigurationError):
            runconfig.resolve("train", dataset="a.eegb", hyperparams_typo=1)
        with self.assertRaises(ConfigurationError):
            runconfig.resolve("synth", self.write_config({"hyperparams": {"n_spatial": 5}}))
        with self.assertRaises(ConfigurationError):
            runconfig.resolve("train", self.write_config({"dataset": "a.eegb", "hyperparams": {"sqrt_eps": 0.0}}))
        with self.assertRaises(ConfigurationError):
            runconfig.resolve("synth", self.write_config({"synth": {"fs_hz": 20.0}}))
        with self.assertRaises(ConfigurationError):
            runconfig.resolve("synth", self.root / "missing.json")

    def test_builders(self):
        cfg = runconfig.resolve("train", dataset="a.eegb", preset="mmidb", seed=4, epochs=3)
        ts = TrialSet(np.zeros((4, 64, 160)), [0, 1, 2, 3], 160.0, ["a", "b", "c", "d"])
        hp = cfg.build_hyperparams(ts)
        self.assertEqual((hp.fir_length, hp.epochs, hp.n_channels), (33, 3, 64))
        cv = cfg.build_cv()
        self.assertEqual((cv.k, cv.repeats, cv.seed), (7, 10, 4))
        self.assertEqual(runconfig.resolve("synth", seed=9).build_synth().seed, 9)

    def test_written_config_reloads(self):
        cfg = runconfig.resolve("train", dataset="a.eegb", out=str(self.root / "run"), epochs=5)
        path = cfg.write()
        again = runconfig.resolve("train", path)
        self.assertEqual(again.to_dict(), cfg.to_dict())

    def test_default_output_root(self):
        with override_settings(PSYNET_OUTPUT_ROOT=self.root / "outputs"):
            out = runconfig.resolve("synth").out_dir()
        self.assertEqual(out, self.root / "outputs" / "synth")
        self.assertTrue(out.is_dir())

    def test_settings_carry_only_pipeline_values(self):
        self.assertGreaterEqual(settings.PSYNET_THREADS, 1)
        self.assertFalse(hasattr(settings, "ENVIRONMENT"))


class OutputSchemaTests(SimpleTestCase):
    def test_run_report_schema(self):
        fold = FoldResult(0, 0, 0.75, 0.4, np.arange(6), np.arange(6, 8), np.array([0.9, 0.4]))
        payload = RunReport("cv", 8, [fold]).to_dict()
        self.assertTrue(RunReportSerializer(data=payload).is_valid())
        payload["mean_accuracy"] = 0.9
        self.assertFalse(RunReportSerializer(data=payload).is_valid())

    def test_plv_entry_quartile_order(self):
        entry = {"psp": 0, "band_hz": 3.0, "psc_a": 0, "psc_b": 1, "class_index": 0, "class_name": "a",
                 "mean": 0.5, "q1": 0.4, "median": 0.5, "q3": 0.6, "n_trials": 10, "n_excluded": 0}
        self.assertTrue(PlvEntrySerializer(data=entry).is_valid())
        self.assertFalse(PlvEntrySerializer(data={**entry, "q1": 0.7}).is_valid())
        empty = {**entry, "mean": None, "q1": None, "median": None, "q3": None, "n_trials": 0}
        self.assertTrue(PlvEntrySerializer(data=empty).is_valid())

    def test_spatial_filter_schema(self):
        record = {"index": 0, "channels": ["C3", "C4"], "weights": [0.1, -0.9], "peak_channel": "C4"}
        self.assertTrue(SpatialFilterSerializer(data=record).is_valid())
        self.assertFalse(SpatialFilterSerializer(data={**record, "weights": [0.1]}).is_valid())
        self.assertFalse(SpatialFilterSerializer(data={**record, "peak_channel": "Cz"}).is_valid())

import math
import tempfile
from pathlib import Path
from types import SimpleNamespace

import numpy as np
from django.test import SimpleTestCase

from decoder import network, trainer
from decoder.dataio import generate_synthetic
from decoder.exceptions import ConfigurationError, ContractError, DimensionError, FormatError, LabelError

from .helpers import numeric_grad, rel_error, sample_indices, small_synth, synthetic_hyperparams, tiny_hyperparams


class HyperparamsTests(SimpleTestCase):
    def test_defaults(self):
        hp = network.Hyperparams()
        self.assertEqual((hp.n_c, hp.n_p, hp.bn_channels), (200, 120, 240))
        np.testing.assert_array_equal(hp.band_centers()[[0, -1]], [3.0, 31.0])

    def test_invalid_shapes(self):
        for bad in ({"n_spatial": 15}, {"fir_length": 50}, {"shifter_length": 4}, {"n_samples": 40},
                    {"batch_size": 1}, {"n_classes": 1}, {"fs_hz": 60.0}, {"bn_position": "classifier"},
                    {"sqrt_eps": 0.0}, {"sqrt_eps": -1e-8}):
            with self.subTest(**bad), self.assertRaises(ConfigurationError):
                network.Hyperparams(**bad)

    def test_presets_and_data_shape(self):
        hp = network.Hyperparams.for_preset("mmidb")
        self.assertEqual((hp.n_channels, hp.n_samples, hp.fir_length), (64, 160, 33))
        data = SimpleNamespace(n_channels=8, n_samples=160, fs_hz=160.0, n_classes=4)
        hp = network.Hyperparams.for_trialset(data, n_channels=99, n_bands=4, first_center_hz=7.0)
        self.assertEqual(hp.n_channels, 8)
        self.assertEqual(network.Hyperparams.from_dict({**hp.to_dict(), "unknown": 1}), hp)


class IndexingTests(SimpleTestCase):
    def test_pair_index(self):
        hp = network.Hyperparams()
        self.assertEqual(network.pair_index(hp, 0), (0, (0, 1)))
        self.assertEqual(network.pair_index(hp, 9), (1, (2, 3)))
        self.assertEqual(network.pair_index(hp, 119), (14, (14, 15)))
        for p in range(hp.n_p):
            band, (first, _) = network.pair_index(hp, p)
            self.assertEqual(network.psp_index(hp, band, first // 2), p)
        with self.assertRaises(LabelError):
            network.pair_index(hp, 120)

    def test_vote(self):
        y = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 1.0, 1.0]])
        self.assertEqual(network.vote(y), 1)
        tie = np.array([[1.0, 0.0], [0.0, 1.0]])
        self.assertEqual(network.vote(tie), 0)
        flat = np.zeros((3, 5))
        self.assertEqual(network.vote(flat), 0)
        np.testing.assert_array_equal(network.vote(np.stack([y, y[::-1]])), [1, 0])


class ForwardTests(SimpleTestCase):
    def test_default_shapes(self):
        hp = network.Hyperparams()
        params = network.init_params(hp, 0)
        x = np.random.default_rng(0).standard_normal((2, 22, 250))
        cache = network.forward(params, hp, x, network.INFER)
        self.assertEqual(cache.ss.shape, (2, 16, 250))
        self.assertEqual(cache.s.shape, (2, 15, 16, 200))
        self.assertEqual(cache.p.shape, (2, 120, 2, 200))
        self.assertEqual(cache.b.shape, (2, 240, 200))
        self.assertEqual(cache.a.shape, (2, 120, 200))
        self.assertEqual(cache.y.shape, (2, 4, 200))
        self.assertIsInstance(network.predict(params, hp, x[0]), int)
        self.assertEqual(network.predict(params, hp, x).shape, (2,))

    def test_wrong_input_shape(self):
        hp = tiny_hyperparams()
        with self.assertRaises(DimensionError):
            network.forward(network.init_params(hp, 0), hp, np.zeros((3, 41)))

    def test_init_is_deterministic_and_fir_is_designed(self):
        hp = network.Hyperparams()
        a, b = network.init_params(hp, 5), network.init_params(hp, 5)
        for name, block in a.blocks().items():
            np.testing.assert_array_equal(block, b.blocks()[name])
        self.assertFalse(np.array_equal(a.spatial, network.init_params(hp, 6).spatial))
        freqs = np.fft.rfftfreq(4096, 1 / hp.fs_hz)
        response = np.abs(np.fft.rfft(a.fir[4], 4096))
        self.assertLessEqual(abs(freqs[np.argmax(response)] - 11.0), 1.0)

    def test_phaser_starts_equivalent(self):
        for hp in (tiny_hyperparams(), network.Hyperparams()):
            x = np.random.default_rng(1).standard_normal((3, hp.n_channels, hp.n_samples))
            self.assertLessEqual(network.check_phaser_equivalence(hp, 11, x), 1e-12)

    def test_pat_identity(self):
        rng = np.random.default_rng(2)
        t = np.linspace(0, 1, 200)
        theta = 2 * np.pi * 9 * t + rng.uniform(0, 2 * np.pi)
        for delta in (np.pi / 6, np.pi / 4, np.pi / 2, 3 * np.pi / 4):
            amplitude = 1.7
            p = np.stack([amplitude * np.sin(theta + delta), amplitude * np.sin(theta)])[None]
            _, _, a = network.transcode(network.pat_coefficients(delta)[None], p, eps=0.0)
            np.testing.assert_allclose(a, amplitude, rtol=1e-6)

    def test_transcoder_scalar_oracle(self):
        transcoder = np.array([[[0.5, -1.0], [2.0, 0.25]]])
        p = np.array([[[1.0], [3.0]]])
        z, b, a = network.transcode(transcoder, p, eps=0.0)
        np.testing.assert_allclose(z[0, :, 0], [-2.5, 2.75])
        np.testing.assert_allclose(b[0, :, 0], [6.25, 7.5625])
        np.testing.assert_allclose(a[0, 0], math.sqrt(13.8125))

    def test_amplitude_is_homogeneous(self):
        hp = tiny_hyperparams()
        params = network.init_params(hp, 3)
        p = np.random.default_rng(3).standard_normal((2, hp.n_p, 2, 20))
        _, _, a = network.transcode(params.transcoder, p, 0.0)
        _, _, scaled = network.transcode(params.transcoder, 2.5 * p, 0.0)
        np.testing.assert_allclose(scaled, 2.5 * a, rtol=1e-12)

    def test_cache_keeps_spatial_output_before_batch_norm(self):
        hp = tiny_hyperparams(bn_position=network.BN_AFTER_SPATIAL, use_phase_shifter=True)
        params = network.init_params(hp, 1)
        x = np.random.default_rng(1).standard_normal((4, hp.n_channels, hp.n_samples))
        cache = network.forward(params, hp, x, network.TRAIN)
        np.testing.assert_allclose(cache.ss, np.einsum("fc,bct->bft", params.spatial, x), atol=1e-12)
        np.testing.assert_allclose(cache.ss_norm.mean(axis=(0, 2)), 0.0, atol=1e-9)
        np.testing.assert_array_equal(cache.sp[:, 0::2], cache.ss_norm[:, 0::2])

        plain = tiny_hyperparams()
        cache = network.forward(network.init_params(plain, 1), plain, x, network.TRAIN)
        self.assertIs(cache.ss_norm, cache.ss)

    def test_loss_of_zero_logits(self):
        cache = SimpleNamespace(y=np.zeros((2, 4, 7)))
        self.assertAlmostEqual(network.loss(cache, 3), math.log(4))
        with self.assertRaises(LabelError):
            network.loss(cache, 4)


class GradientTests(SimpleTestCase):
    """Backward against central differences on a tiny network."""
    variants = (
        {},
        {"use_phase_shifter": True},
        {"bn_position": network.BN_AFTER_SPATIAL},
        {"use_phase_shifter": True, "bn_position": network.BN_AFTER_SPATIAL},
    )

    def check(self, seed, **overrides):
        hp = tiny_hyperparams(**overrides)
        rng = np.random.default_rng(seed)
        params = network.init_params(hp, seed)
        if params.shifter is not None:
            params.shifter += 0.1 * rng.standard_normal(params.shifter.shape)
        params.bn_gamma += 0.1 * rng.standard_normal(params.bn_gamma.shape)
        params.bn_beta += 0.1 * rng.standard_normal(params.bn_beta.shape)
        x = rng.standard_normal((3, hp.n_channels, hp.n_samples))
        labels = rng.integers(0, hp.n_classes, 3)

        def f():
            return network.loss(network.forward(params, hp, x, network.TRAIN), labels)

        grads = network.backward(params, hp, network.forward(params, hp, x, network.TRAIN), labels)
        self.assertNotIn("fir", grads)
        self.assertEqual(set(grads), set(params.trainable()))
        for name, block in params.trainable().items():
            indices = sample_indices(block.shape, rng)
            numeric = numeric_grad(f, block, indices)
            analytic = np.array([grads[name][i] for i in indices])
            self.assertLessEqual(rel_error(analytic, [numeric[i] for i in indices]), 1e-4,
                                 f"{name} seed={seed} {overrides}")

    def test_gradients_match_finite_differences(self):
        for seed in range(5):
            for overrides in self.variants:
                with self.subTest(seed=seed, **overrides):
                    self.check(seed, **overrides)

    def test_gradients_vanish_at_a_saturated_minimum(self):
        hp = tiny_hyperparams(use_phase_shifter=True)
        params = network.init_params(hp, 2)
        params.classifier[:] = -1e6
        params.classifier[1] = 1e6
        x = np.random.default_rng(2).standard_normal((3, hp.n_channels, hp.n_samples))
        cache = network.forward(params, hp, x, network.TRAIN)
        self.assertLessEqual(network.loss(cache, 1), 1e-9)
        grads = network.backward(params, hp, cache, 1)
        self.assertEqual(set(grads), set(params.trainable()))
        for name, grad in grads.items():
            self.assertLessEqual(np.abs(grad).max(), 1e-9, name)

    def test_backward_rejects_stale_or_inference_cache(self):
        hp = tiny_hyperparams()
        params = network.init_params(hp, 0)
        x = np.random.default_rng(0).standard_normal((3, 3, 40))
        with self.assertRaises(ContractError):
            network.backward(params, hp, network.forward(params, hp, x, network.INFER), 0)
        cache = network.forward(params, hp, x, network.TRAIN)
        params.version += 1
        with self.assertRaises(ContractError):
            network.backward(params, hp, cache, 0)
        with self.assertRaises(ContractError):
            network.backward(params.copy(), hp, network.forward(params, hp, x, network.TRAIN), 0)

class PredictionTests(SimpleTestCase):
    def test_low_loss_trials_are_predicted_correctly(self):
        data, _ = generate_synthetic(small_synth(n_trials_per_class=20, seed=3))
        hp = synthetic_hyperparams(data, epochs=120)
        params = network.init_params(hp, 0)
        trainer.train(params, hp, data, seed=0, log_every=0)

        cache = network.forward(params, hp, data.trials, network.INFER)
        confident = network.loss_per_trial(cache, data.labels) < 0.2
        self.assertGreater(confident.sum(), 0)
        predicted = network.predict(params, hp, data.trials)
        self.assertGreaterEqual(np.mean(predicted[confident] == data.labels[confident]), 0.99)



class CheckpointTests(SimpleTestCase):
    def test_round_trip(self):
        hp = tiny_hyperparams(use_phase_shifter=True)
        params = network.init_params(hp, 4)
        x = np.random.default_rng(4).standard_normal((4, 3, 40))
        network.forward(params, hp, x, network.TRAIN)
        with tempfile.TemporaryDirectory() as tmp:
            path = network.save_checkpoint(Path(tmp) / "model.psnb", params, hp, 4, 12, extra={"fold": 1})
            loaded = network.load_checkpoint(path)

            raw = path.read_bytes()
            path.write_bytes(raw[:-8])
            with self.assertRaises(FormatError):
                network.load_checkpoint(path)

        self.assertEqual(loaded.hyperparams, hp)
        self.assertEqual((loaded.seed, loaded.epoch, loaded.header["extra"]), (4, 12, {"fold": 1}))
        for name, block in params.blocks().items():
            np.testing.assert_array_equal(loaded.params.blocks()[name], block)
        self.assertEqual(loaded.params.bn_state.n_updates, 1)
        np.testing.assert_array_equal(network.forward(loaded.params, hp, x, network.INFER).y,
                                      network.forward(params, hp, x, network.INFER).y)

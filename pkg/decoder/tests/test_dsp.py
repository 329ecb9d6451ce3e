import numpy as np
from django.test import SimpleTestCase
from scipy import signal as sps

from decoder import dsp
from decoder.exceptions import DegenerateSignalError, DimensionError, ParameterError


def magnitude_at(kernel, freq_hz):
    _, response = sps.freqz(kernel.taps, worN=[freq_hz], fs=kernel.fs_hz)
    return float(np.abs(response[0]))


def to_db(ratio):
    return 20 * np.log10(max(ratio, 1e-300))


def naive_analytic(x):
    """Direct DFT construction of the analytic signal on the padded length."""
    n = x.size
    nfft = 1 << (n - 1).bit_length()
    padded = np.concatenate([x, np.zeros(nfft - n)])
    k = np.arange(nfft)
    basis = np.exp(-2j * np.pi * np.outer(k, k) / nfft)
    spectrum = basis @ padded
    weights = np.zeros(nfft)
    weights[0] = 1.0
    weights[1:nfft // 2] = 2.0
    weights[nfft // 2] = 1.0
    return (basis.conj() @ (spectrum * weights) / nfft)[:n]


class FirDesignTests(SimpleTestCase):
    def test_single_kernel_passband_and_stopband(self):
        kernel = dsp.design_fir_bandpass(11.0, 2.0, 51, 250.0)
        self.assertEqual(kernel.length, 51)
        np.testing.assert_allclose(kernel.taps, kernel.taps[::-1])
        self.assertAlmostEqual(magnitude_at(kernel, 11.0), 1.0, delta=0.01)
        self.assertLessEqual(magnitude_at(kernel, 0.0), 0.05)
        self.assertLessEqual(magnitude_at(kernel, 48.0), 0.05)

        response = dsp.frequency_response(kernel, 2001)
        peak_hz = response[np.argmax(response[:, 1]), 0]
        self.assertLessEqual(abs(peak_hz - 11.0), 1.0)
        self.assertAlmostEqual(response[:, 1].max(), 1.0, places=3)

    def test_full_bank_with_long_kernels(self):
        centers = dsp.filter_bank_centers(15)
        for center in centers:
            kernel = dsp.design_fir_bandpass(center, 2.0, 251, 250.0)
            response = dsp.frequency_response(kernel, 4001)
            peak_hz = response[np.argmax(response[:, 1]), 0]
            self.assertLessEqual(abs(peak_hz - center), 1.0, center)
            self.assertLessEqual(to_db(magnitude_at(kernel, 0.0)), -20.0, center)
            self.assertLessEqual(to_db(magnitude_at(kernel, 48.0)), -20.0, center)

    def test_short_kernels_reject_dc_from_eleven_hz_up(self):
        for center in dsp.filter_bank_centers(15)[4:]:
            kernel = dsp.design_fir_bandpass(center, 2.0, 51, 250.0)
            self.assertLessEqual(to_db(magnitude_at(kernel, 0.0)), -20.0, center)

    def test_bank_shape_and_centres(self):
        bank = dsp.design_filter_bank(15, 51, 250.0)
        self.assertEqual(bank.shape, (15, 51))
        np.testing.assert_array_equal(dsp.filter_bank_centers(3), [3.0, 5.0, 7.0])

    def test_invalid_designs(self):
        with self.assertRaises(ParameterError):
            dsp.design_fir_bandpass(11.0, 2.0, 50, 250.0)
        with self.assertRaises(ParameterError):
            dsp.design_fir_bandpass(124.5, 2.0, 51, 250.0)
        with self.assertRaises(ParameterError):
            dsp.design_fir_bandpass(0.5, 2.0, 51, 250.0)

    def test_white_noise_peaks_in_passband(self):
        noise = np.random.default_rng(0).standard_normal(1 << 15)
        for center in (11.0, 21.0):
            kernel = dsp.design_fir_bandpass(center, 2.0, 251, 250.0)
            filtered = sps.lfilter(kernel.taps, [1.0], noise)
            freqs, power = sps.welch(filtered, fs=250.0, nperseg=4096)
            self.assertLessEqual(abs(freqs[np.argmax(power)] - center), 1.5)


class FrequencyResponseTests(SimpleTestCase):
    def test_unit_impulse_is_flat(self):
        response = dsp.frequency_response([1.0], 64)
        np.testing.assert_allclose(response[:, 1], 1.0)
        self.assertEqual(response[-1, 0], 1.0)

    def test_two_point_average(self):
        response = dsp.frequency_response([0.5, 0.5], 65)
        self.assertAlmostEqual(response[0, 1], 1.0)
        self.assertAlmostEqual(response[-1, 1], 0.0)
        np.testing.assert_allclose(response[:, 1], np.abs(np.cos(np.pi * response[:, 0] / 2)), atol=1e-12)


class PhaseTests(SimpleTestCase):
    def test_sinusoid_phase_advances_steadily(self):
        fs = 256.0
        t = np.arange(512) / fs
        phase = dsp.analytic_phase(np.sin(2 * np.pi * 10 * t), fs).phase
        np.testing.assert_allclose(np.diff(phase), 2 * np.pi * 10 / fs, atol=1e-9)

    def test_cosine_leads_sine_by_quarter_cycle(self):
        t = np.arange(512) / 256.0
        cos_phase = dsp.analytic_phase(np.cos(2 * np.pi * 8 * t), 256.0).phase
        sin_phase = dsp.analytic_phase(np.sin(2 * np.pi * 8 * t), 256.0).phase
        np.testing.assert_allclose(cos_phase - sin_phase, np.pi / 2, atol=1e-6)

    def test_fft_matches_direct_dft(self):
        rng = np.random.default_rng(1)
        for n in (16, 20, 50, 64, 100, 128):
            x = rng.standard_normal(n)
            np.testing.assert_allclose(dsp.analytic_signal(x), naive_analytic(x), atol=1e-9)

    def test_degenerate_and_short_signals(self):
        with self.assertRaises(DegenerateSignalError):
            dsp.analytic_phase(np.zeros(64), 250.0)
        with self.assertRaises(ParameterError):
            dsp.analytic_signal(np.ones(4))
        with self.assertRaises(DimensionError):
            dsp.analytic_phase(np.ones((2, 64)), 250.0)

    def test_trim_edges(self):
        values = np.arange(100)
        np.testing.assert_array_equal(dsp.trim_edges(values, 0.1), np.arange(10, 90))
        np.testing.assert_array_equal(dsp.trim_edges(values, 0.0), values)
        with self.assertRaises(ParameterError):
            dsp.trim_edges(values, 0.5)


class PlvTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2)

    def test_constant_offset_is_fully_locked(self):
        a = self.rng.uniform(-np.pi, np.pi, 500)
        self.assertAlmostEqual(dsp.plv(a, a + 0.7), 1.0, places=12)

    def test_independent_phases_are_unlocked(self):
        a = self.rng.uniform(-np.pi, np.pi, 10_000)
        b = self.rng.uniform(-np.pi, np.pi, 10_000)
        self.assertLessEqual(dsp.plv(a, b), 0.05)

    def test_alternating_offset_cancels(self):
        a = np.where(np.arange(100) % 2, np.pi, 0.0)
        self.assertLess(dsp.plv(a, np.zeros(100)), 1e-12)

    def test_symmetric_and_shift_invariant(self):
        a = self.rng.uniform(-np.pi, np.pi, 300)
        b = a + 0.3 * self.rng.standard_normal(300)
        value = dsp.plv(a, b)
        self.assertTrue(0.0 <= value <= 1.0)
        self.assertAlmostEqual(value, dsp.plv(b, a), places=12)
        self.assertAlmostEqual(value, dsp.plv(a + 1.3, b + 1.3), places=12)
        self.assertAlmostEqual(value, dsp.plv(a + 2 * np.pi, b), places=12)

    def test_rows_and_mismatch(self):
        a = self.rng.uniform(-np.pi, np.pi, (3, 50))
        self.assertEqual(dsp.plv(a, a).shape, (3,))
        with self.assertRaises(DimensionError):
            dsp.plv(np.zeros(10), np.zeros(11))

"""
Classical signal processing.

Band-pass FIR design for the FIRConv bank, zero-phase filtering for
preprocessing, analytic-signal phase extraction and the phase locking value.
"""
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .exceptions import DegenerateSignalError, DimensionError, ParameterError

DEFAULT_BANDWIDTH_HZ = 2.0
DEFAULT_WINDOW = "hamming"
FIRST_CENTER_HZ = 3.0
CENTER_STEP_HZ = 2.0
MIN_PHASE_SAMPLES = 8

# frequency grid used to locate the passband peak when normalizing taps
RESPONSE_GRID = 8192


@dataclass(frozen=True)
class FirKernel:
    taps: np.ndarray
    center_hz: float
    bandwidth_hz: float
    fs_hz: float
    window: str = DEFAULT_WINDOW

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size % 2 == 0:
            raise ParameterError(f"FIR kernel needs an odd number of taps, got shape {taps.shape}")
        object.__setattr__(self, "taps", taps)

    @property
    def length(self):
        return self.taps.size

    @property
    def passband(self):
        half = self.bandwidth_hz / 2
        return self.center_hz - half, self.center_hz + half


@dataclass(frozen=True)
class PhaseSeries:
    phase: np.ndarray
    fs_hz: float

    def __post_init__(self):
        phase = np.asarray(self.phase, dtype=np.float64)
        if not np.all(np.isfinite(phase)):
            raise ParameterError("phase series has non-finite entries")
        object.__setattr__(self, "phase", phase)

    def __len__(self):
        return self.phase.shape[-1]


def _check_band(lo_hz, hi_hz, fs_hz):
    if not 0 < lo_hz < hi_hz < fs_hz / 2:
        raise ParameterError(
            f"band edges ({lo_hz:g}, {hi_hz:g}) Hz must lie inside (0, {fs_hz / 2:g}) Hz"
        )


def _check_odd(length):
    if length < 1 or length % 2 == 0:
        raise ParameterError(f"filter length must be odd and positive, got {length}")


def design_fir_bandpass(center_hz, bandwidth_hz=DEFAULT_BANDWIDTH_HZ, length=51, fs_hz=250.0,
                        window=DEFAULT_WINDOW):
    """
    Windowed difference-of-sinc band-pass with passband center +/- bandwidth/2.

    Taps are symmetrized (linear phase) and scaled so the peak magnitude of
    the response is 1.
    """
    _check_odd(length)
    lo_hz = center_hz - bandwidth_hz / 2
    hi_hz = center_hz + bandwidth_hz / 2
    _check_band(lo_hz, hi_hz, fs_hz)

    taps = sps.firwin(length, [lo_hz, hi_hz], pass_zero=False, window=window, scale=False, fs=fs_hz)
    taps = 0.5 * (taps + taps[::-1])
    _, response = sps.freqz(taps, worN=RESPONSE_GRID, fs=fs_hz)
    taps = taps / np.abs(response).max()
    return FirKernel(taps, float(center_hz), float(bandwidth_hz), float(fs_hz), window)


def filter_bank_centers(n_bands, first_hz=FIRST_CENTER_HZ, step_hz=CENTER_STEP_HZ):
    return first_hz + step_hz * np.arange(n_bands)


def design_filter_bank(n_bands, length, fs_hz, bandwidth_hz=DEFAULT_BANDWIDTH_HZ,
                       window=DEFAULT_WINDOW, first_hz=FIRST_CENTER_HZ, step_hz=CENTER_STEP_HZ):
    """Stack of band-pass kernels, one row per centre, as a (n_bands, length) array."""
    return np.stack([
        design_fir_bandpass(center, bandwidth_hz, length, fs_hz, window).taps
        for center in filter_bank_centers(n_bands, first_hz, step_hz)
    ])


def frequency_response(kernel, n_points, fs_hz=2.0):
    """
    Magnitude of the DTFT of the taps at n_points frequencies spanning [0, fs/2].

    Accepts a FirKernel or raw taps; for raw taps `fs_hz` defaults to 2 so the
    frequency axis is normalized to Nyquist = 1. Returns an (n_points, 2)
    array of (freq_hz, magnitude).
    """
    if n_points < 2:
        raise ParameterError("frequency_response needs at least 2 points")
    if isinstance(kernel, FirKernel):
        taps, fs_hz = kernel.taps, kernel.fs_hz
    else:
        taps = np.asarray(kernel, dtype=np.float64)
    freqs = np.linspace(0.0, fs_hz / 2, n_points)
    _, response = sps.freqz(taps, worN=freqs, fs=fs_hz)
    return np.column_stack([freqs, np.abs(response)])


def zero_phase_bandpass(x, fs_hz, lo_hz, hi_hz, numtaps=201, axis=-1):
    """Forward-backward Hamming FIR band-pass along `axis`."""
    _check_odd(numtaps)
    _check_band(lo_hz, hi_hz, fs_hz)
    x = np.asarray(x, dtype=np.float64)
    taps = sps.firwin(numtaps, [lo_hz, hi_hz], pass_zero=False, fs=fs_hz)
    padlen = min(3 * numtaps, x.shape[axis] - 1)
    return sps.filtfilt(taps, [1.0], x, axis=axis, padlen=padlen)


def analytic_signal(x):
    """
    Analytic signal of the last axis via the frequency-domain Hilbert transform.

    The FFT runs on the next power-of-two length; the zero pad is dropped
    from the result.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < MIN_PHASE_SAMPLES:
        raise ParameterError(f"analytic signal needs at least {MIN_PHASE_SAMPLES} samples, got {n}")
    nfft = 1 << (n - 1).bit_length()
    return sps.hilbert(x, N=nfft, axis=-1)[..., :n]


def instantaneous_phase(x):
    """Unwrapped analytic phase of every row of x (..., n)."""
    return np.unwrap(np.angle(analytic_signal(x)), axis=-1)


def analytic_phase(signal, fs_hz):
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise DimensionError(f"analytic_phase expects a 1-D signal, got {signal.shape}")
    if not np.any(signal):
        raise DegenerateSignalError("cannot take the phase of an all-zero signal")
    return PhaseSeries(instantaneous_phase(signal), float(fs_hz))


def trim_edges(values, fraction):
    """Drop `fraction` of the samples at each end of the last axis."""
    if not 0 <= fraction < 0.5:
        raise ParameterError(f"edge trim fraction must be in [0, 0.5), got {fraction}")
    n = values.shape[-1]
    cut = int(np.floor(n * fraction))
    return values[..., cut:n - cut]


def plv(a, b):
    """
    Phase locking value |mean(exp(i(a - b)))| along the last axis.

    Accepts PhaseSeries or raw phase arrays; rows of (..., n) arrays are
    handled independently.
    """
    a = a.phase if isinstance(a, PhaseSeries) else np.asarray(a, dtype=np.float64)
    b = b.phase if isinstance(b, PhaseSeries) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"phase series lengths differ: {a.shape} vs {b.shape}")
    diff = a - b
    value = np.minimum(np.hypot(np.cos(diff).mean(axis=-1), np.sin(diff).mean(axis=-1)), 1.0)
    return float(value) if np.ndim(value) == 0 else value

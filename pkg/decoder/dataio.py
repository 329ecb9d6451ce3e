"""
Trial containers, preprocessing and the synthetic phase-locked generator.

EEGB1 layout: the 6-byte magic "EEGB1\\n", an unsigned 32-bit little-endian
header length H, H bytes of UTF-8 JSON header, then n_trials * n_channels *
n_samples little-endian float32 values (trial-major, channel-next,
time-minor). Checkpoints reuse the same layout with their own magic.
"""
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from packaging.version import InvalidVersion, Version
from scipy.ndimage import gaussian_filter1d
from typeguard import typechecked

from . import dsp
from .exceptions import (
    ConfigurationError,
    DimensionError,
    FormatError,
    LabelError,
    ParameterError,
    RangeError,
)

logger = logging.getLogger(__name__)

TRIALSET_MAGIC = b"EEGB1\n"
FORMAT_VERSION = Version("1.0")
_LENGTH = struct.Struct("<I")

TRIALSET_HEADER_KEYS = ("version", "n_trials", "n_channels", "n_samples", "fs_hz", "class_names", "labels")

MI_CLASSES = ("left_hand", "right_hand", "feet", "tongue")


# container codec

def write_container(path, magic, header, payload):
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(magic)
        fh.write(_LENGTH.pack(len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    return path


def read_container(path, magic, required_keys=()):
    """Return (header, payload bytes, payload offset) of a magic+JSON+payload file."""
    raw = Path(path).read_bytes()
    if raw[:len(magic)] != magic:
        raise FormatError(f"bad magic, expected {magic!r}", offset=0)
    offset = len(magic)
    if len(raw) < offset + _LENGTH.size:
        raise FormatError("truncated before header length", offset=offset)
    (header_length,) = _LENGTH.unpack_from(raw, offset)
    offset += _LENGTH.size
    if len(raw) < offset + header_length:
        raise FormatError(f"header declares {header_length} bytes but file is shorter", offset=offset)
    try:
        header = json.loads(raw[offset:offset + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not UTF-8 JSON: {exc}", offset=offset) from exc
    if not isinstance(header, dict):
        raise FormatError("header is not a JSON object", offset=offset)
    missing = [key for key in required_keys if key not in header]
    if missing:
        raise FormatError(f"header misses keys {missing}", offset=offset)
    try:
        version = Version(str(header.get("version", "")))
    except InvalidVersion as exc:
        raise FormatError(f"unreadable format version {header.get('version')!r}", offset=offset) from exc
    if version.major != FORMAT_VERSION.major:
        raise FormatError(f"unsupported format version {version}", offset=offset)
    offset += header_length
    return header, raw[offset:], offset


# trial sets

@dataclass
class TrialSet:
    """Labelled trials (N, C, T) sampled at fs_hz."""
    trials: np.ndarray
    labels: np.ndarray
    fs_hz: float
    class_names: list
    channel_names: list | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.trials = np.asarray(self.trials, dtype=np.float64)
        labels = np.asarray(self.labels)
        if labels.dtype.kind not in "iub":
            if labels.dtype.kind != "f" or not np.all(np.isfinite(labels)) or np.any(labels != np.round(labels)):
                raise LabelError(f"labels must be integer class indices, got {labels.dtype} values")
        self.labels = labels.astype(np.int64)
        self.class_names = [str(name) for name in self.class_names]
        self.fs_hz = float(self.fs_hz)
        if self.trials.ndim != 3:
            raise DimensionError(f"trials must be (N, C, T), got {self.trials.shape}")
        n, c, t = self.trials.shape
        if n < 1 or c < 2 or t < 8:
            raise DimensionError(f"need N >= 1, C >= 2, T >= 8, got {self.trials.shape}")
        if self.labels.shape != (n,):
            raise DimensionError(f"{self.labels.shape[0]} labels for {n} trials")
        if np.any((self.labels < 0) | (self.labels >= len(self.class_names))):
            raise LabelError(f"labels must lie in [0, {len(self.class_names)})")
        if not np.all(np.isfinite(self.trials)):
            raise ParameterError("trials contain non-finite values")
        if self.fs_hz <= 0:
            raise ParameterError(f"sampling rate must be positive, got {self.fs_hz}")
        if self.channel_names is not None:
            self.channel_names = [str(name) for name in self.channel_names]
            if len(self.channel_names) != c:
                raise DimensionError(f"{len(self.channel_names)} channel names for {c} channels")

    @property
    def n_trials(self):
        return self.trials.shape[0]

    @property
    def n_channels(self):
        return self.trials.shape[1]

    @property
    def n_samples(self):
        return self.trials.shape[2]

    @property
    def n_classes(self):
        return len(self.class_names)

    @property
    def duration_s(self):
        return self.n_samples / self.fs_hz

    def channel_labels(self):
        return self.channel_names or [f"ch{i}" for i in range(self.n_channels)]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return TrialSet(self.trials[indices], self.labels[indices], self.fs_hz,
                        self.class_names, self.channel_names, dict(self.metadata))

    def replace(self, trials, metadata=None):
        return TrialSet(trials, self.labels, self.fs_hz, self.class_names, self.channel_names,
                        self.metadata if metadata is None else metadata)


@typechecked
def save_trialset(ts: TrialSet, path: str | Path) -> Path:
    header = {
        "version": str(FORMAT_VERSION),
        "n_trials": ts.n_trials,
        "n_channels": ts.n_channels,
        "n_samples": ts.n_samples,
        "fs_hz": ts.fs_hz,
        "class_names": ts.class_names,
        "labels": [int(label) for label in ts.labels],
    }
    if ts.channel_names is not None:
        header["channel_names"] = ts.channel_names
    if ts.metadata:
        header["metadata"] = ts.metadata
    payload = np.ascontiguousarray(ts.trials, dtype="<f4").tobytes()
    return write_container(path, TRIALSET_MAGIC, header, payload)


@typechecked
def load_trialset(path: str | Path) -> TrialSet:
    header, payload, offset = read_container(path, TRIALSET_MAGIC, TRIALSET_HEADER_KEYS)
    shape = (int(header["n_trials"]), int(header["n_channels"]), int(header["n_samples"]))
    expected = math.prod(shape) * 4
    if len(payload) != expected:
        raise FormatError(
            f"header declares {shape[0]}x{shape[1]}x{shape[2]} float32 ({expected} bytes), "
            f"payload has {len(payload)} bytes",
            offset=offset,
        )
    if len(header["labels"]) != shape[0]:
        raise FormatError(f"{len(header['labels'])} labels for {shape[0]} trials", offset=offset)
    trials = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
    return TrialSet(
        trials,
        np.asarray(header["labels"], dtype=np.int64),
        header["fs_hz"],
        header["class_names"],
        header.get("channel_names"),
        header.get("metadata", {}),
    )


# preprocessing

@dataclass(frozen=True)
class DatasetPreset:
    """Acquisition and protocol settings of a public motor-imagery dataset."""
    name: str
    n_channels: int
    fs_hz: float
    crop_s: tuple
    band_hz: tuple = (1.0, 48.0)
    scale: float = 1e6
    fir_length: int = 51
    shifter_length: int = 51
    folds: int = 4
    repeats: int = 10
    class_names: tuple = MI_CLASSES


PRESETS = {
    "bciciv2a": DatasetPreset("bciciv2a", n_channels=22, fs_hz=250.0, crop_s=(0.5, 1.5)),
    "mmidb": DatasetPreset(
        "mmidb", n_channels=64, fs_hz=160.0, crop_s=(0.0, 1.0), fir_length=33, shifter_length=33,
        folds=7, class_names=("left_hand", "right_hand", "feet", "both_hands"),
    ),
}


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown dataset preset {name!r}, choose from {sorted(PRESETS)}") from None


def _crop_bounds(ts, start_s, end_s):
    duration = ts.duration_s
    if not 0 <= start_s < end_s or end_s > duration + 1e-9:
        raise RangeError(f"crop window ({start_s}, {end_s}) s outside trial of {duration:g} s")
    start = int(round(start_s * ts.fs_hz))
    length = int(round((end_s - start_s) * ts.fs_hz))
    if start + length > ts.n_samples:
        raise RangeError(f"crop window ({start_s}, {end_s}) s outside trial of {duration:g} s")
    return start, length


def crop(ts, start_s, end_s):
    start, length = _crop_bounds(ts, start_s, end_s)
    return ts.replace(ts.trials[..., start:start + length].copy())


def preprocess(ts, band_lo_hz=1.0, band_hi_hz=48.0, scale=1e6, crop_s=(0.5, 1.5), numtaps=201):
    """
    Zero-phase band-pass, scale, then crop every channel of every trial.

    The filter runs before scaling and before cropping so the crop never sees
    filter edge transients; the chosen settings are recorded in
    `metadata["preprocess"]`.
    """
    _crop_bounds(ts, *crop_s)
    filtered = dsp.zero_phase_bandpass(ts.trials, ts.fs_hz, band_lo_hz, band_hi_hz, numtaps)
    metadata = dict(ts.metadata)
    metadata["preprocess"] = {
        "filter": "hamming-fir-forward-backward",
        "numtaps": numtaps,
        "band_hz": [band_lo_hz, band_hi_hz],
        "scale": scale,
        "crop_s": list(crop_s),
        "order": "filter-scale-crop",
    }
    return crop(ts.replace(filtered * scale, metadata), *crop_s)


def convert_arrays(trials, labels, fs_hz, preset, class_names=None, channel_names=None, numtaps=201):
    """Build a preprocessed TrialSet from arrays exported by a public-dataset loader."""
    preset = get_preset(preset) if isinstance(preset, str) else preset
    ts = TrialSet(trials, labels, fs_hz, class_names or preset.class_names, channel_names)
    if ts.n_channels != preset.n_channels or ts.fs_hz != preset.fs_hz:
        raise ConfigurationError(
            f"preset {preset.name} expects {preset.n_channels} channels at {preset.fs_hz:g} Hz, "
            f"got {ts.n_channels} at {ts.fs_hz:g} Hz"
        )
    out = preprocess(ts, *preset.band_hz, scale=preset.scale, crop_s=preset.crop_s, numtaps=numtaps)
    out.metadata["preset"] = preset.name
    return out


# synthetic data

@dataclass(frozen=True)
class SynthConfig:
    n_trials_per_class: int = 50
    n_sources: int = 6
    n_channels: int = 8
    fs_hz: float = 160.0
    duration_s: float = 1.0
    center_hz: tuple = (7.0, 11.0, 15.0, 19.0)
    delta_theta: tuple = (math.pi / 2, math.pi / 3, 2 * math.pi / 3, math.pi / 4)
    rician_nu: float = 1.0
    rician_sigma: float = 0.3
    snr_db: float = 20.0
    background_rms: float = 0.5
    jitter_hz: float = 0.2
    seed: int = 0
    class_names: tuple = MI_CLASSES

    def __post_init__(self):
        for name in ("center_hz", "delta_theta", "class_names"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not (len(self.center_hz) == len(self.delta_theta) == len(self.class_names)) or len(self.center_hz) < 2:
            raise ParameterError("center_hz, delta_theta and class_names need one entry per class (>= 2 classes)")
        if not 2 <= self.n_sources <= self.n_channels:
            raise ParameterError(f"need 2 <= n_sources <= n_channels, got {self.n_sources}, {self.n_channels}")
        if self.n_trials_per_class < 1 or self.duration_s * self.fs_hz < 8:
            raise ParameterError("need at least one trial per class and 8 samples per trial")
        nyquist = self.fs_hz / 2
        for center in self.center_hz:
            if not 0 < center - self.jitter_hz or center + self.jitter_hz >= nyquist:
                raise ParameterError(f"locked band {center:g} Hz is infeasible below Nyquist {nyquist:g} Hz")
        if self.rician_nu < 0 or self.rician_sigma < 0:
            raise ParameterError("Rician parameters must be non-negative")

    @property
    def n_classes(self):
        return len(self.center_hz)

    @property
    def n_samples(self):
        return int(round(self.duration_s * self.fs_hz))

    def locked_pairs(self):
        """Class c locks sources (2c, 2c+1), wrapping over the even source count."""
        usable = self.n_sources - self.n_sources % 2
        return [((2 * c) % usable, (2 * c + 1) % usable) for c in range(self.n_classes)]

    def to_dict(self):
        return {key: list(value) if isinstance(value, tuple) else value for key, value in asdict(self).items()}


@dataclass
class SynthGroundTruth:
    mixing_matrix: np.ndarray
    locked_pairs: list
    delta_theta: list
    center_hz: list
    # latent sources (N, S, T); kept in memory only
    sources: np.ndarray | None = None

    def to_dict(self):
        return {
            "mixing_matrix": self.mixing_matrix.tolist(),
            "locked_pairs": [list(pair) for pair in self.locked_pairs],
            "delta_theta": list(self.delta_theta),
            "center_hz": list(self.center_hz),
            "condition_number": float(np.linalg.cond(self.mixing_matrix)),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["mixing_matrix"], dtype=np.float64),
                   [tuple(pair) for pair in data["locked_pairs"]],
                   list(data["delta_theta"]), list(data["center_hz"]))


def save_ground_truth(truth, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(truth.to_dict(), indent=2, sort_keys=True))
    return path


def load_ground_truth(path):
    return SynthGroundTruth.from_dict(json.loads(Path(path).read_text()))


MAX_CONDITION = 100.0


def _mixing_matrix(rng, n_channels, n_sources):
    for _ in range(1000):
        mixing = rng.standard_normal((n_channels, n_sources))
        mixing /= np.linalg.norm(mixing, axis=0, keepdims=True)
        if np.linalg.cond(mixing) <= MAX_CONDITION:
            return mixing
    raise ParameterError("could not draw a well-conditioned mixing matrix")


def _slow_gaussian(rng, shape, fs_hz, corner_hz=2.0):
    """Unit-variance Gaussian processes smoothed to roughly `corner_hz`."""
    noise = gaussian_filter1d(rng.standard_normal(shape), sigma=fs_hz / (2 * math.pi * corner_hz), axis=-1)
    return noise / noise.std(axis=-1, keepdims=True)


def _rician_envelopes(rng, shape, fs_hz, nu, sigma):
    in_phase = _slow_gaussian(rng, shape, fs_hz)
    quadrature = _slow_gaussian(rng, shape, fs_hz)
    return np.sqrt((nu + sigma * in_phase) ** 2 + (sigma * quadrature) ** 2)


def _phase_processes(rng, centers_hz, n_samples, fs_hz, jitter_hz):
    """Integrated instantaneous frequency: centre plus a random walk bounded by jitter."""
    steps = rng.normal(0.0, jitter_hz / math.sqrt(fs_hz), (centers_hz.size, n_samples))
    frequency = centers_hz[:, None] + np.clip(np.cumsum(steps, axis=-1), -jitter_hz, jitter_hz)
    start = rng.uniform(0.0, 2 * math.pi, (centers_hz.size, 1))
    return start + 2 * math.pi * np.cumsum(frequency, axis=-1) / fs_hz


def generate_synthetic(cfg):
    """
    Draw a labelled multichannel set with one phase-locked source pair per class.

    In a trial of class c the sources locked_pairs()[c] carry
    A_x(t) sin(theta(t) + delta_theta[c]) and A_y(t) sin(theta(t)) with
    independent Rician envelopes; every other source is band-limited noise.
    Channels are mixing @ sources plus white sensor noise at snr_db.
    """
    rng = np.random.default_rng(cfg.seed)
    n_sources, fs = cfg.n_sources, cfg.fs_hz
    n_samples = cfg.n_samples
    margin = int(round(0.5 * fs))
    total = n_samples + 2 * margin

    mixing = _mixing_matrix(rng, cfg.n_channels, n_sources)
    labels = rng.permutation(np.repeat(np.arange(cfg.n_classes), cfg.n_trials_per_class))
    n_trials = labels.size

    background = dsp.zero_phase_bandpass(
        rng.standard_normal((n_trials, n_sources, total)), fs, 1.0, min(40.0, 0.45 * fs), numtaps=63,
    )
    background *= cfg.background_rms / np.sqrt(np.mean(background ** 2, axis=-1, keepdims=True))

    centers = np.asarray(cfg.center_hz)[labels]
    offsets = np.asarray(cfg.delta_theta)[labels]
    theta = _phase_processes(rng, centers, total, fs, cfg.jitter_hz)
    envelopes = _rician_envelopes(rng, (n_trials, 2, total), fs, cfg.rician_nu, cfg.rician_sigma)

    sources = background
    pairs = np.asarray(cfg.locked_pairs())[labels]
    rows = np.arange(n_trials)
    sources[rows, pairs[:, 0]] = envelopes[:, 0] * np.sin(theta + offsets[:, None])
    sources[rows, pairs[:, 1]] = envelopes[:, 1] * np.sin(theta)
    sources = sources[..., margin:margin + n_samples]

    channels = np.einsum("cs,nst->nct", mixing, sources)
    noise_std = math.sqrt(np.mean(channels ** 2) / 10 ** (cfg.snr_db / 10))
    channels = channels + rng.normal(0.0, noise_std, channels.shape)

    logger.info("synthesized %d trials, %d channels, %d samples at %g Hz",
                n_trials, cfg.n_channels, n_samples, fs)
    ts = TrialSet(channels, labels, fs, cfg.class_names,
                  [f"ch{i}" for i in range(cfg.n_channels)], {"synthetic": cfg.to_dict()})
    truth = SynthGroundTruth(mixing, cfg.locked_pairs(), list(cfg.delta_theta), list(cfg.center_hz), sources)
    return ts, truth

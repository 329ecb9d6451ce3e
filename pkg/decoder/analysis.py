"""
Post-training synchrony analysis.

Extracts the sub-band component pairs a trained network sees, summarizes
their per-class phase locking, evaluates the amplitude-recovery error bound
and exports the learned spatial filters for topographic plotting.
"""
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from typeguard import typechecked

from . import dsp, network
from .dataio import SynthGroundTruth, TrialSet
from .exceptions import DimensionError, ParameterError, SingularityError
from .kernels import INFER, INSTANCE

logger = logging.getLogger(__name__)

DEFAULT_EDGE_TRIM = 0.1
QUANTILE_RULE = "linear"

PLV_CSV_HEADER = ("psp", "band_hz", "psc_a", "psc_b", "class", "mean", "q1", "median", "q3", "n", "excluded")


def extract_psp_signals(params, hp, x):
    """
    Paired sub-band components P for x (C, T) or a batch (B, C, T).

    Returns (P, bn_fallback). When batch norm has never seen a training
    batch, per-trial statistics replace the running ones and bn_fallback is
    True.
    """
    bn_fallback = params.bn_state.n_updates == 0
    if bn_fallback:
        logger.warning("batch norm has no running statistics, normalizing each trial by itself")
    cache = network.forward(params, hp, x, INSTANCE if bn_fallback else INFER)
    p = cache.p[0] if np.ndim(x) == 2 else cache.p
    return p, bn_fallback


@dataclass
class PlvEntry:
    psp: int
    band_hz: float
    psc_a: int
    psc_b: int
    class_index: int
    class_name: str
    mean: float | None
    q1: float | None
    median: float | None
    q3: float | None
    n_trials: int
    n_excluded: int = 0

    def csv_row(self):
        return (self.psp, self.band_hz, self.psc_a, self.psc_b, self.class_name,
                self.mean, self.q1, self.median, self.q3, self.n_trials, self.n_excluded)


@dataclass
class PlvReport:
    entries: list
    class_names: list
    edge_trim: float = DEFAULT_EDGE_TRIM
    quantile_rule: str = QUANTILE_RULE
    bn_fallback: bool = False
    n_excluded: int = 0

    def for_psp(self, psp):
        return [entry for entry in self.entries if entry.psp == psp]

    def to_dict(self):
        return {
            "edge_trim": self.edge_trim,
            "quantile_rule": self.quantile_rule,
            "bn_fallback": self.bn_fallback,
            "n_excluded": self.n_excluded,
            "class_names": list(self.class_names),
            "entries": [asdict(entry) for entry in self.entries],
        }

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))
        return Path(path)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(PLV_CSV_HEADER)
            writer.writerows(entry.csv_row() for entry in self.entries)
        return Path(path)


def trial_plvs(p, edge_trim=DEFAULT_EDGE_TRIM):
    """
    PLV of every PSP of every trial from P (..., N_p, 2, N_c).

    PSPs with an all-zero component come back as NaN.
    """
    p = np.asarray(p, dtype=np.float64)
    degenerate = ~np.all(np.any(p, axis=-1), axis=-1)
    phases = dsp.trim_edges(dsp.instantaneous_phase(p), edge_trim)
    values = np.asarray(dsp.plv(phases[..., 0, :], phases[..., 1, :]), dtype=np.float64)
    return np.where(degenerate, np.nan, values)


def _stats(values):
    if values.size == 0:
        return None, None, None, None
    q1, median, q3 = np.quantile(values, [0.25, 0.5, 0.75], method=QUANTILE_RULE)
    return float(values.mean()), float(q1), float(median), float(q3)


@typechecked
def plv_report(params: network.PsnetParams, hp: network.Hyperparams, data: TrialSet,
               edge_trim: float = DEFAULT_EDGE_TRIM, batch_size: int = 32) -> PlvReport:
    """Per-class PLV mean and quartiles of every PSP over the trials of `data`."""
    chunks, fallback = [], False
    for start in range(0, data.n_trials, batch_size):
        p, fallback = extract_psp_signals(params, hp, data.trials[start:start + batch_size])
        chunks.append(trial_plvs(p, edge_trim))
    plvs = np.concatenate(chunks)
    excluded = np.isnan(plvs)
    if excluded.any():
        logger.warning("%d trial/PSP combinations had an all-zero component and were excluded",
                       int(excluded.sum()))

    centers = hp.band_centers()
    entries = []
    for psp in range(hp.n_p):
        band, (psc_a, psc_b) = network.pair_index(hp, psp)
        for c, name in enumerate(data.class_names):
            column = plvs[data.labels == c, psp]
            kept = column[~np.isnan(column)]
            entries.append(PlvEntry(
                psp, float(centers[band]), psc_a, psc_b, c, name, *_stats(kept),
                n_trials=int(kept.size), n_excluded=int(column.size - kept.size),
            ))
    return PlvReport(entries, list(data.class_names), edge_trim, QUANTILE_RULE, fallback, int(excluded.sum()))


def plv_gaps(report):
    """Largest difference of class-mean PLV for every PSP, biggest gap first."""
    gaps = []
    for psp in sorted({entry.psp for entry in report.entries}):
        rows = [entry for entry in report.for_psp(psp) if entry.mean is not None]
        if len(rows) < 2:
            continue
        high = max(rows, key=lambda entry: entry.mean)
        low = min(rows, key=lambda entry: entry.mean)
        gaps.append({
            "psp": psp,
            "band_hz": high.band_hz,
            "psc_pair": [high.psc_a, high.psc_b],
            "gap": high.mean - low.mean,
            "high_class": high.class_name,
            "low_class": low.class_name,
        })
    return sorted(gaps, key=lambda row: row["gap"], reverse=True)


# error bound

@dataclass(frozen=True)
class BoundSample:
    g: float
    s_x: float
    s_y: float
    alpha: float


def _bound(g, s_x, s_y, alpha):
    cos, sin = np.cos(alpha), np.sin(alpha)
    first = abs((g * g - 1.0) * s_x * s_x / 4.0) * (1.0 / cos ** 2 + 1.0 / sin ** 2)
    second = abs((g - 1.0) * s_x * s_y) * np.abs(1.0 / cos - 1.0 / sin)
    return first + second


def error_bound(sample):
    """Upper bound on the amplitude-recovery error when the pair amplitudes differ by g."""
    alpha = sample.alpha
    if math.isclose(alpha, 0.0, abs_tol=1e-12) or math.isclose(alpha, math.pi / 2, abs_tol=1e-12):
        raise SingularityError(f"error bound is singular at alpha={alpha}")
    if not 0 < alpha < math.pi / 2:
        raise ParameterError(f"alpha must lie in (0, pi/2), got {alpha}")
    return float(_bound(sample.g, sample.s_x, sample.s_y, alpha))


@dataclass
class BoundSweep:
    alpha: np.ndarray
    bound: np.ndarray
    argmin: float
    params: dict = field(default_factory=dict)

    def rows(self):
        return zip(self.alpha.tolist(), self.bound.tolist())

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("alpha", "bound"))
            writer.writerows(self.rows())
        return Path(path)


def bound_sweep(g, s_x, s_y, n_grid=1000, lo=0.01, hi=math.pi / 2 - 0.01):
    if n_grid < 10:
        raise ParameterError(f"bound sweep needs at least 10 grid points, got {n_grid}")
    if not 0 < lo < hi < math.pi / 2:
        raise ParameterError(f"sweep range ({lo}, {hi}) must lie inside (0, pi/2)")
    alpha = np.linspace(lo, hi, n_grid)
    bound = _bound(g, s_x, s_y, alpha)
    return BoundSweep(alpha, bound, float(alpha[np.argmin(bound)]), {"g": g, "s_x": s_x, "s_y": s_y})


# spatial filters

@dataclass
class SpatialFilterRecord:
    index: int
    channels: list
    weights: list
    peak_channel: str

    def to_dict(self):
        return asdict(self)


def export_spatial_filters(params, channel_names):
    spatial = params.spatial if isinstance(params, network.PsnetParams) else np.asarray(params)
    if len(channel_names) != spatial.shape[1]:
        raise DimensionError(f"{len(channel_names)} channel names for {spatial.shape[1]} channels")
    names = [str(name) for name in channel_names]
    return [
        SpatialFilterRecord(i, names, [float(w) for w in row], names[int(np.argmax(np.abs(row)))])
        for i, row in enumerate(spatial)
    ]


def write_filters_json(records, path):
    Path(path).write_text(json.dumps([record.to_dict() for record in records], indent=2))
    return Path(path)


def write_filters_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("filter", "channel", "weight", "is_peak"))
        for record in records:
            for name, weight in zip(record.channels, record.weights):
                writer.writerow((record.index, name, repr(weight), int(name == record.peak_channel)))
    return Path(path)


def import_spatial_filters(source):
    """Rebuild the (F1, C) spatial matrix from exported records or their JSON file."""
    if isinstance(source, (str, Path)):
        source = json.loads(Path(source).read_text())
    rows = [record.to_dict() if isinstance(record, SpatialFilterRecord) else record for record in source]
    rows = sorted(rows, key=lambda row: row["index"])
    return np.array([row["weights"] for row in rows], dtype=np.float64)


# synthetic ground truth

def oracle_spatial_filters(truth, hp):
    """
    Source-selecting spatial rows from the synthetic mixing matrix.

    PSC pair q gets the pseudo-inverse rows of the q-th distinct locked pair,
    cycling when there are more pairs of PSCs than locked pairs.
    """
    unmix = np.linalg.pinv(truth.mixing_matrix)
    if unmix.shape[1] != hp.n_channels:
        raise DimensionError(f"mixing matrix has {unmix.shape[1]} channels, network expects {hp.n_channels}")
    pairs = list(dict.fromkeys(tuple(pair) for pair in truth.locked_pairs))
    rows = []
    for q in range(hp.n_spatial // 2):
        a, b = pairs[q % len(pairs)]
        rows.extend([unmix[a], unmix[b]])
    return np.array(rows)


@typechecked
def locked_pair_plv(ts: TrialSet, truth: SynthGroundTruth, edge_trim: float = DEFAULT_EDGE_TRIM,
                    half_band_hz: float = 2.0) -> dict:
    """
    Per-class PLV of each class's locked source pair.

    Uses the latent sources when the ground truth carries them, otherwise
    unmixes the channels. `other_plv` is the same pair in the other classes.
    """
    sources = truth.sources
    if sources is None:
        sources = np.einsum("sc,nct->nst", np.linalg.pinv(truth.mixing_matrix), ts.trials)
    summary = {}
    for c, name in enumerate(ts.class_names):
        a, b = truth.locked_pairs[c]
        center = truth.center_hz[c]
        pair = dsp.zero_phase_bandpass(sources[:, [a, b]], ts.fs_hz, center - half_band_hz,
                                       center + half_band_hz, numtaps=63)
        phases = dsp.trim_edges(dsp.instantaneous_phase(pair), edge_trim)
        values = np.asarray(dsp.plv(phases[:, 0], phases[:, 1]))
        mine = ts.labels == c
        summary[name] = {
            "pair": [int(a), int(b)],
            "center_hz": float(center),
            "locked_plv": float(values[mine].mean()),
            "other_plv": float(values[~mine].mean()) if np.any(~mine) else None,
        }
    return summary

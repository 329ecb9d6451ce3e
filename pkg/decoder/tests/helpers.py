import numpy as np

from decoder.dataio import SynthConfig
from decoder.network import Hyperparams

FD_STEP = 1e-5


def numeric_grad(f, x, indices=None, h=FD_STEP):
    """Central differences of scalar f() w.r.t. array x, perturbed in place."""
    grad = np.zeros_like(x)
    indices = list(np.ndindex(x.shape)) if indices is None else indices
    for index in indices:
        saved = x[index]
        x[index] = saved + h
        up = f()
        x[index] = saved - h
        down = f()
        x[index] = saved
        grad[index] = (up - down) / (2 * h)
    return grad


def sample_indices(shape, rng, limit=12):
    every = list(np.ndindex(shape))
    if len(every) <= limit:
        return every
    return [every[i] for i in rng.choice(len(every), limit, replace=False)]


def rel_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def tiny_hyperparams(**overrides):
    """C=3, F1=4, F2=2, F3=3, T=40, L=9 network used by the gradient suite."""
    base = dict(n_channels=3, n_spatial=4, n_bands=2, n_classes=3, fir_length=9, shifter_length=5,
                n_samples=40, fs_hz=100.0, batch_size=4, epochs=5)
    return Hyperparams(**{**base, **overrides})


def small_synth(**overrides):
    return SynthConfig(**{"n_trials_per_class": 20, "seed": 7, **overrides})


def synthetic_hyperparams(ts, **overrides):
    """Four 7-19 Hz bands matched to the default synthetic classes."""
    base = dict(n_spatial=4, n_bands=4, first_center_hz=7.0, center_step_hz=4.0, fir_length=51,
                learning_rate=5e-3, epochs=80, batch_size=16)
    return Hyperparams.for_trialset(ts, **{**base, **overrides})

"""
The phase-synchrony network and its phase-shifter variant.

Data flow for a batch x of shape (B, C, T):

    S^S = spatial @ x                             (B, F1, T)
    S^P = S^S, odd PSCs shifted when enabled      (B, F1, T)
    S   = BN(fir bank * S^P)                      (B, F2, F1, N_c)
    P   = adjacent PSC pairs of each band         (B, N_p, 2, N_c)
    B   = (transcoder . P)**2, interleaved        (B, 2 N_p, N_c)
    A   = sqrt(B_odd + B_even + eps)              (B, N_p, N_c)
    Y   = classifier @ A                          (B, F3, N_c)

The FIR bank is fixed; every other block is trained. backward() walks the
same chain in reverse using the kernels' backward functions.
"""
import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import dsp
from .dataio import get_preset, read_container, write_container
from .exceptions import ConfigurationError, ContractError, DimensionError, FormatError, LabelError
from .kernels import (
    BN_EPS,
    BN_MOMENTUM,
    INFER,
    INSTANCE,
    SAME,
    SQRT_EPS,
    TRAIN,
    BatchNormState,
    as_tensor,
    batch_norm,
    batch_norm_backward,
    conv1d,
    conv1d_backward,
    filter_bank,
    filter_bank_backward,
    matmul,
    matmul_backward,
    softmax_cross_entropy,
    sqrt_eps,
    sqrt_eps_backward,
    square,
    square_backward,
)

logger = logging.getLogger(__name__)

BN_AFTER_FIR = "fir"
BN_AFTER_SPATIAL = "spatial"

CHECKPOINT_MAGIC = b"PSNB1\n"

TRANSCODER_JITTER = 0.05


@dataclass(frozen=True)
class Hyperparams:
    n_channels: int = 22
    n_spatial: int = 16
    n_bands: int = 15
    n_classes: int = 4
    fir_length: int = 51
    shifter_length: int = 51
    n_samples: int = 250
    fs_hz: float = 250.0
    use_phase_shifter: bool = False
    sqrt_eps: float = SQRT_EPS
    learning_rate: float = 1e-3
    epochs: int = 800
    batch_size: int = 32
    fir_bandwidth_hz: float = dsp.DEFAULT_BANDWIDTH_HZ
    fir_window: str = dsp.DEFAULT_WINDOW
    first_center_hz: float = dsp.FIRST_CENTER_HZ
    center_step_hz: float = dsp.CENTER_STEP_HZ
    bn_position: str = BN_AFTER_FIR
    bn_momentum: float = BN_MOMENTUM
    bn_eps: float = BN_EPS

    def __post_init__(self):
        errors = []
        if self.n_spatial < 2 or self.n_spatial % 2:
            errors.append(f"F1 must be even and >= 2, got {self.n_spatial}")
        if self.fir_length < 1 or self.fir_length % 2 == 0:
            errors.append(f"L must be odd, got {self.fir_length}")
        if self.shifter_length < 1 or self.shifter_length % 2 == 0:
            errors.append(f"L_sp must be odd, got {self.shifter_length}")
        if self.n_samples < self.fir_length:
            errors.append(f"T={self.n_samples} must be >= L={self.fir_length}")
        if self.n_channels < 1 or self.n_bands < 1 or self.n_classes < 2:
            errors.append("need C >= 1, F2 >= 1 and F3 >= 2")
        if self.bn_position not in (BN_AFTER_FIR, BN_AFTER_SPATIAL):
            errors.append(f"bn_position must be '{BN_AFTER_FIR}' or '{BN_AFTER_SPATIAL}'")
        if self.batch_size < 2:
            errors.append("batch_size must be >= 2 for batch normalization")
        if self.epochs < 0 or self.learning_rate <= 0:
            errors.append("epochs >= 0 and learning_rate > 0 required")
        if not self.sqrt_eps > 0:
            errors.append(f"sqrt_eps must be positive, got {self.sqrt_eps}")
        top_edge = self.first_center_hz + self.center_step_hz * (self.n_bands - 1) + self.fir_bandwidth_hz / 2
        if self.first_center_hz - self.fir_bandwidth_hz / 2 <= 0 or top_edge >= self.fs_hz / 2:
            errors.append(f"filter bank edges must stay inside (0, {self.fs_hz / 2:g}) Hz")
        if errors:
            raise ConfigurationError("; ".join(errors))

    @property
    def n_c(self):
        return self.n_samples - self.fir_length + 1

    @property
    def n_p(self):
        return self.n_spatial // 2 * self.n_bands

    @property
    def bn_channels(self):
        return self.n_bands * self.n_spatial if self.bn_position == BN_AFTER_FIR else self.n_spatial

    def band_centers(self):
        return dsp.filter_bank_centers(self.n_bands, self.first_center_hz, self.center_step_hz)

    def replace(self, **changes):
        return Hyperparams(**{**asdict(self), **changes})

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        return cls(**{key: value for key, value in data.items() if key in known})

    @classmethod
    def for_preset(cls, name, **overrides):
        preset = get_preset(name)
        base = {
            "n_channels": preset.n_channels,
            "fir_length": preset.fir_length,
            "shifter_length": preset.shifter_length,
            "n_samples": int(round((preset.crop_s[1] - preset.crop_s[0]) * preset.fs_hz)),
            "fs_hz": preset.fs_hz,
            "n_classes": len(preset.class_names),
        }
        return cls(**{**base, **overrides})

    @classmethod
    def for_trialset(cls, ts, **overrides):
        base = {"n_channels": ts.n_channels, "n_samples": ts.n_samples,
                "fs_hz": ts.fs_hz, "n_classes": ts.n_classes}
        return cls(**{**overrides, **base})


def pair_index(hp, p):
    """PSP p -> (band, (PSC 2q, PSC 2q+1)) with p = band * F1/2 + q."""
    if not 0 <= p < hp.n_p:
        raise LabelError(f"PSP index {p} outside [0, {hp.n_p})")
    band, q = divmod(int(p), hp.n_spatial // 2)
    return band, (2 * q, 2 * q + 1)


def psp_index(hp, band, q):
    if not (0 <= band < hp.n_bands and 0 <= q < hp.n_spatial // 2):
        raise LabelError(f"(band {band}, pair {q}) outside the PSP grid")
    return band * (hp.n_spatial // 2) + q


def pat_coefficients(delta_theta):
    """Ideal transcoder rows for a constant phase offset: A = |rows . (s_x, s_y)|."""
    half = delta_theta / 2
    c = 1.0 / (2.0 * math.cos(half))
    s = 1.0 / (2.0 * math.sin(half))
    return np.array([[c, c], [s, -s]])


@dataclass
class PsnetParams:
    spatial: np.ndarray
    fir: np.ndarray
    transcoder: np.ndarray
    classifier: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_state: BatchNormState
    shifter: np.ndarray | None = None
    version: int = 0

    TRAINABLE = ("spatial", "shifter", "transcoder", "classifier", "bn_gamma", "bn_beta")

    def trainable(self):
        return {name: getattr(self, name) for name in self.TRAINABLE if getattr(self, name) is not None}

    def blocks(self):
        """Every parameter array in checkpoint order."""
        out = {"spatial": self.spatial, "fir": self.fir}
        if self.shifter is not None:
            out["shifter"] = self.shifter
        out.update(
            transcoder=self.transcoder,
            classifier=self.classifier,
            bn_gamma=self.bn_gamma,
            bn_beta=self.bn_beta,
            bn_running_mean=self.bn_state.running_mean,
            bn_running_var=self.bn_state.running_var,
        )
        return out

    def copy(self):
        return PsnetParams(
            self.spatial.copy(), self.fir.copy(), self.transcoder.copy(), self.classifier.copy(),
            self.bn_gamma.copy(), self.bn_beta.copy(), self.bn_state.copy(),
            None if self.shifter is None else self.shifter.copy(), self.version,
        )


def init_params(hp, seed):
    rng = np.random.default_rng(seed)
    bound = math.sqrt(6.0 / (hp.n_channels + hp.n_spatial))
    spatial = rng.uniform(-bound, bound, (hp.n_spatial, hp.n_channels))
    transcoder = pat_coefficients(math.pi / 2)[None] + rng.uniform(
        -TRANSCODER_JITTER, TRANSCODER_JITTER, (hp.n_p, 2, 2)
    )
    bound = math.sqrt(6.0 / (hp.n_classes + hp.n_p))
    classifier = rng.uniform(-bound, bound, (hp.n_classes, hp.n_p))

    fir = dsp.design_filter_bank(
        hp.n_bands, hp.fir_length, hp.fs_hz, hp.fir_bandwidth_hz, hp.fir_window,
        hp.first_center_hz, hp.center_step_hz,
    )
    shifter = None
    if hp.use_phase_shifter:
        # delta at the centre tap: S^P == S^S before training
        shifter = np.zeros((hp.n_spatial // 2, hp.shifter_length))
        shifter[:, (hp.shifter_length - 1) // 2] = 1.0

    return PsnetParams(
        spatial=spatial,
        fir=fir,
        transcoder=transcoder,
        classifier=classifier,
        bn_gamma=np.ones(hp.bn_channels),
        bn_beta=np.zeros(hp.bn_channels),
        bn_state=BatchNormState.fresh(hp.bn_channels, hp.bn_momentum, hp.bn_eps),
        shifter=shifter,
    )


@dataclass
class ForwardCache:
    """
    Every intermediate of one forward pass, each with a leading trial axis:
    ss (B, F1, T), ss_norm (B, F1, T), sp (B, F1, T), s (B, F2, F1, N_c),
    p (B, N_p, 2, N_c), b (B, 2 N_p, N_c), a (B, N_p, N_c), y (B, F3, N_c).

    ss is always spatial . x. ss_norm is what the shifter sees: ss after batch
    norm when BN follows SpatialConv, otherwise ss itself.
    """
    x: np.ndarray
    ss: np.ndarray
    ss_norm: np.ndarray
    sp: np.ndarray
    s: np.ndarray
    p: np.ndarray
    z: np.ndarray
    b: np.ndarray
    a: np.ndarray
    y: np.ndarray
    bn_cache: object
    mode: str
    params_version: int
    params_token: int


def transcode(transcoder, p, eps=SQRT_EPS):
    """
    Phase-to-amplitude transcoding of paired components p (..., N_p, 2, N_c).

    Returns (z, z**2, A): the 2x2 transcoder outputs, their squares and the
    amplitude rows A = sqrt(z0**2 + z1**2 + eps).
    """
    z = np.einsum("pkj,...pjn->...pkn", transcoder, p)
    b = square(z)
    return z, b, sqrt_eps(b[..., 0, :] + b[..., 1, :], eps)


def _as_batch(hp, x):
    x = as_tensor(x)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (hp.n_channels, hp.n_samples):
        raise DimensionError(f"expected input (C={hp.n_channels}, T={hp.n_samples}), got {x.shape}")
    return x


def forward(params, hp, x, mode=TRAIN):
    """
    Run the network on x (C, T) or a batch (B, C, T).

    mode is train (batch statistics, running stats updated), infer (running
    statistics) or instance (each trial's own statistics).
    """
    x = _as_batch(hp, x)
    n_batch = x.shape[0]

    ss = matmul(params.spatial, x)
    ss_norm = ss
    bn_cache = None
    if hp.bn_position == BN_AFTER_SPATIAL:
        ss_norm, bn_cache = batch_norm(ss, params.bn_gamma, params.bn_beta, params.bn_state, mode)

    sp = ss_norm
    if hp.use_phase_shifter and params.shifter is not None:
        sp = ss_norm.copy()
        sp[:, 1::2] = conv1d(ss_norm[:, 1::2], params.shifter, SAME)

    s = filter_bank(sp, params.fir).transpose(0, 2, 1, 3).reshape(n_batch, hp.n_bands * hp.n_spatial, hp.n_c)
    if hp.bn_position == BN_AFTER_FIR:
        s, bn_cache = batch_norm(s, params.bn_gamma, params.bn_beta, params.bn_state, mode)

    p = s.reshape(n_batch, hp.n_p, 2, hp.n_c)
    z, b, a = transcode(params.transcoder, p, hp.sqrt_eps)
    b = b.reshape(n_batch, 2 * hp.n_p, hp.n_c)
    y = matmul(params.classifier, a)

    return ForwardCache(
        x=x, ss=ss, ss_norm=ss_norm, sp=sp, s=s.reshape(n_batch, hp.n_bands, hp.n_spatial, hp.n_c),
        p=p, z=z, b=b, a=a, y=y,
        bn_cache=bn_cache, mode=mode, params_version=params.version, params_token=id(params),
    )


def _labels(cache, label):
    return np.broadcast_to(np.asarray(label), (cache.y.shape[0],))


def loss_per_trial(cache, label):
    """Mean per-column cross-entropy of each trial, shape (B,)."""
    ce, _ = softmax_cross_entropy(np.moveaxis(cache.y, 1, 0), _labels(cache, label)[:, None])
    return ce.mean(axis=-1)


def loss(cache, label):
    """Average of the N_c per-column cross-entropies (and over trials of a batch)."""
    return float(loss_per_trial(cache, label).mean())


def backward(params, hp, cache, label):
    """
    Gradients of loss(cache, label) for every trainable block.

    The fir block never appears in the result.
    """
    if cache.mode != TRAIN:
        raise ContractError(f"backward needs a train-mode cache, got {cache.mode!r}")
    if cache.params_token != id(params) or cache.params_version != params.version:
        raise ContractError("stale cache: parameters changed since the forward pass")

    n_batch, n_samples = cache.x.shape[0], hp.n_samples
    labels = _labels(cache, label)
    _, dlogits = softmax_cross_entropy(np.moveaxis(cache.y, 1, 0), labels[:, None])
    dy = np.moveaxis(dlogits, 0, 1) / (n_batch * hp.n_c)

    grads = {}
    grads["classifier"], da = matmul_backward(params.classifier, cache.a, dy)
    dsum = sqrt_eps_backward(cache.b[:, 0::2] + cache.b[:, 1::2], da, hp.sqrt_eps)
    dz = square_backward(cache.z, dsum[:, :, None, :])
    grads["transcoder"] = np.einsum("bpkn,bpjn->pkj", dz, cache.p)
    ds = np.einsum("pkj,bpkn->bpjn", params.transcoder, dz).reshape(n_batch, hp.n_bands * hp.n_spatial, hp.n_c)

    if hp.bn_position == BN_AFTER_FIR:
        ds, grads["bn_gamma"], grads["bn_beta"] = batch_norm_backward(cache.bn_cache, params.bn_gamma, ds)
    ds = ds.reshape(n_batch, hp.n_bands, hp.n_spatial, hp.n_c).transpose(0, 2, 1, 3)
    dsp_grad = filter_bank_backward(params.fir, ds, n_samples)

    dss = dsp_grad
    if hp.use_phase_shifter and params.shifter is not None:
        dss = dsp_grad.copy()
        dss[:, 1::2], grads["shifter"] = conv1d_backward(
            cache.ss_norm[:, 1::2], params.shifter, dsp_grad[:, 1::2], SAME
        )
    if hp.bn_position == BN_AFTER_SPATIAL:
        dss, grads["bn_gamma"], grads["bn_beta"] = batch_norm_backward(cache.bn_cache, params.bn_gamma, dss)

    grads["spatial"], _ = matmul_backward(params.spatial, cache.x, dss)
    return grads


def vote(y):
    """
    Majority vote over the columns of soft labels y (F3, N) or (B, F3, N).

    Column argmax ties and vote-count ties both go to the lowest class.
    """
    y = as_tensor(y)
    n_classes = y.shape[-2]
    winners = np.argmax(y, axis=-2)
    counts = (winners[..., None, :] == np.arange(n_classes)[:, None]).sum(axis=-1)
    decision = np.argmax(counts, axis=-1)
    return int(decision) if decision.ndim == 0 else decision


def predict(params, hp, x, mode=INFER):
    """Class index for x (C, T), or an array of indices for a batch (B, C, T)."""
    single = np.ndim(x) == 2
    decision = vote(forward(params, hp, x, mode).y)
    return int(decision[0]) if single else decision


def check_phaser_equivalence(hp, seed, x, tol=1e-12):
    """Fresh shifter-enabled and shifter-disabled models must agree on x."""
    with_shifter = hp.replace(use_phase_shifter=True)
    without = hp.replace(use_phase_shifter=False)
    y_shift = forward(init_params(with_shifter, seed), with_shifter, x, INFER).y
    y_plain = forward(init_params(without, seed), without, x, INFER).y
    gap = float(np.max(np.abs(y_shift - y_plain)))
    if gap > tol:
        raise ContractError(f"delta-initialized shifter changed the output by {gap:g}")
    logger.info("phase shifter initial equivalence holds (max deviation %.3g)", gap)
    return gap


# checkpoints

@dataclass
class Checkpoint:
    params: PsnetParams
    hyperparams: Hyperparams
    seed: int
    epoch: int
    header: dict


def save_checkpoint(path, params, hp, seed, epoch, extra=None):
    blocks = params.blocks()
    header = {
        "version": "1.0",
        "hyperparams": hp.to_dict(),
        "seed": int(seed),
        "epoch": int(epoch),
        "bn_updates": int(params.bn_state.n_updates),
        "blocks": [{"name": name, "shape": list(block.shape)} for name, block in blocks.items()],
    }
    if extra:
        header["extra"] = extra
    payload = b"".join(np.ascontiguousarray(block, dtype="<f8").tobytes() for block in blocks.values())
    return write_container(path, CHECKPOINT_MAGIC, header, payload)


def load_checkpoint(path):
    header, payload, offset = read_container(path, CHECKPOINT_MAGIC, ("version", "hyperparams", "blocks"))
    hp = Hyperparams.from_dict(header["hyperparams"])
    expected = sum(math.prod(block["shape"]) for block in header["blocks"]) * 8
    if len(payload) != expected:
        raise FormatError(f"blocks declare {expected} bytes, payload has {len(payload)}", offset=offset)

    arrays, cursor = {}, 0
    for block in header["blocks"]:
        size = math.prod(block["shape"]) * 8
        arrays[block["name"]] = np.frombuffer(payload[cursor:cursor + size], dtype="<f8").reshape(
            block["shape"]).astype(np.float64)
        cursor += size

    state = BatchNormState(arrays["bn_running_mean"], arrays["bn_running_var"],
                           hp.bn_momentum, hp.bn_eps, int(header.get("bn_updates", 0)))
    params = PsnetParams(
        spatial=arrays["spatial"], fir=arrays["fir"], transcoder=arrays["transcoder"],
        classifier=arrays["classifier"], bn_gamma=arrays["bn_gamma"], bn_beta=arrays["bn_beta"],
        bn_state=state, shifter=arrays.get("shifter"),
    )
    return Checkpoint(params, hp, int(header.get("seed", 0)), int(header.get("epoch", 0)), header)


__all__ = [
    "BN_AFTER_FIR", "BN_AFTER_SPATIAL", "Checkpoint", "ForwardCache", "Hyperparams", "INFER", "INSTANCE",
    "PsnetParams", "TRAIN", "backward", "check_phaser_equivalence", "forward", "init_params", "load_checkpoint",
    "loss", "loss_per_trial", "pair_index", "pat_coefficients", "predict", "psp_index", "save_checkpoint",
    "transcode", "vote",
]

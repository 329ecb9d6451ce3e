"""
Resolved run configuration shared by the management commands.

A run is configured by an optional JSON file plus command-line flags; flags
win. The merged result is validated by RunConfigSerializer and written
verbatim as config.json next to the outputs.
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from django.conf import settings
from rest_framework import serializers

from .dataio import SynthConfig, get_preset
from .exceptions import ConfigurationError
from .network import Hyperparams
from .serializers import RunConfigSerializer
from .trainer import CvProtocol

CONFIG_FILENAME = "config.json"

# flag name -> (section or None for top level, key)
FLAG_TARGETS = {
    "seed": (None, "seed"),
    "dataset": (None, "dataset"),
    "test_dataset": (None, "test_dataset"),
    "checkpoint": (None, "checkpoint"),
    "input": (None, "input"),
    "out": (None, "out"),
    "preset": (None, "preset"),
    "protocol": (None, "protocol"),
    "reference_mode": (None, "reference_mode"),
    "edge_trim": (None, "edge_trim"),
    "phaser": ("hyperparams", "use_phase_shifter"),
    "epochs": ("hyperparams", "epochs"),
    "batch": ("hyperparams", "batch_size"),
    "folds": ("cv", "k"),
    "repeats": ("cv", "repeats"),
}


def _plain(value):
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    dataset: str | None = None
    test_dataset: str | None = None
    test_fraction: float = 0.25
    checkpoint: str | None = None
    input: str | None = None
    out: str | None = None
    preset: str | None = None
    protocol: str = "cv"
    reference_mode: bool = False
    edge_trim: float = 0.1
    log_every: int = 50
    bound: dict = field(default_factory=dict)
    hyperparams: dict = field(default_factory=dict)
    cv: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)

    def out_dir(self):
        path = Path(self.out) if self.out else Path(settings.PSYNET_OUTPUT_ROOT) / self.command
        path.mkdir(parents=True, exist_ok=True)
        return path

    def build_hyperparams(self, ts):
        """Network settings for dataset `ts`: preset values, then file/flag values, then the data shape."""
        base = {}
        if self.preset:
            preset = Hyperparams.for_preset(self.preset)
            base = {"fir_length": preset.fir_length, "shifter_length": preset.shifter_length}
        return Hyperparams.for_trialset(ts, **{**base, **self.hyperparams})

    def build_cv(self):
        base = {"seed": self.seed}
        if self.preset:
            preset = get_preset(self.preset)
            base.update(k=preset.folds, repeats=preset.repeats)
        return CvProtocol(**{**base, **self.cv})

    def build_synth(self):
        return SynthConfig(**{"seed": self.seed, **self.synth})

    def to_dict(self):
        return _plain(asdict(self))

    def write(self, out_dir=None):
        path = Path(out_dir or self.out_dir()) / CONFIG_FILENAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path


def resolve(command, config_path=None, **flags):
    """
    Merge the config file at `config_path` with command-line `flags`.

    Flags left at None do not override anything. Raises ConfigurationError
    when the file is unreadable or the merged config does not validate.
    """
    data = {}
    if config_path:
        try:
            data = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"cannot read config file {config_path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigurationError(f"config file {config_path} must hold a JSON object")

    for flag, value in flags.items():
        if value is None:
            continue
        if flag not in FLAG_TARGETS:
            raise ConfigurationError(f"unknown flag {flag!r}")
        section, key = FLAG_TARGETS[flag]
        target = data.setdefault(section, {}) if section else data
        target[key] = value

    data["command"] = command
    serializer = RunConfigSerializer(data=data)
    try:
        serializer.is_valid(raise_exception=True)
    except serializers.ValidationError as e:
        raise ConfigurationError(f"invalid run configuration: {e.detail}") from e
    return RunConfig(**_plain(dict(serializer.validated_data)))

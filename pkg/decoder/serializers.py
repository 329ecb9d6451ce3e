from rest_framework import serializers

from .dataio import PRESETS, SynthConfig
from .exceptions import PsynetError
from .models import Dataset, FoldResult, TrainingRun
from .network import BN_AFTER_FIR, BN_AFTER_SPATIAL
from .trainer import RECORD_RULES, CvProtocol

COMMANDS = ("synth", "train", "analyze", "export", "convert")


class DomainValidationMixin:
    """Turns pipeline errors raised while building a config object into DRF validation errors."""

    def _build(self, factory, data):
        try:
            return factory(**data)
        except PsynetError as e:
            raise serializers.ValidationError(str(e))


# run configuration

class HyperparamsSerializer(serializers.Serializer):
    """Partial network settings; whatever is missing comes from the preset or the dataset."""
    n_channels = serializers.IntegerField(min_value=1, required=False)
    n_spatial = serializers.IntegerField(min_value=2, required=False)
    n_bands = serializers.IntegerField(min_value=1, required=False)
    n_classes = serializers.IntegerField(min_value=2, required=False)
    fir_length = serializers.IntegerField(min_value=1, required=False)
    shifter_length = serializers.IntegerField(min_value=1, required=False)
    n_samples = serializers.IntegerField(min_value=1, required=False)
    fs_hz = serializers.FloatField(min_value=1.0, required=False)
    use_phase_shifter = serializers.BooleanField(required=False)
    sqrt_eps = serializers.FloatField(min_value=0.0, required=False)
    learning_rate = serializers.FloatField(min_value=0.0, required=False)
    epochs = serializers.IntegerField(min_value=0, required=False)
    batch_size = serializers.IntegerField(min_value=2, required=False)
    fir_bandwidth_hz = serializers.FloatField(min_value=0.0, required=False)
    fir_window = serializers.CharField(required=False)
    first_center_hz = serializers.FloatField(min_value=0.0, required=False)
    center_step_hz = serializers.FloatField(min_value=0.0, required=False)
    bn_position = serializers.ChoiceField(choices=[BN_AFTER_FIR, BN_AFTER_SPATIAL], required=False)
    bn_momentum = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    bn_eps = serializers.FloatField(min_value=0.0, required=False)

    def validate(self, data):
        if data.get("n_spatial", 2) % 2:
            raise serializers.ValidationError({"n_spatial": "The number of spatial filters must be even."})
        for name in ("fir_length", "shifter_length"):
            if name in data and data[name] % 2 == 0:
                raise serializers.ValidationError({name: "Kernel lengths must be odd."})
        if data.get("sqrt_eps", 1.0) <= 0:
            raise serializers.ValidationError({"sqrt_eps": "The amplitude epsilon must be positive."})
        return data


class CvProtocolSerializer(DomainValidationMixin, serializers.Serializer):
    k = serializers.IntegerField(min_value=2, required=False)
    repeats = serializers.IntegerField(min_value=1, required=False)
    seed = serializers.IntegerField(min_value=0, required=False)
    stratified = serializers.BooleanField(required=False)
    record_rule = serializers.ChoiceField(choices=RECORD_RULES, required=False)

    def validate(self, data):
        self._build(CvProtocol, data)
        return data


class SynthConfigSerializer(DomainValidationMixin, serializers.Serializer):
    n_trials_per_class = serializers.IntegerField(min_value=1, required=False)
    n_sources = serializers.IntegerField(min_value=2, required=False)
    n_channels = serializers.IntegerField(min_value=2, required=False)
    fs_hz = serializers.FloatField(min_value=1.0, required=False)
    duration_s = serializers.FloatField(min_value=0.0, required=False)
    center_hz = serializers.ListField(child=serializers.FloatField(min_value=0.0), min_length=2, required=False)
    delta_theta = serializers.ListField(child=serializers.FloatField(), min_length=2, required=False)
    rician_nu = serializers.FloatField(min_value=0.0, required=False)
    rician_sigma = serializers.FloatField(min_value=0.0, required=False)
    snr_db = serializers.FloatField(required=False)
    background_rms = serializers.FloatField(min_value=0.0, required=False)
    jitter_hz = serializers.FloatField(min_value=0.0, required=False)
    seed = serializers.IntegerField(min_value=0, required=False)
    class_names = serializers.ListField(child=serializers.CharField(), min_length=2, required=False)

    def validate(self, data):
        self._build(SynthConfig, data)
        return data


class RunConfigSerializer(serializers.Serializer):
    command = serializers.ChoiceField(choices=COMMANDS)
    seed = serializers.IntegerField(min_value=0, default=0)
    dataset = serializers.CharField(required=False, allow_null=True)
    test_dataset = serializers.CharField(required=False, allow_null=True)
    test_fraction = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.25)
    checkpoint = serializers.CharField(required=False, allow_null=True)
    input = serializers.CharField(required=False, allow_null=True)
    out = serializers.CharField(required=False, allow_null=True)
    preset = serializers.ChoiceField(choices=sorted(PRESETS), required=False, allow_null=True)
    protocol = serializers.ChoiceField(choices=["cv", "holdout"], default="cv")
    reference_mode = serializers.BooleanField(default=False)
    edge_trim = serializers.FloatField(min_value=0.0, max_value=0.49, default=0.1)
    log_every = serializers.IntegerField(min_value=0, default=50)
    bound = serializers.DictField(child=serializers.FloatField(), required=False)
    hyperparams = HyperparamsSerializer(required=False)
    cv = CvProtocolSerializer(required=False)
    synth = SynthConfigSerializer(required=False)

    def validate(self, data):
        command = data["command"]
        if command in ("train", "analyze") and not data.get("dataset"):
            raise serializers.ValidationError({"dataset": f"The {command} command needs a dataset."})
        if command in ("analyze", "export") and not data.get("checkpoint"):
            raise serializers.ValidationError({"checkpoint": f"The {command} command needs a checkpoint."})
        if command == "convert" and not (data.get("input") and data.get("preset")):
            raise serializers.ValidationError("The convert command needs an input file and a preset.")
        if command == "train" and data["protocol"] == "holdout" and not data.get("test_dataset"):
            if not 0.0 < data["test_fraction"] < 1.0:
                raise serializers.ValidationError({"test_fraction": "Holdout needs a fraction in (0, 1)."})
        return data


# output schemas

class FoldReportSerializer(serializers.Serializer):
    repeat = serializers.IntegerField(min_value=0)
    fold = serializers.IntegerField(min_value=0)
    accuracy = serializers.FloatField(min_value=0.0, max_value=1.0)
    final_loss = serializers.FloatField(allow_null=True)
    train_size = serializers.IntegerField(min_value=1)
    test_size = serializers.IntegerField(min_value=1)
    test_indices = serializers.ListField(child=serializers.IntegerField(min_value=0))
    losses = serializers.ListField(child=serializers.FloatField())


class RunReportSerializer(serializers.Serializer):
    protocol = serializers.ChoiceField(choices=["cv", "holdout"])
    n_trials = serializers.IntegerField(min_value=1)
    record_rule = serializers.ChoiceField(choices=RECORD_RULES)
    repeat_accuracies = serializers.ListField(child=serializers.FloatField(min_value=0.0, max_value=1.0))
    max_accuracy = serializers.FloatField(min_value=0.0, max_value=1.0)
    mean_accuracy = serializers.FloatField(min_value=0.0, max_value=1.0)
    recorded_accuracy = serializers.FloatField(min_value=0.0, max_value=1.0)
    best_fold = serializers.DictField(child=serializers.IntegerField(min_value=0))
    wall_time_s = serializers.FloatField(min_value=0.0)
    warnings = serializers.ListField(child=serializers.CharField())
    folds = FoldReportSerializer(many=True)
    config = serializers.DictField()

    def validate(self, data):
        if data["mean_accuracy"] > data["max_accuracy"] + 1e-12:
            raise serializers.ValidationError("Mean accuracy exceeds the maximum.")
        return data


class PlvEntrySerializer(serializers.Serializer):
    psp = serializers.IntegerField(min_value=0)
    band_hz = serializers.FloatField(min_value=0.0)
    psc_a = serializers.IntegerField(min_value=0)
    psc_b = serializers.IntegerField(min_value=0)
    class_index = serializers.IntegerField(min_value=0)
    class_name = serializers.CharField()
    mean = serializers.FloatField(min_value=0.0, max_value=1.0, allow_null=True)
    q1 = serializers.FloatField(min_value=0.0, max_value=1.0, allow_null=True)
    median = serializers.FloatField(min_value=0.0, max_value=1.0, allow_null=True)
    q3 = serializers.FloatField(min_value=0.0, max_value=1.0, allow_null=True)
    n_trials = serializers.IntegerField(min_value=0)
    n_excluded = serializers.IntegerField(min_value=0)

    def validate(self, data):
        if data["q1"] is not None and not data["q1"] <= data["median"] <= data["q3"]:
            raise serializers.ValidationError("Quartiles are out of order.")
        return data


class PlvReportSerializer(serializers.Serializer):
    edge_trim = serializers.FloatField(min_value=0.0, max_value=0.5)
    quantile_rule = serializers.CharField()
    bn_fallback = serializers.BooleanField()
    n_excluded = serializers.IntegerField(min_value=0)
    class_names = serializers.ListField(child=serializers.CharField(), min_length=2)
    entries = PlvEntrySerializer(many=True)


class SpatialFilterSerializer(serializers.Serializer):
    index = serializers.IntegerField(min_value=0)
    channels = serializers.ListField(child=serializers.CharField(), min_length=1)
    weights = serializers.ListField(child=serializers.FloatField(), min_length=1)
    peak_channel = serializers.CharField()

    def validate(self, data):
        if len(data["channels"]) != len(data["weights"]):
            raise serializers.ValidationError("Every channel needs exactly one weight.")
        if data["peak_channel"] not in data["channels"]:
            raise serializers.ValidationError({"peak_channel": "Peak channel is not one of the channels."})
        return data


def validate_output(serializer_class, payload, many=False):
    """Check `payload` against an output schema; raises DRF ValidationError."""
    serializer = serializer_class(data=payload, many=many)
    serializer.is_valid(raise_exception=True)
    return payload


# run records

class DatasetSerializer(serializers.ModelSerializer):
    class Meta:
        model = Dataset
        fields = ["id", "name", "path", "sha256", "source", "n_trials", "n_channels", "n_samples",
                  "fs_hz", "class_names", "created_at"]


class FoldResultSerializer(serializers.ModelSerializer):
    class Meta:
        model = FoldResult
        fields = ["id", "repeat", "fold", "accuracy", "final_loss", "train_size", "test_size"]


class TrainingRunSerializer(serializers.ModelSerializer):
    dataset_detail = DatasetSerializer(source="dataset", read_only=True)
    fold_count = serializers.IntegerField(read_only=True)

    class Meta:
        model = TrainingRun
        fields = ["id", "dataset", "dataset_detail", "out_dir", "protocol", "phaser", "seed",
                  "record_rule", "max_accuracy", "mean_accuracy", "recorded_accuracy", "wall_time_s",
                  "status", "message", "fold_count", "config", "created_at"]

"""
Run records for the decoder app.

Every dataset the pipeline writes and every training run it performs is
stored here, so results can be compared from the admin or the API long after
the output directories are gone.
"""
import hashlib
import math
import re
from pathlib import Path

from django.core.exceptions import ValidationError
from django.core.validators import MaxValueValidator, MinValueValidator
from django.db import models

ACCURACY_VALIDATORS = [
    MinValueValidator(0.0, message="Accuracy cannot be negative."),
    MaxValueValidator(1.0, message="Accuracy cannot exceed 1."),
]


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


class Dataset(models.Model):
    SOURCES = [
        ("synthetic", "Synthetic"),
        ("converted", "Converted recording"),
        ("imported", "Imported container"),
    ]

    name = models.CharField(max_length=200)
    path = models.CharField(max_length=500, unique=True)
    sha256 = models.CharField(max_length=64)
    source = models.CharField(max_length=20, choices=SOURCES, default="imported")
    n_trials = models.PositiveIntegerField(validators=[MinValueValidator(1)])
    n_channels = models.PositiveIntegerField(validators=[MinValueValidator(2)])
    n_samples = models.PositiveIntegerField(validators=[MinValueValidator(8)])
    fs_hz = models.FloatField(validators=[MinValueValidator(1.0, message="Sampling rate must be positive.")])
    class_names = models.JSONField(default=list)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ["-created_at"]

    def __str__(self):
        return f"{self.name} ({self.n_trials} trials, {self.n_channels} ch @ {self.fs_hz:g} Hz)"

    def clean(self):
        errors = {}
        if not re.fullmatch(r"[0-9a-f]{64}", self.sha256 or ""):
            errors["sha256"] = "Expected a lowercase hex SHA-256 digest."
        if not isinstance(self.class_names, list) or len(self.class_names) < 2:
            errors["class_names"] = "A dataset needs at least two class names."
        if errors:
            raise ValidationError(errors)

    def save(self, *args, **kwargs):
        self.full_clean()
        super().save(*args, **kwargs)

    @classmethod
    def register(cls, path, ts, source="imported", name=None):
        """Create or refresh the record of the container at `path` holding `ts`.

        `source` and `name` only apply when the record is new.
        """
        contents = {
            "sha256": file_sha256(path),
            "n_trials": ts.n_trials,
            "n_channels": ts.n_channels,
            "n_samples": ts.n_samples,
            "fs_hz": ts.fs_hz,
            "class_names": list(ts.class_names),
        }
        dataset, _ = cls.objects.update_or_create(
            path=str(Path(path).resolve()),
            defaults=contents,
            create_defaults={**contents, "source": source, "name": name or Path(path).name},
        )
        return dataset


class TrainingRun(models.Model):
    PROTOCOLS = [("cv", "Cross-validation"), ("holdout", "Holdout")]
    RECORD_RULES = [("max_over_repeats", "Max over repeats"), ("mean", "Mean")]
    STATUSES = [
        ("running", "Running"),
        ("completed", "Completed"),
        ("diverged", "Diverged"),
        ("failed", "Failed"),
    ]

    dataset = models.ForeignKey(Dataset, on_delete=models.SET_NULL, null=True, blank=True, related_name="runs")
    out_dir = models.CharField(max_length=500)
    protocol = models.CharField(max_length=10, choices=PROTOCOLS, default="cv")
    phaser = models.BooleanField(default=False)
    seed = models.PositiveBigIntegerField(default=0)
    config = models.JSONField(default=dict, blank=True)
    record_rule = models.CharField(max_length=20, choices=RECORD_RULES, default="max_over_repeats")
    max_accuracy = models.FloatField(null=True, blank=True, validators=ACCURACY_VALIDATORS)
    mean_accuracy = models.FloatField(null=True, blank=True, validators=ACCURACY_VALIDATORS)
    recorded_accuracy = models.FloatField(null=True, blank=True, validators=ACCURACY_VALIDATORS)
    wall_time_s = models.FloatField(default=0.0, validators=[MinValueValidator(0.0)])
    status = models.CharField(max_length=10, choices=STATUSES, default="running")
    message = models.TextField(blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ["-created_at"]

    def __str__(self):
        kind = "phaser-PSNet" if self.phaser else "PSNet"
        return f"{kind} run #{self.pk} [{self.status}]"

    def fold_count(self):
        return self.folds.count()

    fold_count.short_description = "Folds"

    def clean(self):
        errors = {}
        if self.status == "completed" and self.recorded_accuracy is None:
            errors["recorded_accuracy"] = "A completed run must record an accuracy."
        if (self.max_accuracy is not None and self.mean_accuracy is not None
                and self.mean_accuracy > self.max_accuracy + 1e-12):
            errors["mean_accuracy"] = "Mean accuracy cannot exceed the maximum over repeats."
        if errors:
            raise ValidationError(errors)

    def save(self, *args, **kwargs):
        self.full_clean()
        super().save(*args, **kwargs)

    def complete(self, report):
        """Store the outcome of a trainer RunReport together with its folds."""
        self.max_accuracy = report.max_accuracy
        self.mean_accuracy = report.mean_accuracy
        self.recorded_accuracy = report.recorded_accuracy
        self.record_rule = report.record_rule
        self.wall_time_s = report.wall_time_s
        self.status = "completed"
        self.save()
        FoldResult.objects.bulk_create([
            FoldResult(
                run=self,
                repeat=fold.repeat,
                fold=fold.fold,
                accuracy=fold.accuracy,
                final_loss=None if math.isnan(fold.final_loss) else fold.final_loss,
                train_size=fold.train_size,
                test_size=fold.test_size,
            )
            for fold in report.folds
        ])


class FoldResult(models.Model):
    run = models.ForeignKey(TrainingRun, on_delete=models.CASCADE, related_name="folds")
    repeat = models.PositiveIntegerField()
    fold = models.PositiveIntegerField()
    accuracy = models.FloatField(validators=ACCURACY_VALIDATORS)
    final_loss = models.FloatField(null=True, blank=True)
    train_size = models.PositiveIntegerField()
    test_size = models.PositiveIntegerField(validators=[MinValueValidator(1)])

    class Meta:
        ordering = ["repeat", "fold"]
        constraints = [
            models.UniqueConstraint(fields=["run", "repeat", "fold"], name="unique_fold_per_run"),
        ]

    def __str__(self):
        return f"repeat {self.repeat} fold {self.fold}: {self.accuracy:.3f}"

# Generated by Django 5.1.7 on 2026-10-17 09:12

import django.core.validators
import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='Dataset',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=200)),
                ('path', models.CharField(max_length=500, unique=True)),
                ('sha256', models.CharField(max_length=64)),
                ('source', models.CharField(choices=[('synthetic', 'Synthetic'), ('converted', 'Converted recording'), ('imported', 'Imported container')], default='imported', max_length=20)),
                ('n_trials', models.PositiveIntegerField(validators=[django.core.validators.MinValueValidator(1)])),
                ('n_channels', models.PositiveIntegerField(validators=[django.core.validators.MinValueValidator(2)])),
                ('n_samples', models.PositiveIntegerField(validators=[django.core.validators.MinValueValidator(8)])),
                ('fs_hz', models.FloatField(validators=[django.core.validators.MinValueValidator(1.0, message='Sampling rate must be positive.')])),
                ('class_names', models.JSONField(default=list)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('out_dir', models.CharField(max_length=500)),
                ('protocol', models.CharField(choices=[('cv', 'Cross-validation'), ('holdout', 'Holdout')], default='cv', max_length=10)),
                ('phaser', models.BooleanField(default=False)),
                ('seed', models.PositiveBigIntegerField(default=0)),
                ('config', models.JSONField(blank=True, default=dict)),
                ('record_rule', models.CharField(choices=[('max_over_repeats', 'Max over repeats'), ('mean', 'Mean')], default='max_over_repeats', max_length=20)),
                ('max_accuracy', models.FloatField(blank=True, null=True, validators=[django.core.validators.MinValueValidator(0.0, message='Accuracy cannot be negative.'), django.core.validators.MaxValueValidator(1.0, message='Accuracy cannot exceed 1.')])),
                ('mean_accuracy', models.FloatField(blank=True, null=True, validators=[django.core.validators.MinValueValidator(0.0, message='Accuracy cannot be negative.'), django.core.validators.MaxValueValidator(1.0, message='Accuracy cannot exceed 1.')])),
                ('recorded_accuracy', models.FloatField(blank=True, null=True, validators=[django.core.validators.MinValueValidator(0.0, message='Accuracy cannot be negative.'), django.core.validators.MaxValueValidator(1.0, message='Accuracy cannot exceed 1.')])),
                ('wall_time_s', models.FloatField(default=0.0, validators=[django.core.validators.MinValueValidator(0.0)])),
                ('status', models.CharField(choices=[('running', 'Running'), ('completed', 'Completed'), ('diverged', 'Diverged'), ('failed', 'Failed')], default='running', max_length=10)),
                ('message', models.TextField(blank=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('dataset', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.SET_NULL, related_name='runs', to='decoder.dataset')),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='FoldResult',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('repeat', models.PositiveIntegerField()),
                ('fold', models.PositiveIntegerField()),
                ('accuracy', models.FloatField(validators=[django.core.validators.MinValueValidator(0.0, message='Accuracy cannot be negative.'), django.core.validators.MaxValueValidator(1.0, message='Accuracy cannot exceed 1.')])),
                ('final_loss', models.FloatField(blank=True, null=True)),
                ('train_size', models.PositiveIntegerField()),
                ('test_size', models.PositiveIntegerField(validators=[django.core.validators.MinValueValidator(1)])),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='folds', to='decoder.trainingrun')),
            ],
            options={
                'ordering': ['repeat', 'fold'],
                'constraints': [models.UniqueConstraint(fields=('run', 'repeat', 'fold'), name='unique_fold_per_run')],
            },
        ),
    ]

import csv
import json
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError
from rest_framework import serializers

from decoder import runconfig
from decoder.exceptions import PsynetError


class PipelineCommand(BaseCommand):
    """
    Shared plumbing of the pipeline commands.

    Subclasses declare which flags they accept in `flags` and implement
    run(cfg). Pipeline and validation errors leave as CommandError so the
    process exits non-zero.
    """
    flags = ("seed", "out")

    def add_arguments(self, parser):
        parser.add_argument('--config', help='JSON run configuration; flags override its values')
        if "seed" in self.flags:
            parser.add_argument('--seed', type=int, help='root seed of every random stream')
        if "dataset" in self.flags:
            parser.add_argument('--dataset', help='EEGB1 dataset file')
        if "checkpoint" in self.flags:
            parser.add_argument('--checkpoint', help='PSNB1 checkpoint file')
        if "out" in self.flags:
            parser.add_argument('--out', help='output directory (default: PSYNET_OUTPUT_ROOT/<command>)')
        if "train" in self.flags:
            parser.add_argument('--phaser', action='store_true', default=None,
                                help='enable the phase shifter')
            parser.add_argument('--epochs', type=int)
            parser.add_argument('--folds', type=int)
            parser.add_argument('--repeats', type=int)
            parser.add_argument('--batch', type=int)
            parser.add_argument('--reference-mode', action='store_true', default=None,
                                help='single-threaded, bit-reproducible run')
            parser.add_argument('--protocol', choices=['cv', 'holdout'])
            parser.add_argument('--test-dataset', help='separate test set for the holdout protocol')
        if "preset" in self.flags:
            parser.add_argument('--preset', help='dataset preset (bciciv2a or mmidb)')

    def handle(self, *args, **options):
        flags = {
            name: options.get(name)
            for name in runconfig.FLAG_TARGETS
            if name in options
        }
        try:
            cfg = runconfig.resolve(self.command_name, options.get('config'), **flags)
            self.run(cfg)
        except (PsynetError, serializers.ValidationError, OSError) as e:
            raise CommandError(f"{self.command_name} failed: {e}") from e

    def run(self, cfg):
        raise NotImplementedError

    @property
    def command_name(self):
        return self.__module__.rsplit('.', 1)[-1]

    # output helpers

    def write_json(self, path, payload):
        Path(path).write_text(json.dumps(payload, indent=2))
        return Path(path)

    def write_rows(self, path, header, rows):
        with open(path, 'w', newline='') as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        return Path(path)

    def success(self, message):
        self.stdout.write(self.style.SUCCESS(message))

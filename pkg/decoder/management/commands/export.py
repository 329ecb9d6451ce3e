from decoder import analysis
from decoder.dataio import load_trialset
from decoder.exceptions import DimensionError
from decoder.network import load_checkpoint
from decoder.serializers import SpatialFilterSerializer, validate_output

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = "Export the learned spatial filters of a checkpoint as JSON and CSV."
    flags = ("checkpoint", "dataset", "out")

    def run(self, cfg):
        out = cfg.out_dir()
        checkpoint = load_checkpoint(cfg.checkpoint)
        n_channels = checkpoint.hyperparams.n_channels
        if cfg.dataset:
            names = load_trialset(cfg.dataset).channel_labels()
            if len(names) != n_channels:
                raise DimensionError(f"dataset has {len(names)} channels, checkpoint has {n_channels}")
        else:
            names = [f"ch{i}" for i in range(n_channels)]
        cfg.write(out)

        records = analysis.export_spatial_filters(checkpoint.params, names)
        validate_output(SpatialFilterSerializer, [r.to_dict() for r in records], many=True)
        analysis.write_filters_json(records, out / "filters.json")
        analysis.write_filters_csv(records, out / "filters.csv")
        for record in records:
            self.stdout.write(f"  filter {record.index:>2}: peak at {record.peak_channel}")
        self.success(f"{len(records)} spatial filters written to {out}")

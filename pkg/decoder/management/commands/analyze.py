from decoder import analysis
from decoder.dataio import load_trialset
from decoder.exceptions import ContractError
from decoder.network import load_checkpoint
from decoder.serializers import PlvReportSerializer, SpatialFilterSerializer, validate_output

from ._base import PipelineCommand

# amplitude ratio and sample values of the default error-bound sweep
DEFAULT_BOUND = {"g": 1.5, "s_x": 0.7, "s_y": 0.4, "n_grid": 1000}

TOP_GAPS = 5


def check_compatible(hp, data):
    expected = (hp.n_channels, hp.n_samples, hp.fs_hz)
    found = (data.n_channels, data.n_samples, data.fs_hz)
    if expected != found:
        raise ContractError(
            f"checkpoint expects (channels, samples, fs) = {expected}, dataset has {found}"
        )
    if data.n_classes > hp.n_classes:
        raise ContractError(f"dataset has {data.n_classes} classes, checkpoint has {hp.n_classes}")


class Command(PipelineCommand):
    help = "Per-class PLV statistics, spatial filter export and the error-bound sweep for a trained model."
    flags = ("dataset", "checkpoint", "out")

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--edge-trim', type=float, help='fraction of phase samples dropped at each end')

    def run(self, cfg):
        out = cfg.out_dir()
        checkpoint = load_checkpoint(cfg.checkpoint)
        params, hp = checkpoint.params, checkpoint.hyperparams
        data = load_trialset(cfg.dataset)
        check_compatible(hp, data)
        cfg.write(out)

        report = analysis.plv_report(params, hp, data, edge_trim=cfg.edge_trim)
        validate_output(PlvReportSerializer, report.to_dict())
        report.write_json(out / "plv_report.json")
        report.write_csv(out / "plv_report.csv")
        if report.bn_fallback:
            self.stdout.write(self.style.WARNING("batch norm had no running statistics; used per-trial statistics"))
        if report.n_excluded:
            self.stdout.write(self.style.WARNING(f"{report.n_excluded} degenerate trial/PSP pairs excluded"))

        records = analysis.export_spatial_filters(params, data.channel_labels())
        validate_output(SpatialFilterSerializer, [r.to_dict() for r in records], many=True)
        analysis.write_filters_json(records, out / "filters.json")
        analysis.write_filters_csv(records, out / "filters.csv")

        bound = {**DEFAULT_BOUND, **cfg.bound}
        sweep = analysis.bound_sweep(bound["g"], bound["s_x"], bound["s_y"], int(bound["n_grid"]))
        sweep.write_csv(out / "bound_sweep.csv")

        for row in analysis.plv_gaps(report)[:TOP_GAPS]:
            self.stdout.write(
                f"  PSP {row['psp']:>4} ({row['band_hz']:g} Hz, PSCs {row['psc_pair']}): "
                f"gap {row['gap']:.3f} ({row['high_class']} vs {row['low_class']})"
            )
        self.stdout.write(f"error bound minimum at alpha = {sweep.argmin:.4f} rad")
        self.success(f"analysis written to {out}")

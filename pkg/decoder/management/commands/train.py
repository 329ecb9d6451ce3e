import logging

from decoder import network, trainer
from decoder.dataio import load_trialset
from decoder.exceptions import DivergenceError
from decoder.models import Dataset, TrainingRun
from decoder.serializers import RunReportSerializer, validate_output

from ._base import PipelineCommand

logger = logging.getLogger(__name__)

PHASER_CHECK_TRIALS = 4


class Command(PipelineCommand):
    help = "Train and evaluate the network with cross-validation or a holdout split."
    flags = ("seed", "dataset", "out", "train", "preset")

    def run(self, cfg):
        out = cfg.out_dir()
        data = load_trialset(cfg.dataset)
        hp = cfg.build_hyperparams(data)
        cfg.write(out)

        if hp.use_phase_shifter:
            network.check_phaser_equivalence(hp, cfg.seed, data.trials[:PHASER_CHECK_TRIALS])
            self.stdout.write("phase shifter: initial output matches the plain network")

        run = TrainingRun.objects.create(
            dataset=Dataset.register(cfg.dataset, data),
            out_dir=str(out),
            protocol=cfg.protocol,
            phaser=hp.use_phase_shifter,
            seed=cfg.seed,
            config=cfg.to_dict(),
        )
        try:
            report = self._evaluate(cfg, hp, data)
        except DivergenceError as e:
            run.status, run.message = "diverged", str(e)
            run.save()
            raise
        except Exception as e:
            run.status, run.message = "failed", str(e)
            run.save()
            raise

        report.config = cfg.to_dict()
        payload = validate_output(RunReportSerializer, report.to_dict())
        self.write_json(out / "report.json", payload)
        self.write_rows(out / "losses.csv", ("repeat", "fold", "epoch", "mean_loss"), report.loss_rows())
        best = report.best_fold
        network.save_checkpoint(out / "checkpoint.psnb", report.best_params, hp, cfg.seed, hp.epochs,
                                extra={"repeat": best.repeat, "fold": best.fold, "accuracy": best.accuracy})
        run.complete(report)

        for warning in report.warnings:
            self.stdout.write(self.style.WARNING(warning))
        self.stdout.write(f"accuracy per repeat: {', '.join(f'{a:.4f}' for a in report.repeat_accuracies)}")
        self.success(f"recorded accuracy {report.recorded_accuracy:.4f} ({report.record_rule}); "
                     f"max {report.max_accuracy:.4f}, mean {report.mean_accuracy:.4f}; outputs in {out}")

    def _evaluate(self, cfg, hp, data):
        if cfg.protocol == "holdout":
            if cfg.test_dataset:
                train_set, test_set = data, load_trialset(cfg.test_dataset)
            else:
                train_set, test_set = trainer.holdout_split(data, cfg.test_fraction, cfg.seed)
            return trainer.holdout(hp, train_set, test_set, cfg.seed, log_every=cfg.log_every)
        cv = cfg.build_cv()
        logger.info("cross-validating: %d folds x %d repeats, %d epochs", cv.k, cv.repeats, hp.epochs)
        return trainer.cross_validate(hp, data, cv, reference_mode=cfg.reference_mode, log_every=cfg.log_every)

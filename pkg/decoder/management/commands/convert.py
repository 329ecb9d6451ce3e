import numpy as np

from decoder.dataio import convert_arrays, save_trialset
from decoder.exceptions import FormatError
from decoder.models import Dataset

from ._base import PipelineCommand

REQUIRED_ARRAYS = ("trials", "labels", "fs_hz")


class Command(PipelineCommand):
    help = "Convert an .npz export of a public recording into a preprocessed EEGB1 dataset."
    flags = ("out", "preset")

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--input', help='.npz file with trials, labels, fs_hz and optional names')

    def run(self, cfg):
        out = cfg.out_dir()
        with np.load(cfg.input, allow_pickle=False) as npz:
            missing = [key for key in REQUIRED_ARRAYS if key not in npz.files]
            if missing:
                raise FormatError(f"{cfg.input} lacks arrays {missing}")
            class_names = [str(n) for n in npz["class_names"]] if "class_names" in npz.files else None
            channel_names = [str(n) for n in npz["channel_names"]] if "channel_names" in npz.files else None
            ts = convert_arrays(npz["trials"], npz["labels"], float(npz["fs_hz"]), cfg.preset,
                                class_names, channel_names)
        cfg.write(out)

        path = save_trialset(ts, out / "dataset.eegb")
        Dataset.register(path, ts, source="converted", name=f"{cfg.preset}-{path.parent.name}")
        self.success(f"{ts.n_trials} trials x {ts.n_channels} channels x {ts.n_samples} samples "
                     f"written to {path}")

from experiments.management.commands._common import PipelineCommand
from experiments.services.pipeline import featurize


class Command(PipelineCommand):
    help = "Calibrate on the empty room and turn every dump into paired RP / ratio feature records."
    step = "featurize"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--manifest", help="manifest.csv written by gen (default: <out>/manifest.csv)")

    def run_step(self, cfg, options):
        return featurize(cfg, options.get("manifest"))

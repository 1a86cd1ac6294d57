from experiments.management.commands._common import PipelineCommand
from experiments.services.pipeline import parse_stages, train


class Command(PipelineCommand):
    help = "Train stage 1, 2, 3 or all of them on the train split and write checkpoints plus losses.csv."
    step = "train"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--stage", choices=["1", "2", "3", "all"], default="all")
        parser.add_argument("--dataset", help="Feature container (default: <out>/features.crds)")
        parser.add_argument("--checkpoints", help="Checkpoint directory (default: <out>/checkpoints)")

    def run_step(self, cfg, options):
        return train(cfg, parse_stages(options["stage"]), options.get("dataset"), options.get("checkpoints"),
                     progress=options.get("progress", False))

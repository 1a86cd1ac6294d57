from experiments.management.commands._common import PipelineCommand
from experiments.services.pipeline import evaluate


class Command(PipelineCommand):
    help = "Score the trained model on the test split; --trials n retrains n times and reports mean ± std."
    step = "eval"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--trials", type=int, help="Override eval.trials")
        parser.add_argument("--dataset", help="Feature container (default: <out>/features.crds)")
        parser.add_argument("--checkpoints", help="Checkpoint directory (default: <out>/checkpoints)")

    def config_overrides(self, options):
        return {"trials": options.get("trials")}

    def run_step(self, cfg, options):
        return evaluate(cfg, options.get("dataset"), options.get("checkpoints"),
                        progress=options.get("progress", False))

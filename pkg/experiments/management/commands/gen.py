from experiments.management.commands._common import PipelineCommand
from experiments.services.pipeline import generate


class Command(PipelineCommand):
    help = "Generate synthetic CSI dumps, scenario JSON and manifest.csv for every case variant."
    step = "gen"

    def run_step(self, cfg, options):
        return generate(cfg)

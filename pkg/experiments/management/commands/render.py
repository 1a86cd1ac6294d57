from experiments.management.commands._common import PipelineCommand
from experiments.services.pipeline import render


class Command(PipelineCommand):
    help = "Render RP, binary, colourised and merged ratio images of selected records as PGM/PPM."
    step = "render"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--dataset", help="Feature container (default: <out>/features.crds)")
        parser.add_argument("--records", type=int, nargs="+",
                            help="Record ids to render (default: eval.render_per_case per case)")

    def run_step(self, cfg, options):
        return render(cfg, options.get("dataset"), options.get("records"))

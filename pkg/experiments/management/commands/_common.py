# experiments/management/commands/_common.py
#
# Shared plumbing for the pipeline commands: --config/--seed/--out, the run
# ledger, and exit codes (1 validation, 2 I/O, 3 numeric failure).
import logging

from django.core.exceptions import ImproperlyConfigured, ValidationError
from django.core.management.base import BaseCommand, CommandError

from csi.exceptions import DumpFormatError
from experiments.services.config import load_config
from experiments.services.ledger import record_run
from experiments.services.pipeline import configure_torch
from learning.exceptions import CheckpointFormatError, DatasetFormatError, NonFiniteGradientError, NonFiniteLossError

logger = logging.getLogger(__name__)

EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (NonFiniteLossError, NonFiniteGradientError)):
        return EXIT_NUMERIC
    if isinstance(exc, (OSError, DumpFormatError, DatasetFormatError, CheckpointFormatError)):
        return EXIT_IO
    return EXIT_VALIDATION


def _message(exc: BaseException) -> str:
    if isinstance(exc, ValidationError):
        return "; ".join(exc.messages)
    return str(exc)


class PipelineCommand(BaseCommand):
    step = ""

    def add_arguments(self, parser):
        parser.add_argument("--config", help="RunConfig JSON file (defaults apply when omitted)")
        parser.add_argument("--seed", type=int, help="Override the config seed")
        parser.add_argument("--out", help="Output directory (default: config out_dir or CRONOS_OUTPUT_DIR)")
        parser.add_argument("--progress", action="store_true", help="Show tqdm progress bars")

    def config_overrides(self, options):
        return {}

    def run_step(self, cfg, options):
        raise NotImplementedError

    def handle(self, *args, **options):
        try:
            cfg = load_config(options.get("config")).with_overrides(
                seed=options.get("seed"), out_dir=options.get("out"), **self.config_overrides(options)
            )
        except (ValidationError, ImproperlyConfigured, ValueError, OSError) as exc:
            raise CommandError(f"invalid configuration: {_message(exc)}", returncode=exit_code(exc)) from exc

        configure_torch()
        self.stdout.write(self.style.MIGRATE_HEADING(
            f"{self.step}: seed {cfg.seed}, output {cfg.output_dir} (config {cfg.digest()[:12]})"
        ))
        try:
            with record_run(self.step, cfg) as run:
                result = self.run_step(cfg, options)
                for path in result.outputs:
                    run.add_output(path)
                run.add_metrics(**result.metrics)
        except (ValidationError, ImproperlyConfigured, ValueError, OSError) as exc:
            logger.debug("%s failed", self.step, exc_info=True)
            raise CommandError(f"{self.step} failed: {_message(exc)}", returncode=exit_code(exc)) from exc

        for line in result.summary:
            self.stdout.write(line)
        self.stdout.write(self.style.SUCCESS(f"{self.step} done: {len(result.outputs)} files written"))

# experiments/services/ledger.py
#
# Run ledger. Recording is best effort: a missing or unmigrated database logs
# the failure and the pipeline carries on without a row.
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from django.conf import settings
from django.db import DatabaseError

from experiments.models import ExperimentRun, RunStatus
from experiments.services.config import RunConfig

logger = logging.getLogger(__name__)


@dataclass
class RunHandle:
    command: str
    run: Optional[ExperimentRun] = None
    outputs: List[str] = field(default_factory=list)
    metrics: Dict = field(default_factory=dict)

    def add_output(self, path) -> None:
        self.outputs.append(str(path))

    def add_metrics(self, **values) -> None:
        self.metrics.update(values)


def _open(command: str, cfg: RunConfig) -> Optional[ExperimentRun]:
    if not settings.CRONOS_RECORD_RUNS:
        return None
    try:
        return ExperimentRun.objects.create(
            command=command,
            seed=cfg.seed,
            config_digest=cfg.digest(),
            config=cfg.to_dict(),
            out_dir=str(cfg.output_dir),
        )
    except DatabaseError:
        logger.exception("could not record %s run; continuing without the ledger", command)
        return None


def _close(handle: RunHandle, status: str, error: Optional[str] = None) -> None:
    if handle.run is None:
        return
    handle.run.outputs = handle.outputs
    handle.run.metrics = handle.metrics
    try:
        handle.run.mark_finished(status, error)
    except DatabaseError:
        logger.exception("could not finalize run %s", handle.run.pk)


@contextmanager
def record_run(command: str, cfg: RunConfig):
    handle = RunHandle(command=command, run=_open(command, cfg))
    try:
        yield handle
    except Exception as exc:
        _close(handle, RunStatus.FAILED, f"{type(exc).__name__}: {exc}")
        raise
    _close(handle, RunStatus.SUCCEEDED)

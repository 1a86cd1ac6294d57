# experiments/models.py
from django.db import models
from django.utils import timezone


class RunStatus(models.TextChoices):
    RUNNING = 'running', 'Running'
    SUCCEEDED = 'succeeded', 'Succeeded'
    FAILED = 'failed', 'Failed'


class ExperimentRun(models.Model):
    """One invocation of a pipeline command, with the config digest it ran under."""
    command = models.CharField(max_length=32)
    seed = models.BigIntegerField(default=0)
    config_digest = models.CharField(max_length=64)
    config = models.JSONField(default=dict)
    out_dir = models.CharField(max_length=500, blank=True, default='')
    status = models.CharField(max_length=20, choices=RunStatus.choices, default=RunStatus.RUNNING)
    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)
    outputs = models.JSONField(default=list)
    metrics = models.JSONField(default=dict)
    error = models.TextField(null=True, blank=True)

    class Meta:
        indexes = [
            models.Index(fields=['command', 'started_at'], name='experiments_command_idx'),
            models.Index(fields=['config_digest'], name='experiments_digest_idx'),
        ]
        ordering = ['-started_at']

    def __str__(self):
        return f"{self.command} seed={self.seed} ({self.status})"

    @property
    def duration(self):
        if self.finished_at is None:
            return None
        return (self.finished_at - self.started_at).total_seconds()

    def mark_finished(self, status, error=None):
        self.status = status
        self.error = error
        self.finished_at = timezone.now()
        self.save(update_fields=['status', 'error', 'finished_at', 'outputs', 'metrics'])

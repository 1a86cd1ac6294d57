# learning/services/optim.py
import logging
from typing import Iterable

import torch

from learning.exceptions import NonFiniteGradientError
from learning.types import OptimizerConfig

logger = logging.getLogger(__name__)


def make_optimizer(params: Iterable[torch.nn.Parameter], cfg: OptimizerConfig) -> torch.optim.Adam:
    params = [p for p in params if p.requires_grad]
    return torch.optim.Adam(params, lr=cfg.learning_rate, betas=tuple(cfg.betas), eps=cfg.eps)


def check_gradients(optimizer: torch.optim.Optimizer) -> None:
    for group in optimizer.param_groups:
        for p in group["params"]:
            if p.grad is not None and not bool(torch.isfinite(p.grad).all()):
                raise NonFiniteGradientError(f"non-finite gradient in a parameter of shape {tuple(p.shape)}")


def optimizer_step(optimizer: torch.optim.Optimizer) -> None:
    """One Adam update from the gradients already accumulated on the parameters."""
    check_gradients(optimizer)
    optimizer.step()

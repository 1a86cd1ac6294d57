# learning/services/gradcheck.py
import logging
from typing import Callable, Sequence

import torch

from learning.exceptions import NonFiniteLossError

logger = logging.getLogger(__name__)

RELATIVE_FLOOR = 1e-8


def _evaluate(f: Callable[[], torch.Tensor]) -> torch.Tensor:
    value = f()
    if value.ndim != 0:
        raise ValueError(f"grad_check needs a scalar function, got shape {tuple(value.shape)}")
    if not bool(torch.isfinite(value)):
        raise NonFiniteLossError(f"loss is not finite: {float(value)}")
    return value


def grad_check(f: Callable[[], torch.Tensor], params: Sequence[torch.Tensor], eps_fd: float = 1e-4) -> float:
    """
    Largest relative error between autograd gradients and central finite
    differences over `params`.

    `f` is a closure that recomputes the scalar from the current values of
    `params`; each parameter is perturbed in place and restored. Use float64
    parameters and inputs. The error of one tensor is
    ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf, floor).
    """
    params = list(params)
    analytic = torch.autograd.grad(_evaluate(f), params, allow_unused=True)

    worst = 0.0
    for p, grad in zip(params, analytic):
        grad = torch.zeros_like(p) if grad is None else grad.detach()
        numeric = torch.zeros_like(p)
        flat_p = p.data.view(-1)
        flat_n = numeric.view(-1)
        with torch.no_grad():
            for i in range(flat_p.numel()):
                original = flat_p[i].item()
                flat_p[i] = original + eps_fd
                plus = _evaluate(f).item()
                flat_p[i] = original - eps_fd
                minus = _evaluate(f).item()
                flat_p[i] = original
                flat_n[i] = (plus - minus) / (2 * eps_fd)

        scale = max(grad.abs().max().item(), numeric.abs().max().item(), RELATIVE_FLOOR)
        error = (grad - numeric).abs().max().item() / scale
        worst = max(worst, error)

    logger.debug("grad_check over %d tensors: max relative error %.3e", len(params), worst)
    return worst

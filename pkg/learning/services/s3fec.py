# learning/services/s3fec.py
#
# Self-switched classifier over the frozen RP and ratio representations, and
# the ablation heads that replace it.
import logging

import torch
import torch.nn as nn

from learning.exceptions import ShapeMismatchError
from learning.services.networks import linear_head, softmax
from learning.types import CLASSIFIERS, N_CLASSES, REPRESENTATION_DIM, ClassProbabilities

logger = logging.getLogger(__name__)

DYNAMIC_INDEX = N_CLASSES - 1


def switch_indicator(y_d: torch.Tensor) -> torch.Tensor:
    """1 where the case-4 probability is the strict unique maximum of ŷ_d."""
    return (y_d[..., DYNAMIC_INDEX] > y_d[..., :DYNAMIC_INDEX].max(dim=-1).values).to(y_d.dtype)


def combine(y_d: torch.Tensor, y_ratio: torch.Tensor) -> ClassProbabilities:
    """
    ŷ' takes the three static probabilities of ŷ_ratio and the case-4
    probability of ŷ_d; ŷ = ω·ŷ_d + (1 - ω)·softmax(ŷ'). ω is a hard
    decision, so gradients reach only the selected branch.
    """
    y_prime = torch.cat([y_ratio[..., :DYNAMIC_INDEX], y_d[..., DYNAMIC_INDEX:]], dim=-1)
    y_s = softmax(y_prime)
    omega = switch_indicator(y_d).detach()
    selected = omega[..., None]
    y_final = selected * y_d + (1 - selected) * y_s
    return ClassProbabilities(y_d=y_d, y_ratio=y_ratio, y_prime=y_prime, y_s=y_s, omega=omega, y_final=y_final)


def _single_branch(y: torch.Tensor, omega_value: float) -> ClassProbabilities:
    omega = torch.full(y.shape[:-1], omega_value, dtype=y.dtype, device=y.device)
    return ClassProbabilities(y_d=y, y_ratio=y, y_prime=y, y_s=y, omega=omega, y_final=y)


class ClassifierHeads(nn.Module):
    """
    Stage-3 trainable heads. "s3fec" owns rp_head and ratio_head, the
    single-input ablations own one of them, "joint" maps the concatenated
    representations through joint_head.
    """

    def __init__(self, mode: str = "s3fec", in_dim: int = REPRESENTATION_DIM):
        super().__init__()
        if mode not in CLASSIFIERS:
            raise ValueError(f"classifier must be one of {CLASSIFIERS}, got {mode!r}")
        self.mode = mode
        self.in_dim = in_dim
        if mode in ("s3fec", "rp_only"):
            self.rp_head = linear_head(in_dim)
        if mode in ("s3fec", "ratio_only"):
            self.ratio_head = linear_head(in_dim)
        if mode == "joint":
            self.joint_head = linear_head(2 * in_dim)

    def forward(self, v_rp: torch.Tensor, v_ratio: torch.Tensor) -> ClassProbabilities:
        if v_rp.shape[-1] != self.in_dim or v_ratio.shape[-1] != self.in_dim or v_rp.shape[:-1] != v_ratio.shape[:-1]:
            raise ShapeMismatchError(
                f"representations {tuple(v_rp.shape)} and {tuple(v_ratio.shape)} do not fit {self.in_dim}-d heads"
            )
        if self.mode == "s3fec":
            return combine(softmax(self.rp_head(v_rp)), softmax(self.ratio_head(v_ratio)))
        if self.mode == "rp_only":
            return _single_branch(softmax(self.rp_head(v_rp)), 1.0)
        if self.mode == "ratio_only":
            return _single_branch(softmax(self.ratio_head(v_ratio)), 0.0)
        return _single_branch(softmax(self.joint_head(torch.cat([v_rp, v_ratio], dim=-1))), 0.0)


def s3fec_forward(v_rp: torch.Tensor, v_ratio: torch.Tensor, heads: ClassifierHeads) -> ClassProbabilities:
    """Works on single 512-vectors and on N x 512 batches alike."""
    return heads(v_rp, v_ratio)

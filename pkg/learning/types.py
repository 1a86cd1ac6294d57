# learning/types.py
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Optional, Tuple

import numpy as np
import torch

from learning.exceptions import LearningError, ShapeMismatchError

N_CLASSES = 4
REPRESENTATION_DIM = 512
PROJECTION_DIM = 128

DEPTHS = ("compact", "resnet18")
CLASSIFIERS = ("s3fec", "rp_only", "ratio_only", "joint")
CE_REDUCTIONS = ("mean", "sum")

_STAGE_LAYOUT = {
    "compact": ((32, 64, 128, 256), (1, 1, 1, 1)),
    "resnet18": ((64, 128, 256, 512), (2, 2, 2, 2)),
}


# ─────────────────────────────────────────────────────────────────────────────
#  Network shapes
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class EncoderSpec:
    """
    Residual encoder layout: 3x3 stem, four stages of basic blocks (stride 2
    entering stages 2-4), global average pool, linear map to out_dim.
    """
    in_channels: int
    stage_channels: Tuple[int, ...] = (32, 64, 128, 256)
    blocks_per_stage: Tuple[int, ...] = (1, 1, 1, 1)
    out_dim: int = REPRESENTATION_DIM

    def __post_init__(self):
        if self.in_channels < 1:
            raise ShapeMismatchError("encoder needs at least one input channel")
        if self.out_dim != REPRESENTATION_DIM:
            raise ShapeMismatchError(f"representations are {REPRESENTATION_DIM}-dimensional, got {self.out_dim}")
        if len(self.stage_channels) != 4 or len(self.blocks_per_stage) != 4:
            raise ShapeMismatchError("encoder has exactly four stages")
        if min(self.stage_channels) < 1 or min(self.blocks_per_stage) < 1:
            raise ShapeMismatchError("stage widths and block counts must be positive")

    @classmethod
    def for_depth(cls, in_channels: int, depth: str = "compact",
                  stage_channels: Optional[Tuple[int, ...]] = None) -> "EncoderSpec":
        if depth not in _STAGE_LAYOUT:
            raise LearningError(f"depth must be one of {DEPTHS}, got {depth!r}")
        channels, blocks = _STAGE_LAYOUT[depth]
        return cls(in_channels=in_channels, stage_channels=tuple(stage_channels or channels),
                   blocks_per_stage=blocks)


# ─────────────────────────────────────────────────────────────────────────────
#  Training configuration
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class AugmentConfig:
    crop_scale: Tuple[float, float] = (0.2, 1.0)
    flip_prob: float = 0.5
    aspect_range: Tuple[float, float] = (3 / 4, 4 / 3)
    seed: int = 0

    def __post_init__(self):
        low, high = self.crop_scale
        if not 0 < low <= high <= 1:
            raise LearningError(f"crop_scale must satisfy 0 < low <= high <= 1, got {self.crop_scale}")
        if not 0 <= self.flip_prob <= 1:
            raise LearningError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        if not 0 < self.aspect_range[0] <= self.aspect_range[1]:
            raise LearningError(f"invalid aspect_range {self.aspect_range}")


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.07
    consultation_weight: float = 0.5

    def __post_init__(self):
        if self.temperature <= 0:
            raise LearningError("temperature must be > 0")
        if self.consultation_weight < 0:
            raise LearningError("consultation weight must be >= 0")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs_stage1: int = 30
    epochs_stage2: int = 30
    epochs_stage3: int = 10
    learning_rate: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    temperature: float = 0.07
    consultation_weight: float = 0.5
    classifier: str = "s3fec"
    depth: str = "compact"
    stage_channels: Optional[Tuple[int, ...]] = None
    ce_reduction: str = "mean"
    strict_projection: bool = True
    supcon: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise LearningError("batch_size must be >= 2")
        if min(self.epochs_stage1, self.epochs_stage2, self.epochs_stage3) < 0:
            raise LearningError("epoch counts must be >= 0")
        if self.classifier not in CLASSIFIERS:
            raise LearningError(f"classifier must be one of {CLASSIFIERS}, got {self.classifier!r}")
        if self.depth not in DEPTHS:
            raise LearningError(f"depth must be one of {DEPTHS}, got {self.depth!r}")
        if self.ce_reduction not in CE_REDUCTIONS:
            raise LearningError(f"ce_reduction must be one of {CE_REDUCTIONS}")
        LossConfig(self.temperature, self.consultation_weight)

    @property
    def loss(self) -> LossConfig:
        return LossConfig(temperature=self.temperature, consultation_weight=self.consultation_weight)

    @property
    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(learning_rate=self.learning_rate, betas=tuple(self.betas), eps=self.adam_eps)

    @property
    def uses_rp(self) -> bool:
        return self.classifier != "ratio_only"

    @property
    def uses_ratio(self) -> bool:
        return self.classifier != "rp_only"

    @property
    def consults(self) -> bool:
        """Stage 2 adds the consultation loss only when the classifier reads both branches."""
        return self.uses_rp and self.uses_ratio

    @property
    def end_to_end(self) -> bool:
        """Without SupCon, stage 3 trains encoders and heads together by cross-entropy."""
        return not self.supcon

    def skips(self, stage: int) -> bool:
        """
        Contrastive stages left untrained: both of them without SupCon, and the
        branch a single-input classifier never reads.
        """
        if stage == 3:
            return False
        if not self.supcon:
            return True
        return not (self.uses_rp if stage == 1 else self.uses_ratio)

    def epochs(self, stage: int) -> int:
        return {1: self.epochs_stage1, 2: self.epochs_stage2, 3: self.epochs_stage3}[stage]

    def encoder_spec(self, in_channels: int) -> EncoderSpec:
        return EncoderSpec.for_depth(in_channels, self.depth,
                                     tuple(self.stage_channels) if self.stage_channels else None)


# ─────────────────────────────────────────────────────────────────────────────
#  Batches, outputs and stage bookkeeping
# ─────────────────────────────────────────────────────────────────────────────

@dataclass
class ContrastiveBatch:
    """2B projections: the B originals first, then their augmented views."""
    projections: torch.Tensor
    labels: torch.Tensor

    def __post_init__(self):
        if self.projections.ndim != 2 or self.projections.shape[0] != self.labels.shape[0]:
            raise ShapeMismatchError(
                f"projections {tuple(self.projections.shape)} do not match labels {tuple(self.labels.shape)}"
            )
        if self.projections.shape[0] % 2:
            raise ShapeMismatchError("a contrastive batch holds an even number of views")
        half = self.batch_size
        if not torch.equal(self.labels[:half], self.labels[half:]):
            raise ShapeMismatchError("augmented views must carry the labels of their originals")

    @property
    def batch_size(self) -> int:
        return self.projections.shape[0] // 2

    @classmethod
    def from_views(cls, originals: torch.Tensor, augmented: torch.Tensor, labels: torch.Tensor) -> "ContrastiveBatch":
        return cls(projections=torch.cat([originals, augmented]), labels=torch.cat([labels, labels]))


@dataclass
class ClassProbabilities:
    """Batched S3FEC outputs (rows are samples); omega is 1 where ŷ_d is selected."""
    y_d: torch.Tensor
    y_ratio: torch.Tensor
    y_prime: torch.Tensor
    y_s: torch.Tensor
    omega: torch.Tensor
    y_final: torch.Tensor

    def predicted(self) -> np.ndarray:
        """Case ids 1..4; argmax keeps the first (lowest) index on ties."""
        return np.argmax(self.y_final.detach().cpu().numpy(), axis=1) + 1

    def detach(self) -> "ClassProbabilities":
        return ClassProbabilities(**{name: getattr(self, name).detach() for name in self.__dataclass_fields__})

    def row(self, index: int) -> "ClassProbabilities":
        return ClassProbabilities(**{name: getattr(self, name)[index] for name in self.__dataclass_fields__})


@dataclass(frozen=True)
class StageState:
    stage: int
    frozen: FrozenSet[str]
    trainable: FrozenSet[str]
    epochs: int

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise LearningError(f"stage must be 1, 2 or 3, got {self.stage}")
        if self.frozen & self.trainable:
            raise LearningError(f"parameters both frozen and trainable: {sorted(self.frozen & self.trainable)}")


@dataclass
class EpochRecord:
    stage: int
    epoch: int
    loss: float
    components: Dict[str, float] = field(default_factory=dict)

    def as_row(self) -> Dict:
        return {"epoch": self.epoch, "stage": self.stage, "loss": self.loss, **self.components}

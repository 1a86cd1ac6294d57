# learning/services/networks.py
#
# Residual image encoders, projection heads and the per-stage branches.
import logging
from typing import Iterable

import torch
import torch.nn as nn
import torch.nn.functional as F

from learning.exceptions import DeadProjectionError, ShapeMismatchError
from learning.types import N_CLASSES, PROJECTION_DIM, REPRESENTATION_DIM, EncoderSpec

logger = logging.getLogger(__name__)

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def _batch_norm(channels: int) -> nn.BatchNorm2d:
    return nn.BatchNorm2d(channels, eps=BN_EPS, momentum=BN_MOMENTUM)


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with batch norm; 1x1 projection on the skip when the shape changes."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=stride, padding=1, bias=False)
        self.bn1 = _batch_norm(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, kernel_size=3, stride=1, padding=1, bias=False)
        self.bn2 = _batch_norm(out_channels)

        self.shortcut = nn.Sequential()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, kernel_size=1, stride=stride, bias=False),
                _batch_norm(out_channels),
            )

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ResidualEncoder(nn.Module):
    def __init__(self, spec: EncoderSpec):
        super().__init__()
        self.spec = spec
        stem_channels = spec.stage_channels[0]
        self.stem = nn.Sequential(
            nn.Conv2d(spec.in_channels, stem_channels, kernel_size=3, stride=1, padding=1, bias=False),
            _batch_norm(stem_channels),
            nn.ReLU(inplace=True),
        )

        stages = []
        in_channels = stem_channels
        for index, (channels, blocks) in enumerate(zip(spec.stage_channels, spec.blocks_per_stage)):
            strides = [1 if index == 0 else 2] + [1] * (blocks - 1)
            layers = []
            for stride in strides:
                layers.append(ResidualBlock(in_channels, channels, stride))
                in_channels = channels
            stages.append(nn.Sequential(*layers))
        self.stages = nn.Sequential(*stages)
        self.pool = nn.AdaptiveAvgPool2d((1, 1))
        self.fc = nn.Linear(in_channels, spec.out_dim)
        init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeMismatchError(
                f"encoder expects N x {self.spec.in_channels} x h x w input, got {tuple(x.shape)}"
            )
        out = self.stages(self.stem(x))
        return self.fc(torch.flatten(self.pool(out), 1))


class ProjectionHead(nn.Module):
    """z = Norm(W2 · ReLU(W1 · v)), both maps bias-free."""

    def __init__(self, in_dim: int = REPRESENTATION_DIM, out_dim: int = PROJECTION_DIM, strict: bool = False):
        super().__init__()
        self.W1 = nn.Linear(in_dim, in_dim, bias=False)
        self.W2 = nn.Linear(in_dim, out_dim, bias=False)
        self.strict = strict
        init_weights(self)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        z = self.W2(F.relu(self.W1(v)))
        if self.strict and bool((z.detach().abs().sum(dim=-1) == 0).any()):
            raise DeadProjectionError("projection head produced a zero vector")
        # zero vectors stay zero
        return F.normalize(z, dim=-1, eps=1e-12)


class ContrastiveBranch(nn.Module):
    """Encoder plus projection head: the stage-1 (RP) and stage-2 (ratio) networks."""

    def __init__(self, spec: EncoderSpec, strict_projection: bool = False):
        super().__init__()
        self.encoder = ResidualEncoder(spec)
        self.projection = ProjectionHead(strict=strict_projection)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.projection(self.encoder(x))


def init_weights(module: nn.Module) -> None:
    """Kaiming-uniform convolutions and linears, zero biases, unit/zero batch-norm affine."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def linear_head(in_dim: int = REPRESENTATION_DIM, n_classes: int = N_CLASSES) -> nn.Linear:
    head = nn.Linear(in_dim, n_classes)
    init_weights(head)
    return head


def softmax(logits: torch.Tensor) -> torch.Tensor:
    return torch.softmax(logits, dim=-1)


def freeze(modules: Iterable[nn.Module]) -> None:
    for module in modules:
        module.eval()
        for p in module.parameters():
            p.requires_grad_(False)


# ── Single-sample helpers ───────────────────────────────────────────────────

def encoder_forward(encoder: ResidualEncoder, image: torch.Tensor) -> torch.Tensor:
    """512-vector of one C x h x w image in inference mode."""
    if image.ndim != 3:
        raise ShapeMismatchError(f"expected one C x h x w image, got {tuple(image.shape)}")
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            return encoder(image[None])[0]
    finally:
        encoder.train(was_training)


def projection_forward(head: ProjectionHead, v: torch.Tensor) -> torch.Tensor:
    return head(v[None])[0] if v.ndim == 1 else head(v)

# learning/services/inference.py
#
# The assembled three-stage model, batched representation passes, prediction
# and per-stage checkpoint files.
import logging
from pathlib import Path
from typing import Dict, Iterable, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from learning.exceptions import PrerequisiteError, ShapeMismatchError
from learning.services.checkpoints import load_checkpoint, load_module, module_tensors, save_checkpoint
from learning.services.networks import ContrastiveBranch, ResidualEncoder
from learning.services.s3fec import ClassifierHeads
from learning.types import ClassProbabilities, TrainConfig

logger = logging.getLogger(__name__)

INFERENCE_BATCH = 256
STAGES = (1, 2, 3)

ArrayLike = Union[np.ndarray, torch.Tensor]


class CronosModel(nn.Module):
    """
    stage1: RP encoder + projection, stage2: ratio encoder + projection,
    stage3: classifier heads over the two 512-d representations.
    """

    def __init__(self, cfg: TrainConfig, ratio_channels: int):
        super().__init__()
        self.cfg = cfg
        self.ratio_channels = ratio_channels
        self.stage1 = ContrastiveBranch(cfg.encoder_spec(1), strict_projection=cfg.strict_projection)
        self.stage2 = ContrastiveBranch(cfg.encoder_spec(ratio_channels), strict_projection=cfg.strict_projection)
        self.stage3 = ClassifierHeads(cfg.classifier)

    def stage(self, index: int) -> nn.Module:
        if index not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {index}")
        return getattr(self, f"stage{index}")

    def classify(self, rp: torch.Tensor, ratio: torch.Tensor) -> ClassProbabilities:
        return self.stage3(self.stage1.encoder(rp), self.stage2.encoder(ratio))


def build_model(cfg: TrainConfig, ratio_channels: int, seed: int = 0) -> CronosModel:
    torch.manual_seed(seed)
    return CronosModel(cfg, ratio_channels)


def _as_tensor(images: ArrayLike) -> torch.Tensor:
    if isinstance(images, np.ndarray):
        return torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))
    return images.to(torch.float32)


def _in_eval(modules: Iterable[nn.Module]):
    modes = [(m, m.training) for m in modules]
    for m, _ in modes:
        m.eval()
    return modes


def _restore(modes) -> None:
    for m, was_training in modes:
        m.train(was_training)


def encode(encoder: ResidualEncoder, images: ArrayLike, batch_size: int = INFERENCE_BATCH) -> torch.Tensor:
    """N x 512 representations in inference mode."""
    images = _as_tensor(images)
    modes = _in_eval([encoder])
    try:
        with torch.no_grad():
            parts = [encoder(images[i:i + batch_size]) for i in range(0, len(images), batch_size)]
    finally:
        _restore(modes)
    return torch.cat(parts) if parts else torch.empty(0, encoder.spec.out_dim)


def project(branch: ContrastiveBranch, images: ArrayLike, batch_size: int = INFERENCE_BATCH) -> torch.Tensor:
    """N x 128 unit projections in inference mode."""
    v = encode(branch.encoder, images, batch_size)
    modes = _in_eval([branch.projection])
    try:
        with torch.no_grad():
            return branch.projection(v) if len(v) else torch.empty(0, branch.projection.W2.out_features)
    finally:
        _restore(modes)


def predict_batch(model: CronosModel, rp: ArrayLike, ratio: ArrayLike,
                  batch_size: int = INFERENCE_BATCH) -> Tuple[np.ndarray, ClassProbabilities]:
    rp, ratio = _as_tensor(rp), _as_tensor(ratio)
    if len(rp) != len(ratio):
        raise ShapeMismatchError(f"{len(rp)} RP images but {len(ratio)} ratio images")
    v_rp = encode(model.stage1.encoder, rp, batch_size)
    v_ratio = encode(model.stage2.encoder, ratio, batch_size)
    with torch.no_grad():
        probs = model.stage3(v_rp, v_ratio).detach()
    return probs.predicted(), probs


def predict(model: CronosModel, rp_image: ArrayLike, ratio_image: ArrayLike) -> Tuple[int, ClassProbabilities]:
    """Case id (1..4, ties to the lowest) and the probabilities of one record."""
    rp_image, ratio_image = _as_tensor(rp_image), _as_tensor(ratio_image)
    if rp_image.ndim != 3 or ratio_image.ndim != 3:
        raise ShapeMismatchError(
            f"expected single C x h x w images, got {tuple(rp_image.shape)} and {tuple(ratio_image.shape)}"
        )
    cases, probs = predict_batch(model, rp_image[None], ratio_image[None])
    return int(cases[0]), probs.row(0)


# ── Checkpoint files ─────────────────────────────────────────────────────────

def checkpoint_path(directory, stage: int) -> Path:
    return Path(directory) / f"stage{stage}.crnm"


def save_stage(model: CronosModel, stage: int, directory) -> Path:
    path = checkpoint_path(directory, stage)
    save_checkpoint(module_tensors(f"stage{stage}", model.stage(stage)), path)
    return path


def load_stage(model: CronosModel, stage: int, directory) -> None:
    path = checkpoint_path(directory, stage)
    if not path.exists():
        raise PrerequisiteError(f"stage-{stage} checkpoint {path} not found; train stage {stage} first")
    load_module(f"stage{stage}", model.stage(stage), load_checkpoint(path))
    logger.info("loaded stage %d from %s", stage, path)


def load_model(cfg: TrainConfig, ratio_channels: int, directory, stages: Iterable[int] = STAGES) -> CronosModel:
    model = CronosModel(cfg, ratio_channels)
    for stage in stages:
        load_stage(model, stage, directory)
    model.eval()
    return model


def model_tensors(model: CronosModel) -> Dict[str, torch.Tensor]:
    tensors: Dict[str, torch.Tensor] = {}
    for stage in STAGES:
        tensors.update(module_tensors(f"stage{stage}", model.stage(stage)))
    return tensors

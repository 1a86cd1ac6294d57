# learning/services/training.py
#
# Three-stage training:
#   1. RP encoder + projection by supervised contrastive loss,
#   2. ratio encoder + projection by SupCon plus the consultation loss
#      against the frozen stage-1 branch,
#   3. classifier heads by cross-entropy over frozen representations.
#
# TrainConfig.supcon = False skips stages 1 and 2 and trains encoders and
# heads together in stage 3 by cross-entropy alone. Single-input classifiers
# skip the stage of the branch they never read and train stage 2 without the
# consultation loss.
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch
from tqdm import tqdm

from feig.types import FeatureDataset
from learning.exceptions import MissingPairError, NonFiniteLossError, PrerequisiteError
from learning.services.augment import augment_batch
from learning.services.dataset import check_classes, stratified_batches
from learning.services.inference import CronosModel, build_model, encode
from learning.services.losses import LossDiagnostics, cross_entropy, stage2_loss, supcon_loss
from learning.services.networks import freeze
from learning.services.optim import make_optimizer, optimizer_step
from learning.types import AugmentConfig, ContrastiveBatch, EpochRecord, StageState, TrainConfig

logger = logging.getLogger(__name__)


@dataclass
class TrainingResult:
    model: CronosModel
    history: List[EpochRecord] = field(default_factory=list)
    stages: List[StageState] = field(default_factory=list)

    def updated_stages(self) -> List[int]:
        """Stages whose parameters this run changed, so their checkpoints need rewriting."""
        touched = {int(name.split(".", 1)[0][len("stage"):]) for state in self.stages for name in state.trainable}
        return sorted(touched)


def _stage_rng(seed: int, stage: int, augment_seed: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stage, augment_seed])


def _labels(dataset: FeatureDataset) -> np.ndarray:
    return dataset.labels.astype(np.int64)


def _names(model: CronosModel, stage: int) -> frozenset:
    return frozenset(f"stage{stage}.{n}" for n, _ in model.stage(stage).named_parameters())


def _prefixed(model: CronosModel, stage: int, part: str) -> frozenset:
    return frozenset(name for name in _names(model, stage) if name.startswith(f"stage{stage}.{part}."))


def stage_state(model: CronosModel, stage: int, epochs: int, end_to_end: bool = False) -> StageState:
    """
    Stage `stage` trains its own parameters; every earlier stage is frozen.
    End to end, stage 3 also trains both encoders and only the projections stay frozen.
    """
    if stage == 3 and end_to_end:
        frozen = _prefixed(model, 1, "projection") | _prefixed(model, 2, "projection")
        trainable = _names(model, 3) | _prefixed(model, 1, "encoder") | _prefixed(model, 2, "encoder")
        return StageState(stage=stage, frozen=frozen, trainable=trainable, epochs=epochs)
    frozen = frozenset().union(*(_names(model, s) for s in range(1, stage)))
    return StageState(stage=stage, frozen=frozen, trainable=_names(model, stage), epochs=epochs)


def skipped_state(model: CronosModel, stage: int) -> StageState:
    frozen = frozenset().union(*(_names(model, s) for s in range(1, stage)))
    return StageState(stage=stage, frozen=frozen, trainable=frozenset(), epochs=0)


def _finish_epoch(stage: int, epoch: int, losses: List[float], components: dict,
                  diagnostics: LossDiagnostics) -> EpochRecord:
    loss = float(np.mean(losses))
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"stage {stage} epoch {epoch}: loss is {loss}")
    if diagnostics.total():
        logger.warning("stage %d epoch %d diagnostics: %s", stage, epoch, diagnostics.as_dict())
    record = EpochRecord(stage=stage, epoch=epoch, loss=loss,
                         components={k: float(np.mean(v)) for k, v in components.items()})
    record.components.update({k: float(v) for k, v in diagnostics.as_dict().items()})
    diagnostics.reset()
    logger.info("stage %d epoch %d loss %.5f", stage, epoch, loss)
    return record


def _backward_step(optimizer, loss: torch.Tensor, stage: int) -> None:
    if not bool(torch.isfinite(loss)):
        raise NonFiniteLossError(f"stage {stage}: batch loss is {float(loss)}")
    optimizer.zero_grad()
    loss.backward()
    optimizer_step(optimizer)


# ── Stage 1 ──────────────────────────────────────────────────────────────────

def train_stage1(model: CronosModel, dataset: FeatureDataset, cfg: TrainConfig, augment_cfg: AugmentConfig,
                 seed: int = 0, progress: bool = False) -> List[EpochRecord]:
    labels = _labels(dataset)
    check_classes(labels)
    torch.manual_seed(seed)
    rng = _stage_rng(seed, 1, augment_cfg.seed)
    branch = model.stage1
    branch.train()
    optimizer = make_optimizer(branch.parameters(), cfg.optimizer)
    diagnostics = LossDiagnostics()

    history = []
    for epoch in tqdm(range(1, cfg.epochs_stage1 + 1), desc="stage 1", disable=not progress):
        losses = []
        for index in stratified_batches(labels, cfg.batch_size, rng):
            originals = torch.from_numpy(dataset.rp[index])
            views = augment_batch(originals, augment_cfg, rng)
            z = branch(torch.cat([originals, views]))
            b = len(index)
            y = torch.from_numpy(labels[index])
            loss = supcon_loss(ContrastiveBatch.from_views(z[:b], z[b:], y), cfg.temperature, diagnostics)
            _backward_step(optimizer, loss, 1)
            losses.append(float(loss.detach()))
        history.append(_finish_epoch(1, epoch, losses, {}, diagnostics))
    return history


# ── Stage 2 ──────────────────────────────────────────────────────────────────

def _check_pairs(dataset: FeatureDataset) -> None:
    """Every ratio record needs the RP of its own window for the consultation reference."""
    unusable = np.flatnonzero(~np.isfinite(dataset.rp).reshape(len(dataset), -1).all(axis=1))
    if unusable.size:
        raise MissingPairError(f"{unusable.size} records have no usable paired RP (first: {int(unusable[0])})")


def train_stage2(model: CronosModel, dataset: FeatureDataset, cfg: TrainConfig, augment_cfg: AugmentConfig,
                 seed: int = 0, progress: bool = False) -> List[EpochRecord]:
    labels = _labels(dataset)
    check_classes(labels)
    if cfg.consults:
        _check_pairs(dataset)
    torch.manual_seed(seed)
    rng = _stage_rng(seed, 2, augment_cfg.seed)

    freeze([model.stage1])
    branch = model.stage2
    branch.train()
    optimizer = make_optimizer(branch.parameters(), cfg.optimizer)
    diagnostics = LossDiagnostics()
    loss_cfg = cfg.loss

    history = []
    for epoch in tqdm(range(1, cfg.epochs_stage2 + 1), desc="stage 2", disable=not progress):
        losses, components = [], ({"supcon": [], "consultation": []} if cfg.consults else {"supcon": []})
        for index in stratified_batches(labels, cfg.batch_size, rng):
            originals = torch.from_numpy(dataset.ratio[index])
            views = augment_batch(originals, augment_cfg, rng)
            z = branch(torch.cat([originals, views]))
            b = len(index)
            batch = ContrastiveBatch.from_views(z[:b], z[b:], torch.from_numpy(labels[index]))
            if cfg.consults:
                with torch.no_grad():
                    z_ref = model.stage1(torch.from_numpy(dataset.rp[index]))
                terms = stage2_loss(batch, z_ref, loss_cfg, diagnostics)
                loss = terms.total
                for key, value in terms.as_floats().items():
                    components[key].append(value)
            else:
                loss = supcon_loss(batch, cfg.temperature, diagnostics)
                components["supcon"].append(float(loss.detach()))
            _backward_step(optimizer, loss, 2)
            losses.append(float(loss.detach()))
        history.append(_finish_epoch(2, epoch, losses, components, diagnostics))
    return history


# ── Stage 3 ──────────────────────────────────────────────────────────────────

def train_stage3(model: CronosModel, dataset: FeatureDataset, cfg: TrainConfig,
                 seed: int = 0, progress: bool = False) -> List[EpochRecord]:
    """
    Only the classifier heads learn; representations are computed once.
    End-to-end configurations train in train_end_to_end instead.
    """
    if cfg.end_to_end:
        return train_end_to_end(model, dataset, cfg, seed, progress)
    labels = _labels(dataset)
    check_classes(labels, minimum=1)
    torch.manual_seed(seed)
    rng = _stage_rng(seed, 3)

    freeze([model.stage1, model.stage2])
    v_rp = encode(model.stage1.encoder, dataset.rp)
    v_ratio = encode(model.stage2.encoder, dataset.ratio)
    all_labels = torch.from_numpy(labels)

    heads = model.stage3
    heads.train()
    optimizer = make_optimizer(heads.parameters(), cfg.optimizer)
    diagnostics = LossDiagnostics()
    n_batches = max(1, math.ceil(len(labels) / cfg.batch_size))

    history = []
    for epoch in tqdm(range(1, cfg.epochs_stage3 + 1), desc="stage 3", disable=not progress):
        losses, components = [], {"switch_rate": []}
        for index in np.array_split(rng.permutation(len(labels)), n_batches):
            index = torch.from_numpy(index)
            probs = heads(v_rp[index], v_ratio[index])
            loss = cross_entropy(probs.y_final, all_labels[index], cfg.ce_reduction, diagnostics)
            _backward_step(optimizer, loss, 3)
            losses.append(float(loss.detach()))
            components["switch_rate"].append(float(probs.omega.mean()))
        history.append(_finish_epoch(3, epoch, losses, components, diagnostics))
    return history


def train_end_to_end(model: CronosModel, dataset: FeatureDataset, cfg: TrainConfig,
                     seed: int = 0, progress: bool = False) -> List[EpochRecord]:
    """Encoders and classifier heads learn together from cross-entropy alone."""
    labels = _labels(dataset)
    check_classes(labels, minimum=1)
    torch.manual_seed(seed)
    rng = _stage_rng(seed, 3)

    freeze([model.stage1.projection, model.stage2.projection])
    modules = [model.stage1.encoder, model.stage2.encoder, model.stage3]
    for module in modules:
        module.train()
        module.requires_grad_(True)
    optimizer = make_optimizer(itertools.chain.from_iterable(m.parameters() for m in modules), cfg.optimizer)
    diagnostics = LossDiagnostics()
    n_batches = max(1, math.ceil(len(labels) / cfg.batch_size))

    history = []
    for epoch in tqdm(range(1, cfg.epochs_stage3 + 1), desc="stage 3 (end to end)", disable=not progress):
        losses, components = [], {"switch_rate": []}
        for index in np.array_split(rng.permutation(len(labels)), n_batches):
            probs = model.classify(torch.from_numpy(dataset.rp[index]), torch.from_numpy(dataset.ratio[index]))
            loss = cross_entropy(probs.y_final, torch.from_numpy(labels[index]), cfg.ce_reduction, diagnostics)
            _backward_step(optimizer, loss, 3)
            losses.append(float(loss.detach()))
            components["switch_rate"].append(float(probs.omega.mean()))
        history.append(_finish_epoch(3, epoch, losses, components, diagnostics))
    return history


# ── Orchestration ────────────────────────────────────────────────────────────

def train_stages(model: CronosModel, dataset: FeatureDataset, cfg: TrainConfig, augment_cfg: AugmentConfig,
                 stages, seed: int = 0, trained: Optional[set] = None, progress: bool = False) -> TrainingResult:
    """
    Run the requested stages in order. `trained` names the stages already
    present in `model` (loaded from checkpoints); a stage needs all earlier
    stages either trained here or listed there.
    """
    available = set(trained or ())
    result = TrainingResult(model=model)
    for stage in sorted(stages):
        missing = [s for s in range(1, stage) if s not in available]
        if missing:
            raise PrerequisiteError(f"stage {stage} needs stage(s) {missing} first")
        if cfg.skips(stage):
            logger.info("stage %d skipped by the %s configuration", stage,
                        "cross-entropy only" if not cfg.supcon else cfg.classifier)
            result.stages.append(skipped_state(model, stage))
            available.add(stage)
            continue
        if stage == 1:
            history = train_stage1(model, dataset, cfg, augment_cfg, seed, progress)
        elif stage == 2:
            history = train_stage2(model, dataset, cfg, augment_cfg, seed, progress)
        else:
            history = train_stage3(model, dataset, cfg, seed, progress)
        result.history.extend(history)
        result.stages.append(stage_state(model, stage, cfg.epochs(stage), cfg.end_to_end))
        available.add(stage)
    return result


def train_all(dataset: FeatureDataset, cfg: TrainConfig, augment_cfg: AugmentConfig,
              seed: int = 0, progress: bool = False) -> TrainingResult:
    model = build_model(cfg, dataset.ratio_channels, seed)
    return train_stages(model, dataset, cfg, augment_cfg, (1, 2, 3), seed, progress=progress)

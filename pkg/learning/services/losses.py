# learning/services/losses.py
#
# Supervised contrastive loss, consultation loss, the stage-2 composite and
# the stage-3 cross-entropy. Labels are case ids 1..4 throughout.
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import torch

from learning.exceptions import NonFiniteLossError, ShapeMismatchError
from learning.types import ContrastiveBatch, LossConfig

logger = logging.getLogger(__name__)

STATIC_CASES = (1, 2, 3)
DYNAMIC_CASE = 4
PROBABILITY_FLOOR = 1e-12
# sqrt has an infinite slope at 0
DISTANCE_FLOOR_SQ = 1e-18


@dataclass
class LossDiagnostics:
    """Counts the recoverable conditions the losses hit; reset by the training loop each epoch."""
    counts: Dict[str, int] = field(default_factory=lambda: {
        "empty_positive_anchors": 0,
        "empty_static_pairs": 0,
        "empty_dynamic_pairs": 0,
        "clamped_probabilities": 0,
    })

    def record(self, kind: str, amount: int = 1) -> None:
        self.counts[kind] = self.counts.get(kind, 0) + int(amount)

    def reset(self) -> None:
        for key in self.counts:
            self.counts[key] = 0

    def total(self) -> int:
        return sum(self.counts.values())

    def as_dict(self) -> Dict[str, int]:
        return dict(self.counts)


@dataclass
class LossTerms:
    total: torch.Tensor
    supcon: torch.Tensor
    consultation: torch.Tensor

    def as_floats(self) -> Dict[str, float]:
        return {
            "supcon": float(self.supcon.detach()),
            "consultation": float(self.consultation.detach()),
        }


def _check_finite(z: torch.Tensor, what: str) -> None:
    if not bool(torch.isfinite(z).all()):
        raise NonFiniteLossError(f"{what} contain non-finite values")


# ── Supervised contrastive loss ─────────────────────────────────────────────

def supcon_loss(batch: ContrastiveBatch, temperature: float = 0.07,
                diagnostics: Optional[LossDiagnostics] = None) -> torch.Tensor:
    """
    Sum over anchors of the mean negative log-likelihood of each positive
    among all other views. Anchors without a positive are left out of the
    sum; the remaining anchors keep their own normalization.
    """
    return projection_supcon(batch.projections, batch.labels, temperature, diagnostics)


def projection_supcon(z: torch.Tensor, labels: torch.Tensor, temperature: float = 0.07,
                      diagnostics: Optional[LossDiagnostics] = None) -> torch.Tensor:
    """Same loss over any set of projections, paired views or not."""
    _check_finite(z, "projections")
    n = z.shape[0]

    logits = z @ z.T / temperature
    self_mask = torch.eye(n, dtype=torch.bool, device=z.device)
    log_denominator = torch.logsumexp(logits.masked_fill(self_mask, float("-inf")), dim=1, keepdim=True)
    log_prob = logits - log_denominator

    positives = (labels[:, None] == labels[None, :]) & ~self_mask
    n_positives = positives.sum(dim=1)
    has_positive = n_positives > 0

    skipped = int((~has_positive).sum())
    if skipped:
        logger.warning("supcon: %d of %d anchors have no positive and are skipped", skipped, n)
        if diagnostics is not None:
            diagnostics.record("empty_positive_anchors", skipped)
    if not bool(has_positive.any()):
        return z.sum() * 0.0

    per_anchor = (log_prob * positives).sum(dim=1)[has_positive] / n_positives[has_positive]
    return -per_anchor.sum()


# ── Consultation loss ───────────────────────────────────────────────────────

def _pair_distances(z: torch.Tensor) -> torch.Tensor:
    diff = z[:, None, :] - z[None, :, :]
    return torch.sqrt(torch.clamp((diff * diff).sum(dim=-1), min=DISTANCE_FLOOR_SQ))


def _pair_masks(labels: torch.Tensor):
    n = labels.shape[0]
    upper = torch.triu(torch.ones(n, n, dtype=torch.bool, device=labels.device), diagonal=1)
    static = (labels >= STATIC_CASES[0]) & (labels <= STATIC_CASES[-1])
    dynamic = labels == DYNAMIC_CASE

    static_pairs = upper & static[:, None] & static[None, :] & (labels[:, None] != labels[None, :])
    mixed_pairs = upper & ((static[:, None] & dynamic[None, :]) | (dynamic[:, None] & static[None, :]))
    return static_pairs, mixed_pairs


def _masked_mean(distances: torch.Tensor, mask: torch.Tensor, kind: str, what: str,
                 diagnostics: Optional[LossDiagnostics]) -> torch.Tensor:
    if not bool(mask.any()):
        logger.warning("consultation: batch has no %s pairs, mean taken as 0", what)
        if diagnostics is not None:
            diagnostics.record(kind)
        return distances.sum() * 0.0
    return distances[mask].mean()


def consultation_loss(z_ratio: torch.Tensor, z_rp_ref: torch.Tensor, labels: torch.Tensor,
                      diagnostics: Optional[LossDiagnostics] = None) -> torch.Tensor:
    """
    |mean distance between ratio projections of different static cases
     - mean distance between reference RP projections of static/dynamic pairs|
    """
    if z_ratio.shape != z_rp_ref.shape or z_ratio.shape[0] != labels.shape[0]:
        raise ShapeMismatchError(
            f"z_ratio {tuple(z_ratio.shape)}, z_rp_ref {tuple(z_rp_ref.shape)}, labels {tuple(labels.shape)}"
        )
    _check_finite(z_ratio, "ratio projections")
    _check_finite(z_rp_ref, "reference projections")

    static_pairs, mixed_pairs = _pair_masks(labels)
    static_mean = _masked_mean(_pair_distances(z_ratio), static_pairs, "empty_static_pairs",
                               "distinct static-case", diagnostics)
    mixed_mean = _masked_mean(_pair_distances(z_rp_ref), mixed_pairs, "empty_dynamic_pairs",
                              "static/dynamic", diagnostics)
    return torch.abs(static_mean - mixed_mean)


def stage2_loss(batch: ContrastiveBatch, z_rp_ref: torch.Tensor, cfg: LossConfig,
                diagnostics: Optional[LossDiagnostics] = None) -> LossTerms:
    """SupCon over originals and views, plus λ times the consultation loss on the originals."""
    supcon = supcon_loss(batch, cfg.temperature, diagnostics)
    b = batch.batch_size
    consultation = consultation_loss(batch.projections[:b], z_rp_ref, batch.labels[:b], diagnostics)
    if cfg.consultation_weight == 0:
        total = supcon
    else:
        total = supcon + cfg.consultation_weight * consultation
    return LossTerms(total=total, supcon=supcon, consultation=consultation)


# ── Cross-entropy on class probabilities ────────────────────────────────────

def cross_entropy(probabilities: torch.Tensor, labels: torch.Tensor, reduction: str = "mean",
                  diagnostics: Optional[LossDiagnostics] = None) -> torch.Tensor:
    if probabilities.ndim != 2 or probabilities.shape[0] != labels.shape[0]:
        raise ShapeMismatchError(
            f"probabilities {tuple(probabilities.shape)} do not match labels {tuple(labels.shape)}"
        )
    picked = probabilities.gather(1, (labels.long() - 1)[:, None])[:, 0]
    clamped = int((picked < PROBABILITY_FLOOR).sum())
    if clamped:
        logger.warning("cross-entropy: %d true-class probabilities clamped at %g", clamped, PROBABILITY_FLOOR)
        if diagnostics is not None:
            diagnostics.record("clamped_probabilities", clamped)
        picked = torch.clamp(picked, min=PROBABILITY_FLOOR)

    losses = -torch.log(picked)
    loss = losses.sum() if reduction == "sum" else losses.mean()
    if not bool(torch.isfinite(loss)):
        raise NonFiniteLossError("cross-entropy is not finite")
    return loss

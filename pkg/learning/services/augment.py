# learning/services/augment.py
#
# Random resized crop plus horizontal flip, drawn from a numpy Generator so
# that a seeded run replays the same views.
import logging
import math
from typing import Tuple

import numpy as np
import torch
import torch.nn.functional as F

from learning.types import AugmentConfig

logger = logging.getLogger(__name__)

CROP_ATTEMPTS = 10


def crop_box(height: int, width: int, cfg: AugmentConfig, rng: np.random.Generator) -> Tuple[int, int, int, int]:
    """(top, left, h, w) of a crop covering an area fraction in crop_scale with aspect in aspect_range."""
    area = height * width
    log_low, log_high = math.log(cfg.aspect_range[0]), math.log(cfg.aspect_range[1])
    for _ in range(CROP_ATTEMPTS):
        target_area = area * rng.uniform(cfg.crop_scale[0], cfg.crop_scale[1])
        aspect = math.exp(rng.uniform(log_low, log_high))
        w = int(round(math.sqrt(target_area * aspect)))
        h = int(round(math.sqrt(target_area / aspect)))
        if 0 < w <= width and 0 < h <= height:
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w + 1))
            return top, left, h, w
    return 0, 0, height, width


def augment(image: torch.Tensor, cfg: AugmentConfig, rng: np.random.Generator) -> torch.Tensor:
    """C x h x w in, C x h x w out; every channel sees the same crop and flip."""
    _, height, width = image.shape
    top, left, h, w = crop_box(height, width, cfg, rng)
    out = image[:, top:top + h, left:left + w]
    if (h, w) != (height, width):
        out = F.interpolate(out[None], size=(height, width), mode="bilinear", align_corners=False)[0]
    if rng.random() < cfg.flip_prob:
        out = torch.flip(out, dims=(-1,))
    return out.contiguous()


def augment_batch(images: torch.Tensor, cfg: AugmentConfig, rng: np.random.Generator) -> torch.Tensor:
    return torch.stack([augment(image, cfg, rng) for image in images])

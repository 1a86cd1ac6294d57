# feig/services/ratio.py
#
# CSI ratio of two transmission pairs and its complex-plane binary image.
# The common oscillator offset e^{-jφ} cancels in the division.
import itertools
import logging
from typing import List

import numpy as np

from csi.types import CsiFrame
from feig.exceptions import AntennaIndexError, DegenerateDenominatorError, EmptyInputError, ImageShapeError
from feig.types import BinaryImage, RatioCouple, RatioVector

logger = logging.getLogger(__name__)

# denominators below this fraction of the frame's largest |h| are rejected
DENOMINATOR_EPS = 1e-9
# farthest point from the centroid lands at this fraction of min(w, h) / 2
FILL_FRACTION = 0.9


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def ratio_couples(n_tx: int, n_rx: int, q: int) -> List[RatioCouple]:
    """First q couples of transmission pairs, lexicographic over ((m1, n1), (m2, n2))."""
    pairs = [(m, n) for m in range(1, n_tx + 1) for n in range(1, n_rx + 1)]
    couples = [RatioCouple(a, b) for a, b in itertools.combinations(pairs, 2)]
    if not 1 <= q <= len(couples):
        raise AntennaIndexError(f"{n_tx}x{n_rx} antennas give {len(couples)} couples, {q} requested")
    return couples[:q]


def csi_ratio(frame: CsiFrame, couple: RatioCouple) -> RatioVector:
    """r_k = h_{α1,k} / h_{α2,k}."""
    for m, n in (couple.numerator, couple.denominator):
        if not (1 <= m <= frame.n_tx and 1 <= n <= frame.n_rx):
            raise AntennaIndexError(f"transmission pair ({m},{n}) outside {frame.n_tx}x{frame.n_rx}")

    num = frame.values[couple.numerator[0] - 1, couple.numerator[1] - 1]
    den = frame.values[couple.denominator[0] - 1, couple.denominator[1] - 1]
    floor = DENOMINATOR_EPS * np.abs(frame.values).max()
    weak = np.flatnonzero(np.abs(den) <= floor)
    if weak.size:
        k = int(weak[0])
        raise DegenerateDenominatorError(
            f"{couple.label()} at t={frame.timestamp}: |denominator| <= {floor:.3g} on subcarrier {k}",
            subcarrier=k,
        )
    return RatioVector(values=num / den, couple=couple, timestamp=frame.timestamp)


def rasterize_binary(ratio: RatioVector, width: int = 32, height: int = 32) -> BinaryImage:
    """
    Map the K ratio points onto an h x w grid around their centroid.

    The scale puts the farthest point at 90 % of min(w, h) / 2; imaginary
    parts grow upwards (decreasing row index). Out-of-range rounding clamps
    to the border.
    """
    points = np.asarray(ratio.values, dtype=np.complex128)
    if points.size == 0:
        raise EmptyInputError("no ratio points to rasterize")
    if width < 1 or height < 1:
        raise ImageShapeError(f"image size must be positive, got {width}x{height}")

    centroid = complex(points.mean())
    offsets = points - centroid
    radius = float(np.abs(offsets).max())
    scale = FILL_FRACTION * min(width, height) / 2 / radius if radius > 0 else 1.0

    cols = np.clip(_round_half_up(offsets.real * scale + width // 2), 0, width - 1)
    rows = np.clip(_round_half_up(height // 2 - offsets.imag * scale), 0, height - 1)

    pixels = np.zeros((height, width), dtype=np.uint8)
    pixels[rows, cols] = 1
    return BinaryImage(pixels=pixels, centroid=centroid, scale=scale, rows=rows, cols=cols)

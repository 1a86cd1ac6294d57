# feig/services/colorization.py
#
# Position values p = Re(r) + Im(r) are coloured on a red → purple hue bar
# whose ends come from the empty room; colours are then flattened to gray and
# the Q couples stacked into one tensor.
import logging
from typing import List, Sequence, Tuple

import numpy as np
from matplotlib.colors import hsv_to_rgb

from csi.types import CsiFrame, CsiSeries
from feig.exceptions import CalibrationError, ImageShapeError, InsufficientHistoryError
from feig.services.ratio import csi_ratio, rasterize_binary
from feig.types import (
    BinaryImage,
    ColorCalibration,
    GrayImage,
    MergedRatioImage,
    RatioCouple,
    RatioVector,
    RgbImage,
)

logger = logging.getLogger(__name__)

HUE_SPAN_DEG = 270.0
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def _round_half_up(x) -> np.ndarray:
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def position_values(ratio: RatioVector) -> np.ndarray:
    return ratio.values.real + ratio.values.imag


def calibrate_colormap(empty_series: CsiSeries, couple: RatioCouple, tau_c: int,
                       couple_index: int = 0) -> ColorCalibration:
    """p_min / p_max over k of the time-averaged ratio of the last τ_c empty-room frames."""
    if empty_series.label != 1:
        raise CalibrationError(f"colour calibration needs the empty room (case 1), got label {empty_series.label}")
    if tau_c < 1 or len(empty_series) < tau_c:
        raise InsufficientHistoryError(f"series has {len(empty_series)} frames, calibration needs {tau_c}")

    begin = len(empty_series) - tau_c
    ratios = np.stack([csi_ratio(empty_series.frame(i), couple).values for i in range(begin, len(empty_series))])
    mean_ratio = ratios.mean(axis=0)
    p = mean_ratio.real + mean_ratio.imag
    cal = ColorCalibration(p_min=float(p.min()), p_max=float(p.max()), window=tau_c, couple_index=couple_index)
    logger.info("colour bar for %s: p in [%.4f, %.4f]", couple.label(), cal.p_min, cal.p_max)
    return cal


def hue_angles(p: np.ndarray, cal: ColorCalibration) -> np.ndarray:
    """
    Hue in degrees: 0 (red) at or above p_max, 270 (purple) at or below p_min.
    A degenerate bar (p_min == p_max) paints every point red.
    """
    p = np.asarray(p, dtype=np.float64)
    span = cal.p_max - cal.p_min
    if span <= 0:
        return np.zeros_like(p)
    inner = HUE_SPAN_DEG * (cal.p_max - p) / span
    return np.select([p >= cal.p_max, p <= cal.p_min], [0.0, HUE_SPAN_DEG], default=inner)


def point_colors(p: np.ndarray, cal: ColorCalibration, s: int = 255) -> np.ndarray:
    """K x 3 integer colours in [0, s] (HSV with S = V = 1)."""
    hue = hue_angles(p, cal) / 360.0
    hsv = np.stack([hue, np.ones_like(hue), np.ones_like(hue)], axis=-1)
    return _round_half_up(hsv_to_rgb(hsv) * s)


def colorize(binary: BinaryImage, ratio: RatioVector, cal: ColorCalibration, s: int = 255) -> RgbImage:
    """White background; every placed point gets its colour, later k winning a shared pixel."""
    if len(binary.rows) != ratio.values.size:
        raise ImageShapeError("binary image was not rasterized from this ratio vector")

    height, width = binary.pixels.shape
    colors = point_colors(position_values(ratio), cal, s)
    flat = binary.rows * width + binary.cols
    # last occurrence of every pixel
    _, first_in_reversed = np.unique(flat[::-1], return_index=True)
    winners = flat.size - 1 - first_in_reversed

    pixels = np.full((3, height * width), s, dtype=np.int64)
    pixels[:, flat[winners]] = colors[winners].T
    return RgbImage(pixels=pixels.reshape(3, height, width), s=s)


def to_gray(rgb: RgbImage) -> GrayImage:
    luma = np.tensordot(LUMA_WEIGHTS, rgb.pixels.astype(np.float64), axes=(0, 0))
    return GrayImage(pixels=_round_half_up(luma)[None], s=rgb.s)


def merge_channels(grays: Sequence[GrayImage], s: int = 255) -> MergedRatioImage:
    if not grays:
        raise ImageShapeError("nothing to merge")
    shape = grays[0].pixels.shape
    for gray in grays[1:]:
        if gray.pixels.shape != shape:
            raise ImageShapeError(f"gray image {gray.pixels.shape} does not match {shape}")
    stacked = np.concatenate([g.pixels for g in grays], axis=0)
    return MergedRatioImage(values=stacked / s)


def couple_layers(frame: CsiFrame, couple: RatioCouple, cal: ColorCalibration,
                  width: int = 32, height: int = 32, s: int = 255) -> Tuple[BinaryImage, RgbImage, GrayImage]:
    ratio = csi_ratio(frame, couple)
    binary = rasterize_binary(ratio, width, height)
    rgb = colorize(binary, ratio, cal, s)
    return binary, rgb, to_gray(rgb)


def static_feature_image(frame: CsiFrame, couples: Sequence[RatioCouple], cals: Sequence[ColorCalibration],
                         width: int = 32, height: int = 32, s: int = 255) -> MergedRatioImage:
    if len(couples) != len(cals) or not couples:
        raise CalibrationError(f"{len(couples)} couples but {len(cals)} colour calibrations")
    grays: List[GrayImage] = [
        couple_layers(frame, couple, cal, width, height, s)[2] for couple, cal in zip(couples, cals)
    ]
    return merge_channels(grays, s)


def color_feature_image(frame: CsiFrame, couples: Sequence[RatioCouple], cals: Sequence[ColorCalibration],
                        width: int = 32, height: int = 32, s: int = 255) -> MergedRatioImage:
    """The Q colour images stacked as 3Q channels scaled by 1/s, without the gray merge."""
    if len(couples) != len(cals) or not couples:
        raise CalibrationError(f"{len(couples)} couples but {len(cals)} colour calibrations")
    rgbs = [couple_layers(frame, couple, cal, width, height, s)[1] for couple, cal in zip(couples, cals)]
    return MergedRatioImage(values=np.concatenate([rgb.pixels for rgb in rgbs], axis=0) / s)

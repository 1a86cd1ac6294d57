# feig/services/recurrence.py
#
# Dynamic feature: the subcarrier-averaged amplitude difference between two
# receive antennas, windowed over τ samples and turned into a recurrence plot.
import logging
from typing import Tuple

import numpy as np
from scipy.spatial.distance import cdist

from csi.types import CsiFrame, CsiSeries
from feig.exceptions import (
    AntennaIndexError,
    CalibrationError,
    EmptyInputError,
    InsufficientHistoryError,
)
from feig.types import DynamicFeatureWindow, RecurrencePlot, RpThreshold

logger = logging.getLogger(__name__)


def _check_antennas(dims: Tuple[int, int, int], m: int, n1: int, n2: int) -> None:
    n_tx, n_rx, _ = dims
    if not 1 <= m <= n_tx:
        raise AntennaIndexError(f"transmit antenna {m} out of range 1..{n_tx}")
    for n in (n1, n2):
        if not 1 <= n <= n_rx:
            raise AntennaIndexError(f"receive antenna {n} out of range 1..{n_rx}")
    if n1 == n2:
        raise AntennaIndexError("receive antennas must differ")


def _pairwise_abs(values: np.ndarray) -> np.ndarray:
    column = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    return cdist(column, column, metric="cityblock")


# ── Amplitude difference and its subcarrier average ─────────────────────────

def amplitude_difference(frame: CsiFrame, m: int, n1: int, n2: int) -> np.ndarray:
    """| |h_{m,n1,k}| - |h_{m,n2,k}| | for every subcarrier k (antennas 1-based)."""
    _check_antennas(frame.shape, m, n1, n2)
    return np.abs(np.abs(frame.values[m - 1, n1 - 1]) - np.abs(frame.values[m - 1, n2 - 1]))


def subcarrier_average(diff: np.ndarray) -> float:
    diff = np.asarray(diff, dtype=np.float64)
    if diff.size == 0:
        raise EmptyInputError("cannot average an empty subcarrier vector")
    return float(diff.mean())


def dynamic_feature(series: CsiSeries, m: int, rx_pair: Tuple[int, int]) -> np.ndarray:
    """d̄^t for every frame of the series, shape (T,)."""
    n1, n2 = rx_pair
    _check_antennas(series.dims, m, n1, n2)
    amplitude = np.abs(series.values[:, m - 1])
    return np.abs(amplitude[:, n1 - 1] - amplitude[:, n2 - 1]).mean(axis=-1)


def df_window(series: CsiSeries, m: int, rx_pair: Tuple[int, int], t: int, tau: int) -> DynamicFeatureWindow:
    """Window [d̄^{t-τ+1}, ..., d̄^t]; t is a frame position in the series."""
    if tau < 1:
        raise InsufficientHistoryError(f"tau must be >= 1, got {tau}")
    if t < tau - 1 or t >= len(series):
        raise InsufficientHistoryError(
            f"window of {tau} ending at frame {t} needs frames {t - tau + 1}..{t} of {len(series)}"
        )
    values = dynamic_feature(series.slice(t - tau + 1, t + 1), m, rx_pair)
    return DynamicFeatureWindow(values=values, tx_antenna=m, rx_pair=tuple(rx_pair),
                                end_timestamp=series.start + t)


# ── Threshold calibration ───────────────────────────────────────────────────

def gamma_from_distances(distances: np.ndarray, quantile: float) -> float:
    """Smallest element of the set whose empirical CDF reaches the quantile."""
    distances = np.asarray(distances, dtype=np.float64).ravel()
    if distances.size == 0:
        raise EmptyInputError("no distances to calibrate from")
    if not 0 < quantile <= 1:
        raise CalibrationError(f"quantile must be in (0, 1], got {quantile}")
    return float(np.quantile(distances, quantile, method="inverted_cdf"))


def calibrate_gamma(empty_series: CsiSeries, m: int, rx_pair: Tuple[int, int],
                    tau_gamma: int, quantile: float = 0.9) -> RpThreshold:
    """
    γ from the empty room: D_e holds |d̄^{t1} - d̄^{t2}| over every ordered pair
    (t1, t2) of the last τ_γ frames, the t1 == t2 zeros included.
    """
    if empty_series.label != 1:
        raise CalibrationError(f"threshold calibration needs the empty room (case 1), got label {empty_series.label}")
    if len(empty_series) < tau_gamma:
        raise InsufficientHistoryError(f"series has {len(empty_series)} frames, calibration needs {tau_gamma}")

    recent = empty_series.slice(len(empty_series) - tau_gamma, len(empty_series))
    distances = _pairwise_abs(dynamic_feature(recent, m, rx_pair))
    gamma = gamma_from_distances(distances, quantile)
    logger.info("calibrated RP threshold gamma=%.6g (quantile %.2f over %d frames)", gamma, quantile, tau_gamma)
    return RpThreshold(gamma=gamma, quantile=quantile, calibration_window=tau_gamma)


# ── Recurrence plot ─────────────────────────────────────────────────────────

def recurrence_plot(window: DynamicFeatureWindow, gamma: float) -> RecurrencePlot:
    """pixel(t1, t2) = 1 iff |values[t1] - values[t2]| <= γ."""
    if gamma < 0:
        raise CalibrationError(f"gamma must be >= 0, got {gamma}")
    pixels = (_pairwise_abs(window.values) <= gamma).astype(np.uint8)
    return RecurrencePlot(pixels=pixels)


def resize_nearest(pixels: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resampling; source index floor(i · τ / size) keeps binary values."""
    rows = (np.arange(height) * pixels.shape[0]) // height
    cols = (np.arange(width) * pixels.shape[1]) // width
    return pixels[np.ix_(rows, cols)]


def rp_image(plot: RecurrencePlot, height: int = 32, width: int = 32) -> np.ndarray:
    """Encoder input, 1 x h x w float32 with 1.0 for recurrent pixels."""
    return resize_nearest(plot.pixels, height, width).astype(np.float32)[None]

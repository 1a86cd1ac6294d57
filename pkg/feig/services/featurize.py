# feig/services/featurize.py
#
# Paired feature records: for every window end t, the RP of the τ frames up to
# t and the merged ratio image of frame t.
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence

import numpy as np

from csi.types import CsiSeries
from feig.exceptions import CalibrationError, InsufficientHistoryError
from feig.services.colorization import calibrate_colormap, color_feature_image, static_feature_image
from feig.services.ratio import ratio_couples
from feig.services.recurrence import calibrate_gamma, dynamic_feature, recurrence_plot, rp_image
from feig.types import (
    SPLIT_GUARD,
    SPLIT_TEST,
    SPLIT_TRAIN,
    DynamicFeatureWindow,
    FeatureCalibration,
    FeatureDataset,
    FeatureConfig,
)

logger = logging.getLogger(__name__)


def train_frame_count(train_windows: int, tau: int) -> int:
    """Frames that belong to train windows only."""
    return train_windows + tau - 1


def window_split(t: int, tau: int, train_windows: Optional[int]) -> int:
    """
    Split of the window ending at frame t. Train windows end before the
    boundary frame, test windows start at or after it, the τ - 1 windows
    straddling it are guard windows.
    """
    if train_windows is None:
        return SPLIT_TRAIN
    boundary = train_frame_count(train_windows, tau)
    if t < boundary:
        return SPLIT_TRAIN
    if t - tau + 1 >= boundary:
        return SPLIT_TEST
    return SPLIT_GUARD


def calibrate_features(empty_series: CsiSeries, cfg: FeatureConfig,
                       train_windows: Optional[int] = None) -> FeatureCalibration:
    """γ and the Q colour bars from the train part of the empty-room series."""
    if empty_series.label != 1:
        raise CalibrationError("calibration needs case-1 (empty room) data")
    if train_windows is not None:
        empty_series = empty_series.slice(0, min(len(empty_series), train_frame_count(train_windows, cfg.tau)))

    n_tx, n_rx, _ = empty_series.dims
    couples = ratio_couples(n_tx, n_rx, cfg.n_couples)
    threshold = calibrate_gamma(empty_series, cfg.tx_antenna, cfg.rx_pair, cfg.tau_gamma, cfg.quantile)
    colors = tuple(calibrate_colormap(empty_series, couple, cfg.tau_c, couple_index=q)
                   for q, couple in enumerate(couples))
    return FeatureCalibration(threshold=threshold, couples=tuple(couples), colors=colors)


def featurize_series(series: CsiSeries, calibration: FeatureCalibration, cfg: FeatureConfig,
                     train_windows: Optional[int] = None, source: int = 0) -> FeatureDataset:
    """One record per usable window end: T - τ + 1 records."""
    if len(series) < cfg.tau:
        raise InsufficientHistoryError(f"series {source} has {len(series)} frames, tau is {cfg.tau}")

    features = dynamic_feature(series, cfg.tx_antenna, cfg.rx_pair)
    ends = np.arange(cfg.tau - 1, len(series))
    rp = np.empty((ends.size, 1, cfg.height, cfg.width), dtype=np.float32)
    ratio = np.empty((ends.size, cfg.ratio_channels, cfg.height, cfg.width), dtype=np.float32)
    ratio_image = static_feature_image if cfg.merge_channels else color_feature_image

    for i, t in enumerate(ends):
        window = DynamicFeatureWindow(values=features[t - cfg.tau + 1: t + 1], tx_antenna=cfg.tx_antenna,
                                      rx_pair=tuple(cfg.rx_pair), end_timestamp=series.start + int(t))
        plot = recurrence_plot(window, calibration.threshold.gamma)
        rp[i] = rp_image(plot, cfg.height, cfg.width)
        ratio[i] = ratio_image(series.frame(int(t)), calibration.couples, calibration.colors,
                                        cfg.width, cfg.height, cfg.s).values

    label = series.label or 0
    return FeatureDataset(
        labels=np.full(ends.size, label, dtype=np.uint8),
        splits=np.array([window_split(int(t), cfg.tau, train_windows) for t in ends], dtype=np.uint8),
        sources=np.full(ends.size, source, dtype=np.uint16),
        timestamps=(series.start + ends).astype(np.uint32),
        rp=rp,
        ratio=ratio,
    )


def _featurize_job(args):
    series, calibration, cfg, train_windows, source = args
    return featurize_series(series, calibration, cfg, train_windows, source)


def featurize_all(series_list: Sequence[CsiSeries], calibration: FeatureCalibration, cfg: FeatureConfig,
                  train_windows: Optional[int] = None, workers: int = 1) -> FeatureDataset:
    """Featurize every series (source = list position); output order follows the input."""
    jobs = [(series, calibration, cfg, train_windows, source) for source, series in enumerate(series_list)]
    if workers <= 1 or len(jobs) <= 1:
        parts: List[FeatureDataset] = [_featurize_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            parts = list(pool.map(_featurize_job, jobs))

    dataset = FeatureDataset.concatenate(parts)
    dataset.meta.update({"calibration": calibration.to_dict(), "tau": cfg.tau})
    logger.info("featurized %d series into %d records (%d workers)", len(jobs), len(dataset), workers)
    return dataset

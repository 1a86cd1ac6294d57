# feig/types.py
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from feig.exceptions import AntennaIndexError, CalibrationError, FeigError, ImageShapeError

# (m, n), 1-based
TransmissionPair = Tuple[int, int]


# ─────────────────────────────────────────────────────────────────────────────
#  Dynamic feature: recurrence plots
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class DynamicFeatureWindow:
    """τ consecutive subcarrier-averaged amplitude differences ending at end_timestamp."""
    values: np.ndarray
    tx_antenna: int
    rx_pair: Tuple[int, int]
    end_timestamp: int

    def __post_init__(self):
        if self.rx_pair[0] == self.rx_pair[1]:
            raise AntennaIndexError(f"receive antennas of a pair must differ, got {self.rx_pair}")
        if self.values.ndim != 1 or self.values.size == 0:
            raise FeigError("window values must be a non-empty vector")
        if np.any(self.values < 0):
            raise FeigError("amplitude differences are absolute values")

    @property
    def tau(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class RpThreshold:
    gamma: float
    quantile: float
    calibration_window: int

    def __post_init__(self):
        if self.gamma < 0:
            raise CalibrationError(f"gamma must be >= 0, got {self.gamma}")
        if not 0 < self.quantile <= 1:
            raise CalibrationError(f"quantile must be in (0, 1], got {self.quantile}")

    def to_dict(self) -> Dict:
        return {"gamma": self.gamma, "quantile": self.quantile, "calibration_window": self.calibration_window}

    @classmethod
    def from_dict(cls, data: Dict) -> "RpThreshold":
        return cls(gamma=float(data["gamma"]), quantile=float(data["quantile"]),
                   calibration_window=int(data["calibration_window"]))


@dataclass(frozen=True)
class RecurrencePlot:
    """
    τ x τ matrix over {0, 1}, 1 = black (recurrent). Rows and columns run in
    ascending time; renderers flip the rows for display.
    """
    pixels: np.ndarray

    @property
    def white_fraction(self) -> float:
        return float(np.mean(self.pixels == 0))


# ─────────────────────────────────────────────────────────────────────────────
#  Static feature: CSI ratio images
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class RatioCouple:
    numerator: TransmissionPair
    denominator: TransmissionPair

    def __post_init__(self):
        if self.numerator == self.denominator:
            raise AntennaIndexError("a couple needs two different transmission pairs")

    def label(self) -> str:
        (m1, n1), (m2, n2) = self.numerator, self.denominator
        return f"h{m1}{n1}/h{m2}{n2}"

    def to_list(self) -> List[List[int]]:
        return [list(self.numerator), list(self.denominator)]

    @classmethod
    def from_list(cls, data) -> "RatioCouple":
        return cls(numerator=tuple(data[0]), denominator=tuple(data[1]))


@dataclass(frozen=True)
class RatioVector:
    values: np.ndarray
    couple: RatioCouple
    timestamp: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise FeigError(f"CSI ratio {self.couple.label()} at t={self.timestamp} is not finite")


@dataclass(frozen=True)
class BinaryImage:
    """h x w pixels plus the mapping that placed point k at (rows[k], cols[k])."""
    pixels: np.ndarray
    centroid: complex
    scale: float
    rows: np.ndarray
    cols: np.ndarray

    @property
    def set_count(self) -> int:
        return int(self.pixels.sum())


@dataclass(frozen=True)
class ColorCalibration:
    p_min: float
    p_max: float
    window: int
    couple_index: int

    def __post_init__(self):
        if self.p_min > self.p_max:
            raise CalibrationError(f"p_min {self.p_min} > p_max {self.p_max}")

    def to_dict(self) -> Dict:
        return {"p_min": self.p_min, "p_max": self.p_max, "window": self.window, "couple_index": self.couple_index}

    @classmethod
    def from_dict(cls, data: Dict) -> "ColorCalibration":
        return cls(p_min=float(data["p_min"]), p_max=float(data["p_max"]),
                   window=int(data["window"]), couple_index=int(data["couple_index"]))


@dataclass(frozen=True)
class RgbImage:
    """3 x h x w integers in [0, s]."""
    pixels: np.ndarray
    s: int = 255


@dataclass(frozen=True)
class GrayImage:
    """1 x h x w integers in [0, s]."""
    pixels: np.ndarray
    s: int = 255


@dataclass(frozen=True)
class MergedRatioImage:
    """Q x h x w reals in [0, 1]; channel q comes from couple q only."""
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ImageShapeError(f"merged image must be Q x h x w, got {self.values.shape}")


# ─────────────────────────────────────────────────────────────────────────────
#  Featurization settings and outputs
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class FeatureConfig:
    tau: int = 50
    tau_gamma: int = 500
    tau_c: int = 500
    quantile: float = 0.9
    n_couples: int = 3
    width: int = 32
    height: int = 32
    s: int = 255
    tx_antenna: int = 1
    rx_pair: Tuple[int, int] = (1, 2)
    merge_channels: bool = True

    def __post_init__(self):
        for name in ("tau", "tau_gamma", "tau_c", "n_couples", "width", "height", "s"):
            if getattr(self, name) < 1:
                raise FeigError(f"feig.{name} must be >= 1")
        if not 0 < self.quantile <= 1:
            raise FeigError("feig.quantile must be in (0, 1]")
        if len(self.rx_pair) != 2 or self.rx_pair[0] == self.rx_pair[1]:
            raise AntennaIndexError("feig.rx_pair must name two different receive antennas")

    @property
    def ratio_channels(self) -> int:
        """Q gray channels when merged, otherwise the 3Q colour channels of the couples."""
        return self.n_couples if self.merge_channels else 3 * self.n_couples


@dataclass(frozen=True)
class FeatureCalibration:
    """Everything derived from the empty room that featurization needs."""
    threshold: RpThreshold
    couples: Tuple[RatioCouple, ...]
    colors: Tuple[ColorCalibration, ...]

    def to_dict(self) -> Dict:
        return {
            "threshold": self.threshold.to_dict(),
            "couples": [c.to_list() for c in self.couples],
            "colors": [c.to_dict() for c in self.colors],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "FeatureCalibration":
        return cls(
            threshold=RpThreshold.from_dict(data["threshold"]),
            couples=tuple(RatioCouple.from_list(c) for c in data["couples"]),
            colors=tuple(ColorCalibration.from_dict(c) for c in data["colors"]),
        )


SPLIT_TRAIN = 0
SPLIT_TEST = 1
SPLIT_GUARD = 2
SPLIT_NAMES = {SPLIT_TRAIN: "train", SPLIT_TEST: "test", SPLIT_GUARD: "guard"}


@dataclass
class FeatureDataset:
    """
    Paired feature images, one record per window end.

    rp: N x 1 x h x w (1.0 = recurrent), ratio: N x C x h x w in [0, 1].
    """
    labels: np.ndarray
    splits: np.ndarray
    sources: np.ndarray
    timestamps: np.ndarray
    rp: np.ndarray
    ratio: np.ndarray
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.labels)
        for name in ("splits", "sources", "timestamps", "rp", "ratio"):
            if len(getattr(self, name)) != n:
                raise ImageShapeError(f"{name} has {len(getattr(self, name))} records, expected {n}")
        if self.rp.ndim != 4 or self.ratio.ndim != 4:
            raise ImageShapeError("rp and ratio must be N x C x h x w")
        if self.rp.shape[2:] != self.ratio.shape[2:]:
            raise ImageShapeError(f"rp {self.rp.shape[2:]} and ratio {self.ratio.shape[2:]} sizes differ")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def ratio_channels(self) -> int:
        """Q merged gray channels, or 3Q colour channels when merging is off."""
        return self.ratio.shape[1]

    @property
    def image_size(self) -> Tuple[int, int]:
        return self.rp.shape[2], self.rp.shape[3]

    def subset(self, index) -> "FeatureDataset":
        return FeatureDataset(
            labels=self.labels[index], splits=self.splits[index], sources=self.sources[index],
            timestamps=self.timestamps[index], rp=self.rp[index], ratio=self.ratio[index], meta=dict(self.meta),
        )

    def split(self, split: int) -> "FeatureDataset":
        return self.subset(np.flatnonzero(self.splits == split))

    @classmethod
    def concatenate(cls, parts: List["FeatureDataset"]) -> "FeatureDataset":
        if not parts:
            raise FeigError("nothing to concatenate")
        return cls(
            labels=np.concatenate([p.labels for p in parts]),
            splits=np.concatenate([p.splits for p in parts]),
            sources=np.concatenate([p.sources for p in parts]),
            timestamps=np.concatenate([p.timestamps for p in parts]),
            rp=np.concatenate([p.rp for p in parts]),
            ratio=np.concatenate([p.ratio for p in parts]),
            meta=dict(parts[0].meta),
        )

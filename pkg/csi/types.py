# csi/types.py
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from csi.exceptions import EmptySeriesError, InvalidScenarioError, NonFinitePathError

CASE_IDS = (1, 2, 3, 4)
PHASE_OFFSET_MODES = ("none", "per_frame_random")


# ─────────────────────────────────────────────────────────────────────────────
#  Frames and series
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class CsiFrame:
    """
    One CSI snapshot H^t: complex values indexed (m, n, k).

    Array axes are 0-based; antenna numbers exposed by the FEIG helpers are
    1-based (m ∈ [1, M], n ∈ [1, N]).
    """
    values: np.ndarray
    timestamp: int

    def __post_init__(self):
        if self.values.ndim != 3:
            raise InvalidScenarioError(f"CSI frame must be M x N x K, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NonFinitePathError(f"CSI frame t={self.timestamp} contains non-finite values")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.values.shape

    @property
    def n_tx(self) -> int:
        return self.values.shape[0]

    @property
    def n_rx(self) -> int:
        return self.values.shape[1]

    @property
    def n_subcarriers(self) -> int:
        return self.values.shape[2]

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.values)


@dataclass(frozen=True)
class CsiSeries:
    """
    Time-ordered CSI tensor (T x M x N x K). Frame i carries timestamp start + i,
    which keeps timestamps strictly increasing by one.
    """
    values: np.ndarray
    sample_rate_hz: float
    label: Optional[int] = None
    start: int = 0

    def __post_init__(self):
        if self.values.ndim != 4:
            raise InvalidScenarioError(f"CSI series must be T x M x N x K, got shape {self.values.shape}")
        if self.values.shape[0] == 0:
            raise EmptySeriesError("CSI series has no frames")
        if self.label is not None and self.label not in CASE_IDS:
            raise InvalidScenarioError(f"label must be one of {CASE_IDS}, got {self.label}")

    @classmethod
    def from_frames(cls, frames: Sequence[CsiFrame], sample_rate_hz: float,
                    label: Optional[int] = None) -> "CsiSeries":
        if not frames:
            raise EmptySeriesError("cannot build a series from zero frames")
        shape = frames[0].shape
        for prev, cur in zip(frames, frames[1:]):
            if cur.shape != shape:
                raise InvalidScenarioError(f"frame t={cur.timestamp} has shape {cur.shape}, expected {shape}")
            if cur.timestamp != prev.timestamp + 1:
                raise InvalidScenarioError(
                    f"timestamps must increase by 1 ({prev.timestamp} -> {cur.timestamp})"
                )
        values = np.stack([f.values for f in frames])
        return cls(values=values, sample_rate_hz=sample_rate_hz, label=label, start=frames[0].timestamp)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.values.shape[1:]

    def frame(self, index: int) -> CsiFrame:
        return CsiFrame(values=self.values[index], timestamp=self.start + index)

    @property
    def frames(self) -> Iterator[CsiFrame]:
        for i in range(len(self)):
            yield self.frame(i)

    def slice(self, begin: int, end: int) -> "CsiSeries":
        """Frames [begin, end) as a new series keeping the label."""
        return CsiSeries(values=self.values[begin:end], sample_rate_hz=self.sample_rate_hz,
                         label=self.label, start=self.start + begin)


# ─────────────────────────────────────────────────────────────────────────────
#  Scenario description (multipath model)
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class PathSpec:
    attenuation: complex
    length_m: float
    drift_m_per_sample: float = 0.0

    def __post_init__(self):
        parts = (self.attenuation.real, self.attenuation.imag, self.length_m, self.drift_m_per_sample)
        if not all(np.isfinite(p) for p in parts):
            raise NonFinitePathError(f"path parameters must be finite: {self}")
        if self.length_m < 0:
            raise InvalidScenarioError(f"path length must be >= 0, got {self.length_m}")

    def length_at(self, t: int) -> float:
        return self.length_m + t * self.drift_m_per_sample

    def to_dict(self) -> Dict:
        return {
            "attenuation": [float(self.attenuation.real), float(self.attenuation.imag)],
            "length_m": float(self.length_m),
            "drift_m_per_sample": float(self.drift_m_per_sample),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "PathSpec":
        re, im = data["attenuation"]
        return cls(attenuation=complex(re, im), length_m=float(data["length_m"]),
                   drift_m_per_sample=float(data.get("drift_m_per_sample", 0.0)))


@dataclass(frozen=True)
class ScenarioConfig:
    """
    paths[m][n] lists the PathSpec of transmission pair (m+1, n+1).

    Frames of a static scenario (no drift) are identical only with
    phase_offset_mode "none" and jitter_sigma == 0; the default jitter
    perturbs every path attenuation independently per frame.
    """
    case_id: int
    paths: Tuple[Tuple[Tuple[PathSpec, ...], ...], ...]
    carrier_hz: float = 2.447e9
    bandwidth_hz: float = 20e6
    n_subcarriers: int = 56
    phase_offset_mode: str = "per_frame_random"
    jitter_sigma: float = 0.01
    seed: int = 0
    sample_rate_hz: float = 10.0
    variant: int = 0
    name: str = ""
    notes: Dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.case_id not in CASE_IDS:
            raise InvalidScenarioError(f"case_id must be one of {CASE_IDS}, got {self.case_id}")
        if self.phase_offset_mode not in PHASE_OFFSET_MODES:
            raise InvalidScenarioError(f"phase_offset_mode must be one of {PHASE_OFFSET_MODES}")
        if self.jitter_sigma < 0:
            raise InvalidScenarioError("jitter_sigma must be >= 0")
        if self.n_subcarriers < 1:
            raise InvalidScenarioError("n_subcarriers must be >= 1")
        if not self.paths or not self.paths[0]:
            raise InvalidScenarioError("paths must describe at least one transmission pair")
        n_rx = len(self.paths[0])
        if any(len(row) != n_rx for row in self.paths):
            raise InvalidScenarioError("every transmit antenna must list the same number of receive antennas")
        if not (np.isfinite(self.carrier_hz) and np.isfinite(self.bandwidth_hz)):
            raise NonFinitePathError("carrier and bandwidth must be finite")
        if self.carrier_hz - self.bandwidth_hz / 2 <= 0:
            raise InvalidScenarioError("subcarrier frequencies must be positive")

    @property
    def n_tx(self) -> int:
        return len(self.paths)

    @property
    def n_rx(self) -> int:
        return len(self.paths[0])

    def frequencies(self) -> np.ndarray:
        """K subcarrier centres evenly spaced across the bandwidth."""
        spacing = self.bandwidth_hz / self.n_subcarriers
        offsets = (np.arange(self.n_subcarriers) - (self.n_subcarriers - 1) / 2) * spacing
        return self.carrier_hz + offsets

    def wavelengths(self) -> np.ndarray:
        return SPEED_OF_LIGHT / self.frequencies()

    def to_dict(self) -> Dict:
        return {
            "case_id": self.case_id,
            "variant": self.variant,
            "name": self.name,
            "carrier_hz": self.carrier_hz,
            "bandwidth_hz": self.bandwidth_hz,
            "n_subcarriers": self.n_subcarriers,
            "phase_offset_mode": self.phase_offset_mode,
            "jitter_sigma": self.jitter_sigma,
            "seed": self.seed,
            "sample_rate_hz": self.sample_rate_hz,
            "wavelengths_m": [float(x) for x in self.wavelengths()],
            "paths": [[[p.to_dict() for p in pair] for pair in row] for row in self.paths],
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ScenarioConfig":
        paths = tuple(
            tuple(tuple(PathSpec.from_dict(p) for p in pair) for pair in row)
            for row in data["paths"]
        )
        return cls(
            case_id=int(data["case_id"]),
            paths=paths,
            carrier_hz=float(data["carrier_hz"]),
            bandwidth_hz=float(data["bandwidth_hz"]),
            n_subcarriers=int(data["n_subcarriers"]),
            phase_offset_mode=data["phase_offset_mode"],
            jitter_sigma=float(data["jitter_sigma"]),
            seed=int(data["seed"]),
            sample_rate_hz=float(data.get("sample_rate_hz", 10.0)),
            variant=int(data.get("variant", 0)),
            name=data.get("name", ""),
            notes=data.get("notes", {}),
        )

    def pair_paths(self) -> List[Tuple[int, int, Tuple[PathSpec, ...]]]:
        return [(m, n, self.paths[m][n]) for m in range(self.n_tx) for n in range(self.n_rx)]

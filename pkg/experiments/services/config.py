# experiments/services/config.py
#
# RunConfig: one JSON document per run with sections csi, feig, augment,
# train and eval plus the top-level seed and out_dir. Missing keys take the
# defaults below, unknown keys are rejected.
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from django.conf import settings
from django.core.exceptions import ValidationError

from cronos_lab.storage import atomic_write_text
from csi.services.scenarios import CASE_VARIANTS
from csi.types import CASE_IDS, PHASE_OFFSET_MODES
from feig.services.featurize import train_frame_count
from feig.types import FeatureConfig
from learning.types import AugmentConfig, TrainConfig

logger = logging.getLogger(__name__)

DB_SPACES = ("projection", "representation")
EMBEDDING_BRANCHES = ("ratio", "rp")


@dataclass(frozen=True)
class GenerationConfig:
    """Synthetic capture settings; every (case, variant) dump holds train + test windows."""
    cases: Tuple[int, ...] = CASE_IDS
    train_windows: int = 500
    test_windows: int = 250
    n_tx: int = 2
    n_rx: int = 2
    carrier_hz: float = 2.447e9
    bandwidth_hz: float = 20e6
    n_subcarriers: int = 56
    sample_rate_hz: float = 10.0
    jitter_sigma: float = 0.01
    phase_offset_mode: str = "per_frame_random"

    def __post_init__(self):
        if self.train_windows < 1 or self.test_windows < 1:
            raise ValueError("train_windows and test_windows must be >= 1")
        if not self.cases or any(c not in CASE_IDS for c in self.cases):
            raise ValueError(f"cases must be a non-empty subset of {CASE_IDS}")
        if 1 not in self.cases:
            raise ValueError("case 1 (empty room) is needed for calibration")
        if self.n_tx < 1 or self.n_rx < 2:
            raise ValueError("need at least one transmit and two receive antennas")
        if self.phase_offset_mode not in PHASE_OFFSET_MODES:
            raise ValueError(f"phase_offset_mode must be one of {PHASE_OFFSET_MODES}")

    def frame_count(self, tau: int) -> int:
        """train windows, a guard of τ - 1 windows, then the test windows."""
        return train_frame_count(self.train_windows, tau) + self.test_windows + tau - 1

    def variants(self):
        return [(case, variant) for case in self.cases for variant in range(len(CASE_VARIANTS[case]))]

    def scenario_options(self) -> Dict:
        return {
            "n_tx": self.n_tx,
            "n_rx": self.n_rx,
            "carrier_hz": self.carrier_hz,
            "bandwidth_hz": self.bandwidth_hz,
            "n_subcarriers": self.n_subcarriers,
            "sample_rate_hz": self.sample_rate_hz,
            "jitter_sigma": self.jitter_sigma,
            "phase_offset_mode": self.phase_offset_mode,
        }


@dataclass(frozen=True)
class EvalConfig:
    trials: int = 1
    db_space: str = "projection"
    embedding_branch: str = "ratio"
    export_embeddings: bool = True
    include_projections: bool = False
    render_per_case: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.db_space not in DB_SPACES:
            raise ValueError(f"db_space must be one of {DB_SPACES}")
        if self.embedding_branch not in EMBEDDING_BRANCHES:
            raise ValueError(f"embedding_branch must be one of {EMBEDDING_BRANCHES}")
        if self.render_per_case < 0:
            raise ValueError("render_per_case must be >= 0")


_SECTIONS = {
    "csi": GenerationConfig,
    "feig": FeatureConfig,
    "augment": AugmentConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = ""
    csi: GenerationConfig = field(default_factory=GenerationConfig)
    feig: FeatureConfig = field(default_factory=FeatureConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        train_frames = train_frame_count(self.csi.train_windows, self.feig.tau)
        needed = max(self.feig.tau_gamma, self.feig.tau_c)
        if train_frames < needed:
            raise ValidationError(
                f"calibration needs {needed} empty-room train frames but csi.train_windows="
                f"{self.csi.train_windows} with feig.tau={self.feig.tau} gives {train_frames}"
            )
        if self.feig.tx_antenna > self.csi.n_tx or max(self.feig.rx_pair) > self.csi.n_rx:
            raise ValidationError(
                f"feig antennas (tx {self.feig.tx_antenna}, rx {self.feig.rx_pair}) exceed the "
                f"{self.csi.n_tx}x{self.csi.n_rx} array"
            )
        pairs = self.csi.n_tx * self.csi.n_rx
        if self.feig.n_couples > pairs * (pairs - 1) // 2:
            raise ValidationError(f"{self.csi.n_tx}x{self.csi.n_rx} antennas cannot give {self.feig.n_couples} couples")

    @property
    def output_dir(self) -> Path:
        return Path(self.out_dir) if self.out_dir else Path(settings.CRONOS_OUTPUT_DIR)

    def with_overrides(self, seed: Optional[int] = None, out_dir: Optional[str] = None,
                       trials: Optional[int] = None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if out_dir is not None:
            cfg = replace(cfg, out_dir=str(out_dir))
        if trials is not None:
            cfg = replace(cfg, eval=_section("eval", EvalConfig, {**asdict(cfg.eval), "trials": trials}))
        return cfg

    def to_dict(self) -> Dict:
        return json.loads(json.dumps(asdict(self)))

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: Dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ValidationError("run config must be a JSON object")
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise ValidationError(f"unknown key(s): {', '.join(unknown)}")

        sections = {name: _section(name, section_cls, data.get(name)) for name, section_cls in _SECTIONS.items()}
        try:
            seed = int(data.get("seed", 0))
        except (TypeError, ValueError):
            raise ValidationError(f"seed must be an integer, got {data.get('seed')!r}")
        out_dir = data.get("out_dir") or ""
        if not isinstance(out_dir, str):
            raise ValidationError("out_dir must be a string")
        return cls(seed=seed, out_dir=out_dir, **sections)


def _section(name: str, section_cls, data):
    if data is None:
        return section_cls()
    if not isinstance(data, dict):
        raise ValidationError(f"{name} must be a JSON object")
    known = {f.name for f in fields(section_cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(f"unknown key(s): {', '.join(f'{name}.{key}' for key in unknown)}")
    values = {key: tuple(value) if isinstance(value, list) else value for key, value in data.items()}
    try:
        return section_cls(**values)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name}: {exc}") from exc


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(data)


def write_config(cfg: RunConfig, directory) -> Path:
    path = Path(directory) / "run_config.json"
    atomic_write_text(path, json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path

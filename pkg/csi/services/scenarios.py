# csi/services/scenarios.py
#
# Seeded room presets for the four cases:
#   1 empty room, 2 static person off the LoS path (NLoS),
#   3 static person blocking the LoS path, 4 moving person.
#
# All cases built from the same seed share the case-1 room geometry. The
# constants below are our calibration: they reproduce the qualitative
# contrasts (case 1 ≈ case 2 in amplitude, case 3 attenuated, case 4
# fluctuating), nothing more.
import json
import logging
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from cronos_lab.storage import atomic_write_text
from csi.exceptions import InvalidScenarioError
from csi.types import CASE_IDS, PathSpec, ScenarioConfig

logger = logging.getLogger(__name__)

CASE_NAMES = {
    1: "empty_room",
    2: "nlos_static",
    3: "los_static",
    4: "moving",
}

# case id -> variant names; the NLoS person stands in one of two corners
CASE_VARIANTS: Dict[int, Tuple[str, ...]] = {
    1: ("default",),
    2: ("upper_left_corner", "lower_right_corner"),
    3: ("default",),
    4: ("default",),
}

# ── Room geometry ────────────────────────────────────────────────────────────
LOS_BASE_RANGE_M = (4.0, 5.0)
LOS_GAIN_RANGE = (0.92, 1.0)
# LoS phase of every other pair trails pair (1,1) by this angle, so the
# CSI ratio points of the empty room sit around arg r ≈ -20°.
RATIO_BASE_ANGLE_RAD = np.deg2rad(-20.0)
REFLECTION_COUNT_RANGE = (2, 4)
REFLECTION_GAIN_RANGE = (0.03, 0.075)
REFLECTION_EXTRA_LENGTH_M = (3.0, 12.0)

# ── Case 2: weak static path of the standing person, quadrature to LoS ──────
NLOS_EXTRA_GAIN = (0.13, 0.09)            # per variant, relative to LoS ~1
NLOS_EXTRA_WAVELENGTHS = (12, 16)         # extra length ≈ n·λ_c - λ_c/4
NLOS_REFLECTION_BIAS = ((1.03, 0.04), (1.02, -0.03))   # (gain, phase rad)

# ── Case 3: blocked LoS ──────────────────────────────────────────────────────
LOS_BLOCK_GAIN_RANGE = (0.2, 0.4)
LOS_BLOCK_PHASE_RANGE = (0.5, 1.2)

# ── Case 4: walking person ───────────────────────────────────────────────────
MOVING_GAIN = 0.5
MOVING_EXTRA_LENGTH_M = (1.0, 3.0)
MOVING_DRIFT_RANGE = (0.004, 0.007)       # metres per sample


def _variant_seed(seed: int, case_id: int, variant: int) -> int:
    return int(np.random.SeedSequence([seed, case_id, variant]).generate_state(1)[0])


def _room_geometry(seed: int, n_tx: int, n_rx: int, carrier_hz: float) -> Dict:
    """Case-1 paths per pair: one LoS path plus 2-4 static reflections."""
    rng = np.random.default_rng([seed, 7919])
    wavelength_c = SPEED_OF_LIGHT / carrier_hz
    base = rng.uniform(*LOS_BASE_RANGE_M)
    n_refl = int(rng.integers(REFLECTION_COUNT_RANGE[0], REFLECTION_COUNT_RANGE[1] + 1))
    trail = -RATIO_BASE_ANGLE_RAD / (2 * np.pi)

    pairs = {}
    for idx in range(n_tx * n_rx):
        m, n = divmod(idx, n_rx)
        los_length = base if idx == 0 else base + (idx - trail) * wavelength_c
        los_gain = rng.uniform(*LOS_GAIN_RANGE)
        gains = rng.uniform(*REFLECTION_GAIN_RANGE, size=n_refl)
        phases = rng.uniform(0, 2 * np.pi, size=n_refl)
        extra = rng.uniform(*REFLECTION_EXTRA_LENGTH_M, size=n_refl)
        pairs[(m, n)] = {
            "los": PathSpec(attenuation=complex(los_gain), length_m=los_length),
            "reflections": [
                PathSpec(attenuation=complex(g * np.exp(1j * p)), length_m=base + e)
                for g, p, e in zip(gains, phases, extra)
            ],
        }
    return {"wavelength_c": wavelength_c, "base": base, "pairs": pairs}


def preset_scenario(case_id: int, seed: int, variant: int = 0, *,
                    n_tx: int = 2, n_rx: int = 2,
                    carrier_hz: float = 2.447e9, bandwidth_hz: float = 20e6,
                    n_subcarriers: int = 56, sample_rate_hz: float = 10.0,
                    jitter_sigma: float = 0.01,
                    phase_offset_mode: str = "per_frame_random") -> ScenarioConfig:
    """
    Build the seeded preset of one case.

    Case 1: LoS + 2-4 static reflections per pair.
    Case 2: case 1 plus a weak static path on pair (1,1), 90° ahead of its LoS
            (|A| ≈ 9-13 % of LoS, ~1.5-2 m longer), and a constant gain/phase
            bias on every reflection. Amplitudes barely move; the CSI ratio
            rotates, which shifts the position values upwards.
    Case 3: LoS of every pair attenuated to 20-40 % with an altered phase.
    Case 4: case 1 plus one strong drifting path per pair.
    """
    if case_id not in CASE_IDS:
        raise InvalidScenarioError(f"case_id must be one of {CASE_IDS}, got {case_id}")
    if not 0 <= variant < len(CASE_VARIANTS[case_id]):
        raise InvalidScenarioError(f"case {case_id} has no variant {variant}")

    room = _room_geometry(seed, n_tx, n_rx, carrier_hz)
    case_rng = np.random.default_rng([seed, 7919, case_id, variant])
    notes: Dict = {"room_base_length_m": room["base"]}

    paths: List[List[Tuple[PathSpec, ...]]] = [[() for _ in range(n_rx)] for _ in range(n_tx)]
    for (m, n), geo in room["pairs"].items():
        los = geo["los"]
        reflections = list(geo["reflections"])
        extra: List[PathSpec] = []

        if case_id == 2:
            bias_gain, bias_phase = NLOS_REFLECTION_BIAS[variant]
            bias = bias_gain * np.exp(1j * bias_phase)
            reflections = [PathSpec(attenuation=r.attenuation * bias, length_m=r.length_m) for r in reflections]
            if (m, n) == (0, 0):
                length = los.length_m + (NLOS_EXTRA_WAVELENGTHS[variant] - 0.25) * room["wavelength_c"]
                extra.append(PathSpec(attenuation=complex(NLOS_EXTRA_GAIN[variant]), length_m=length))
                notes["nlos_extra_path"] = extra[-1].to_dict()
            notes["reflection_bias"] = [bias_gain, bias_phase]

        elif case_id == 3:
            gain = case_rng.uniform(*LOS_BLOCK_GAIN_RANGE)
            phase = case_rng.uniform(*LOS_BLOCK_PHASE_RANGE) * case_rng.choice([-1.0, 1.0])
            los = PathSpec(attenuation=los.attenuation * gain * np.exp(1j * phase), length_m=los.length_m)
            notes[f"los_block_{m + 1}{n + 1}"] = [gain, phase]

        elif case_id == 4:
            extra.append(PathSpec(
                attenuation=complex(MOVING_GAIN * np.exp(1j * case_rng.uniform(0, 2 * np.pi))),
                length_m=room["base"] + case_rng.uniform(*MOVING_EXTRA_LENGTH_M),
                drift_m_per_sample=case_rng.uniform(*MOVING_DRIFT_RANGE),
            ))

        paths[m][n] = tuple([los] + reflections + extra)

    scenario = ScenarioConfig(
        case_id=case_id,
        paths=tuple(tuple(row) for row in paths),
        carrier_hz=carrier_hz,
        bandwidth_hz=bandwidth_hz,
        n_subcarriers=n_subcarriers,
        phase_offset_mode=phase_offset_mode,
        jitter_sigma=jitter_sigma,
        seed=_variant_seed(seed, case_id, variant),
        sample_rate_hz=sample_rate_hz,
        variant=variant,
        name=f"{CASE_NAMES[case_id]}:{CASE_VARIANTS[case_id][variant]}",
        notes=notes,
    )
    logger.debug("preset %s built from seed %s", scenario.name, seed)
    return scenario


def write_scenario_json(scenario: ScenarioConfig, path) -> None:
    atomic_write_text(path, json.dumps(scenario.to_dict(), indent=2, sort_keys=True) + "\n")


def read_scenario_json(path) -> ScenarioConfig:
    return ScenarioConfig.from_dict(json.loads(Path(path).read_text()))

# csi/services/simulator.py
#
# Multipath CSI synthesis: every h^t_{m,n,k} is the superposition of the
# pair's paths, h = e^{-jφ} · Σ_l A_l · e^{-j2π d_l(t) / λ_k}.
import logging

import numpy as np

from csi.exceptions import InvalidScenarioError, NonFinitePathError
from csi.types import CsiFrame, CsiSeries, ScenarioConfig

logger = logging.getLogger(__name__)

# Independent random streams derived from (seed, t): jitter and phase offset
# never share draws, so |h| does not depend on phase_offset_mode.
_JITTER_STREAM = 0
_PHASE_STREAM = 1


def _frame_rng(seed: int, t: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, t, stream])


def _pair_response(attenuations: np.ndarray, lengths: np.ndarray, wavelengths: np.ndarray) -> np.ndarray:
    if attenuations.size == 0:
        return np.zeros(wavelengths.shape, dtype=np.complex128)
    phases = np.exp(-2j * np.pi * lengths[:, None] / wavelengths[None, :])
    return (attenuations[:, None] * phases).sum(axis=0)


def simulate_frame(scenario: ScenarioConfig, t: int) -> CsiFrame:
    """
    Simulate the CSI matrix at sample index t.

    Path lengths move linearly: d_l(t) = length_m + t · drift. With
    phase_offset_mode == "per_frame_random" a single offset φ is drawn for the
    frame and applied to every pair and subcarrier (shared oscillator).
    """
    if t < 0:
        raise InvalidScenarioError(f"t must be >= 0, got {t}")

    wavelengths = scenario.wavelengths()
    values = np.zeros((scenario.n_tx, scenario.n_rx, scenario.n_subcarriers), dtype=np.complex128)
    jitter_rng = _frame_rng(scenario.seed, t, _JITTER_STREAM)

    for m, n, paths in scenario.pair_paths():
        attenuations = np.array([p.attenuation for p in paths], dtype=np.complex128)
        lengths = np.array([p.length_at(t) for p in paths], dtype=np.float64)
        if not (np.all(np.isfinite(attenuations)) and np.all(np.isfinite(lengths))):
            raise NonFinitePathError(f"non-finite path parameters on pair ({m + 1},{n + 1}) at t={t}")
        if np.any(lengths < 0):
            raise InvalidScenarioError(f"negative path length on pair ({m + 1},{n + 1}) at t={t}")

        if scenario.jitter_sigma > 0 and attenuations.size:
            noise = jitter_rng.standard_normal((attenuations.size, 2))
            attenuations = attenuations * (1 + scenario.jitter_sigma * (noise[:, 0] + 1j * noise[:, 1]))

        values[m, n] = _pair_response(attenuations, lengths, wavelengths)

    if scenario.phase_offset_mode == "per_frame_random":
        phi = _frame_rng(scenario.seed, t, _PHASE_STREAM).uniform(0.0, 2 * np.pi)
        values = values * np.exp(-1j * phi)

    return CsiFrame(values=values, timestamp=t)


def simulate_series(scenario: ScenarioConfig, t_count: int) -> CsiSeries:
    """t_count consecutive frames starting at t = 0, labelled with the case id."""
    if t_count < 1:
        raise InvalidScenarioError(f"t_count must be >= 1, got {t_count}")

    frames = [simulate_frame(scenario, t).values for t in range(t_count)]
    logger.debug("simulated case %s variant %s: %d frames", scenario.case_id, scenario.variant, t_count)
    return CsiSeries(
        values=np.stack(frames),
        sample_rate_hz=scenario.sample_rate_hz,
        label=scenario.case_id,
    )

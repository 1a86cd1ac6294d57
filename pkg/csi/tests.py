import cmath
import struct
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from csi.exceptions import (
    DumpMagicError,
    DumpTruncatedError,
    EmptySeriesError,
    InvalidScenarioError,
    NonFinitePathError,
)
from csi.services.dump import read_dump, write_dump
from csi.services.scenarios import CASE_VARIANTS, preset_scenario, read_scenario_json, write_scenario_json
from csi.services.simulator import simulate_frame, simulate_series
from csi.types import CsiSeries, PathSpec, ScenarioConfig


def _scenario(pairs, **kwargs):
    opts = dict(phase_offset_mode="none", jitter_sigma=0.0, seed=3)
    opts.update(kwargs)
    return ScenarioConfig(case_id=1, paths=pairs, **opts)


def _random_paths(rng, count, drift=0.0):
    return tuple(
        PathSpec(attenuation=complex(rng.normal(), rng.normal()),
                 length_m=float(rng.uniform(1, 20)), drift_m_per_sample=drift)
        for _ in range(count)
    )


class SimulateFrameTests(SimpleTestCase):

    def test_full_wavelength_path_wraps_to_one(self):
        reference = _scenario((((PathSpec(1 + 0j, 1.0),),),))
        k = 10
        length = float(reference.wavelengths()[k])
        scenario = _scenario((((PathSpec(1 + 0j, length),),),))
        h = simulate_frame(scenario, 0).values[0, 0, k]
        self.assertAlmostEqual(h.real, 1.0, places=12)
        self.assertAlmostEqual(h.imag, 0.0, places=12)

    def test_empty_path_list_gives_zero(self):
        scenario = _scenario((((), ()), ((), ())))
        values = simulate_frame(scenario, 4).values
        self.assertEqual(values.shape, (2, 2, 56))
        self.assertFalse(np.any(values))

    def test_matches_direct_complex_sum(self):
        rng = np.random.default_rng(11)
        paths = ((_random_paths(rng, 2, drift=0.01), _random_paths(rng, 2)),)
        scenario = _scenario(paths)
        t = 7
        values = simulate_frame(scenario, t).values
        wavelengths = scenario.wavelengths()
        for n in range(2):
            for k, lam in enumerate(wavelengths):
                expected = sum(p.attenuation * cmath.exp(-2j * cmath.pi * (p.length_m + t * p.drift_m_per_sample) / lam)
                               for p in paths[0][n])
                self.assertLessEqual(abs(values[0, n, k] - expected), 1e-12 * max(abs(expected), 1e-300))

    def test_rejects_negative_time(self):
        scenario = _scenario((((PathSpec(1 + 0j, 2.0),),),))
        with self.assertRaises(InvalidScenarioError):
            simulate_frame(scenario, -1)

    def test_rejects_non_finite_paths(self):
        with self.assertRaises(NonFinitePathError):
            PathSpec(attenuation=complex(float("nan"), 0), length_m=1.0)

    def test_length_going_negative_is_rejected(self):
        scenario = _scenario((((PathSpec(1 + 0j, 0.05, drift_m_per_sample=-0.01),),),))
        simulate_frame(scenario, 4)
        with self.assertRaises(InvalidScenarioError):
            simulate_frame(scenario, 6)

    def test_phase_offset_is_common_to_all_pairs(self):
        rng = np.random.default_rng(5)
        paths = tuple(tuple(_random_paths(rng, 3) for _ in range(2)) for _ in range(2))
        plain = simulate_frame(_scenario(paths), 9).values
        offset = simulate_frame(_scenario(paths, phase_offset_mode="per_frame_random"), 9).values
        rotation = offset / plain
        np.testing.assert_allclose(np.abs(rotation), 1.0, rtol=1e-12)
        np.testing.assert_allclose(rotation, rotation[0, 0, 0], rtol=1e-12)

    def test_amplitude_invariant_to_phase_offset_mode(self):
        scenario = preset_scenario(4, seed=2)
        plain = simulate_series(replace(scenario, phase_offset_mode="none"), 20)
        offset = simulate_series(scenario, 20)
        np.testing.assert_allclose(np.abs(plain.values), np.abs(offset.values), rtol=1e-12)


class SimulateSeriesTests(SimpleTestCase):

    def test_static_scenario_frames_identical(self):
        rng = np.random.default_rng(1)
        scenario = _scenario(((_random_paths(rng, 3), _random_paths(rng, 2)),))
        series = simulate_series(scenario, 6)
        for t in range(1, 6):
            np.testing.assert_array_equal(series.values[t], series.values[0])

    def test_jitter_breaks_static_frame_identity(self):
        rng = np.random.default_rng(1)
        paths = ((_random_paths(rng, 3), _random_paths(rng, 2)),)
        self.assertEqual(ScenarioConfig(case_id=1, paths=paths).jitter_sigma, 0.01)
        series = simulate_series(_scenario(paths, jitter_sigma=0.01), 4)
        for t in range(1, 4):
            self.assertFalse(np.array_equal(series.values[t], series.values[0]))

    def test_same_seed_is_bit_identical(self):
        scenario = preset_scenario(2, seed=17, variant=1)
        a = simulate_series(scenario, 12)
        b = simulate_series(preset_scenario(2, seed=17, variant=1), 12)
        np.testing.assert_array_equal(a.values, b.values)
        self.assertEqual(a.label, 2)

    def test_dynamic_scenario_varies(self):
        rng = np.random.default_rng(2)
        scenario = _scenario(((_random_paths(rng, 2, drift=0.02),),))
        amplitude = np.abs(simulate_series(scenario, 30).values)
        self.assertGreater(amplitude.var(axis=0).max(), 0.0)

    def test_zero_frames_rejected(self):
        with self.assertRaises(InvalidScenarioError):
            simulate_series(preset_scenario(1, seed=0), 0)

    def test_timestamps_follow_frame_index(self):
        series = simulate_series(preset_scenario(1, seed=0), 4)
        self.assertEqual([f.timestamp for f in series.frames], [0, 1, 2, 3])


class PresetScenarioTests(SimpleTestCase):
    T = 200

    def _mean_amplitude(self, case_id, seed=21, variant=0):
        series = simulate_series(preset_scenario(case_id, seed, variant), self.T)
        return np.abs(series.values).mean(axis=0)

    def test_empty_and_nlos_rooms_look_alike(self):
        empty = self._mean_amplitude(1)
        for variant in range(len(CASE_VARIANTS[2])):
            nlos = self._mean_amplitude(2, variant=variant)
            self.assertLess(np.linalg.norm(nlos - empty) / np.linalg.norm(empty), 0.05)

    def test_moving_person_fluctuates(self):
        def spread(case_id):
            series = simulate_series(preset_scenario(case_id, 21), self.T)
            return np.abs(series.values[:, 0, 0, :]).mean(axis=1).std()

        self.assertGreaterEqual(spread(4), 5 * spread(1))

    def test_blocked_los_attenuates(self):
        empty = self._mean_amplitude(1)
        blocked = self._mean_amplitude(3)
        self.assertGreater(np.linalg.norm(blocked - empty) / np.linalg.norm(empty), 0.25)

    def test_cases_share_room_geometry(self):
        empty = preset_scenario(1, seed=4)
        moving = preset_scenario(4, seed=4)
        for (m, n, paths) in empty.pair_paths():
            self.assertEqual(moving.paths[m][n][: len(paths)], paths)

    def test_unknown_case_or_variant(self):
        with self.assertRaises(InvalidScenarioError):
            preset_scenario(5, seed=0)
        with self.assertRaises(InvalidScenarioError):
            preset_scenario(1, seed=0, variant=1)

    def test_scenario_json_round_trip(self):
        scenario = preset_scenario(2, seed=8, variant=1)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "scenario.json"
            write_scenario_json(scenario, path)
            self.assertEqual(read_scenario_json(path), scenario)


class DumpTests(SimpleTestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_round_trip(self):
        series = simulate_series(preset_scenario(3, seed=1), 5)
        path = self.tmp / "case3.csid"
        write_dump(series, path)
        loaded = read_dump(path)
        np.testing.assert_array_equal(loaded.values, series.values.astype(np.complex64))
        self.assertEqual(loaded.label, 3)
        self.assertEqual(loaded.sample_rate_hz, series.sample_rate_hz)

    def test_unlabelled_series(self):
        series = CsiSeries(values=np.ones((2, 1, 1, 3), dtype=np.complex64), sample_rate_hz=5.0)
        path = self.tmp / "plain.csid"
        write_dump(series, path)
        self.assertIsNone(read_dump(path).label)

    def test_corrupted_magic(self):
        path = self.tmp / "bad.csid"
        write_dump(simulate_series(preset_scenario(1, seed=1), 2), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with self.assertRaises(DumpMagicError):
            read_dump(path)

    def test_truncated_payload(self):
        path = self.tmp / "short.csid"
        write_dump(simulate_series(preset_scenario(1, seed=1), 2), path)
        path.write_bytes(path.read_bytes()[:-5])
        with self.assertRaises(DumpTruncatedError):
            read_dump(path)

    def test_zero_frames(self):
        path = self.tmp / "empty.csid"
        path.write_bytes(struct.pack("<4sIHHHIfB", b"CSID", 1, 2, 2, 56, 0, 10.0, 1))
        with self.assertRaises(EmptySeriesError):
            read_dump(path)

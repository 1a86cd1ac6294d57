import colorsys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from csi.services.scenarios import preset_scenario
from csi.services.simulator import simulate_series
from csi.types import CsiFrame, CsiSeries
from feig.exceptions import (
    AntennaIndexError,
    CalibrationError,
    DegenerateDenominatorError,
    EmptyInputError,
    ImageShapeError,
    InsufficientHistoryError,
)
from feig.services.colorization import (
    calibrate_colormap,
    color_feature_image,
    colorize,
    couple_layers,
    hue_angles,
    merge_channels,
    position_values,
    static_feature_image,
    to_gray,
)
from feig.services.featurize import (
    calibrate_features,
    featurize_all,
    featurize_series,
    train_frame_count,
    window_split,
)
from feig.services.ratio import csi_ratio, rasterize_binary, ratio_couples
from feig.services.recurrence import (
    amplitude_difference,
    calibrate_gamma,
    df_window,
    dynamic_feature,
    gamma_from_distances,
    recurrence_plot,
    resize_nearest,
    rp_image,
    subcarrier_average,
)
from feig.services.render import binary_pixels, read_netpbm, rp_pixels, write_pgm, write_ppm
from feig.types import (
    SPLIT_GUARD,
    SPLIT_TEST,
    SPLIT_TRAIN,
    BinaryImage,
    ColorCalibration,
    DynamicFeatureWindow,
    FeatureConfig,
    GrayImage,
    RatioCouple,
    RatioVector,
    RgbImage,
)

COUPLE = RatioCouple((1, 1), (1, 2))
RED = (255, 0, 0)
PURPLE = (128, 0, 255)


def _window(values, end=0):
    return DynamicFeatureWindow(values=np.asarray(values, dtype=float), tx_antenna=1, rx_pair=(1, 2),
                                end_timestamp=end)


def _ratio(values):
    return RatioVector(values=np.asarray(values, dtype=complex), couple=COUPLE, timestamp=0)


def _frame(values):
    return CsiFrame(values=np.asarray(values, dtype=complex), timestamp=0)


def _constant_series(frame_values, t_count, label=1):
    values = np.repeat(np.asarray(frame_values, dtype=complex)[None], t_count, axis=0)
    return CsiSeries(values=values, sample_rate_hz=10.0, label=label)


def _color_count(rgb: RgbImage, color) -> int:
    return int(np.all(rgb.pixels == np.array(color)[:, None, None], axis=0).sum())


# ─────────────────────────────────────────────────────────────────────────────
#  Dynamic feature
# ─────────────────────────────────────────────────────────────────────────────

class AmplitudeDifferenceTests(SimpleTestCase):

    def test_identical_antennas_give_zero(self):
        rng = np.random.default_rng(0)
        row = rng.normal(size=8) + 1j * rng.normal(size=8)
        frame = _frame(np.stack([row, row])[None])
        np.testing.assert_array_equal(amplitude_difference(frame, 1, 1, 2), np.zeros(8))

    def test_constant_magnitudes(self):
        frame = _frame(np.stack([3 * np.exp(1j * np.linspace(0, 2, 6)), 5j * np.ones(6)])[None])
        np.testing.assert_allclose(amplitude_difference(frame, 1, 1, 2), 2.0, rtol=1e-12)

    def test_matches_elementwise_loop(self):
        rng = np.random.default_rng(1)
        values = rng.normal(size=(2, 3, 7)) + 1j * rng.normal(size=(2, 3, 7))
        diff = amplitude_difference(_frame(values), 2, 3, 1)
        for k in range(7):
            self.assertAlmostEqual(diff[k], abs(abs(values[1, 2, k]) - abs(values[1, 0, k])), places=12)

    def test_index_errors(self):
        frame = _frame(np.ones((2, 2, 4)))
        for args in ((3, 1, 2), (1, 0, 2), (1, 1, 3), (1, 2, 2)):
            with self.assertRaises(AntennaIndexError):
                amplitude_difference(frame, *args)


class SubcarrierAverageTests(SimpleTestCase):

    def test_examples(self):
        self.assertEqual(subcarrier_average(np.array([1.0, 3.0])), 2.0)
        self.assertAlmostEqual(subcarrier_average(np.full(56, 0.37)), 0.37, places=12)
        values = np.random.default_rng(2).random(56)
        self.assertAlmostEqual(subcarrier_average(values), sum(values) / 56, places=12)
        with self.assertRaises(EmptyInputError):
            subcarrier_average(np.array([]))


class DynamicFeatureWindowTests(SimpleTestCase):

    def test_static_series_gives_constant_window(self):
        series = simulate_series(replace(preset_scenario(1, seed=3), jitter_sigma=0.0, phase_offset_mode="none"), 12)
        window = df_window(series, 1, (1, 2), 11, 8)
        self.assertEqual(window.tau, 8)
        np.testing.assert_array_equal(window.values, np.full(8, window.values[0]))

    def test_unit_window_is_current_average(self):
        series = simulate_series(preset_scenario(2, seed=3), 6)
        window = df_window(series, 1, (1, 2), 4, 1)
        expected = subcarrier_average(amplitude_difference(series.frame(4), 1, 1, 2))
        self.assertAlmostEqual(window.values[0], expected, places=12)
        self.assertEqual(window.end_timestamp, 4)

    def test_moving_person_window_spreads(self):
        empty = simulate_series(preset_scenario(1, seed=9), 50)
        moving = simulate_series(preset_scenario(4, seed=9), 50)
        spread_empty = df_window(empty, 1, (1, 2), 49, 50).values.std(ddof=1)
        spread_moving = df_window(moving, 1, (1, 2), 49, 50).values.std(ddof=1)
        self.assertGreaterEqual(spread_moving, 5 * spread_empty)

    def test_insufficient_history(self):
        series = simulate_series(preset_scenario(1, seed=3), 10)
        with self.assertRaises(InsufficientHistoryError):
            df_window(series, 1, (1, 2), 3, 5)


class GammaCalibrationTests(SimpleTestCase):

    def test_first_element_reaching_quantile(self):
        distances = np.arange(10, dtype=float)
        self.assertEqual(gamma_from_distances(distances, 0.5), 4.0)
        self.assertEqual(gamma_from_distances(distances, 1.0), 9.0)
        shuffled = np.random.default_rng(0).permutation(distances)
        self.assertEqual(gamma_from_distances(shuffled, 0.5), 4.0)

    def test_constant_empty_room_gives_zero(self):
        series = _constant_series(np.ones((2, 2, 4)) * (1 + 1j), 30)
        self.assertEqual(calibrate_gamma(series, 1, (1, 2), 20, 0.9).gamma, 0.0)

    def test_gamma_is_a_calibration_distance(self):
        series = simulate_series(preset_scenario(1, seed=4), 60)
        threshold = calibrate_gamma(series, 1, (1, 2), 40, 0.9)
        features = dynamic_feature(series.slice(20, 60), 1, (1, 2))
        distances = np.abs(features[:, None] - features[None, :])
        self.assertTrue(np.any(distances == threshold.gamma))
        self.assertAlmostEqual(np.mean(distances <= threshold.gamma), 0.9, delta=0.05)
        full = calibrate_gamma(series, 1, (1, 2), 40, 1.0)
        self.assertEqual(full.gamma, distances.max())

    def test_rejects_short_or_non_empty_series(self):
        series = simulate_series(preset_scenario(1, seed=4), 10)
        with self.assertRaises(InsufficientHistoryError):
            calibrate_gamma(series, 1, (1, 2), 20, 0.9)
        moving = simulate_series(preset_scenario(4, seed=4), 30)
        with self.assertRaises(CalibrationError):
            calibrate_gamma(moving, 1, (1, 2), 20, 0.9)


class RecurrencePlotTests(SimpleTestCase):

    def test_threshold_examples(self):
        plot = recurrence_plot(_window([0.5, 0.8, 0.5, 0.2, 0.5]), 0.3)
        self.assertEqual(plot.pixels[1, 3], 0)
        self.assertEqual(plot.pixels[3, 1], 0)
        plot = recurrence_plot(_window([0.5, 0.6, 0.5, 0.4, 0.5]), 0.3)
        self.assertEqual(plot.pixels[1, 3], 1)

    def test_constant_window_is_all_black(self):
        plot = recurrence_plot(_window(np.full(50, 0.42)), 0.0)
        self.assertTrue(np.all(plot.pixels == 1))

    def test_diagonal_symmetry_and_monotonicity(self):
        rng = np.random.default_rng(5)
        window = _window(rng.random(50))
        previous = None
        for gamma in (0.0, 0.05, 0.1, 0.3, 1.0):
            pixels = recurrence_plot(window, gamma).pixels
            self.assertTrue(np.all(np.diag(pixels) == 1))
            np.testing.assert_array_equal(pixels, pixels.T)
            if previous is not None:
                self.assertTrue(np.all(pixels >= previous))
            previous = pixels

    def test_negative_gamma(self):
        with self.assertRaises(CalibrationError):
            recurrence_plot(_window([0.1, 0.2]), -0.1)

    def test_nearest_resize(self):
        pixels = np.arange(50 * 50).reshape(50, 50)
        resized = resize_nearest(pixels, 32, 32)
        self.assertEqual(resized.shape, (32, 32))
        self.assertEqual(resized[1, 1], pixels[1, 1])
        self.assertEqual(resized[31, 31], pixels[48, 48])
        self.assertEqual(rp_image(recurrence_plot(_window(np.zeros(50)), 0.0)).shape, (1, 32, 32))

    def test_moving_person_rps_are_whiter(self):
        tau, calibration, n_windows = 50, 200, 40
        empty_room = simulate_series(preset_scenario(1, seed=12), calibration + tau + n_windows)
        gamma = calibrate_gamma(empty_room.slice(0, calibration), 1, (1, 2), calibration, 0.9).gamma

        def white_fractions(series):
            return np.array([
                recurrence_plot(df_window(series, 1, (1, 2), t, tau), gamma).white_fraction
                for t in range(calibration + tau - 1, calibration + tau - 1 + n_windows)
            ])

        moving = white_fractions(simulate_series(preset_scenario(4, seed=12), calibration + tau + n_windows))
        statics = [white_fractions(empty_room)] + [
            white_fractions(simulate_series(preset_scenario(case_id, seed=12), calibration + tau + n_windows))
            for case_id in (2, 3)
        ]
        for static in statics:
            self.assertGreaterEqual(np.mean(moving > static), 0.95)

    def test_jittered_static_rooms_are_mostly_black_on_average(self):
        # default presets: jitter 0.01 and random per-frame phase offsets
        cfg = FeatureConfig()
        train_windows, test_windows = 500, 250
        frames = train_frame_count(train_windows, cfg.tau) + test_windows + cfg.tau - 1
        empty_room = simulate_series(preset_scenario(1, seed=0), frames)
        gamma = calibrate_features(empty_room, cfg, train_windows).threshold.gamma
        test_ends = [t for t in range(cfg.tau - 1, frames) if window_split(t, cfg.tau, train_windows) == SPLIT_TEST]
        self.assertEqual(len(test_ends), test_windows)

        def black_fractions(series):
            return np.array([
                1.0 - recurrence_plot(df_window(series, cfg.tx_antenna, cfg.rx_pair, t, cfg.tau), gamma).white_fraction
                for t in test_ends
            ])

        static = [black_fractions(empty_room)] + [
            black_fractions(simulate_series(preset_scenario(case_id, seed=0, variant=variant), frames))
            for case_id, variant in ((2, 0), (2, 1), (3, 0))
        ]
        moving = black_fractions(simulate_series(preset_scenario(4, seed=0), frames))
        self.assertGreaterEqual(np.concatenate(static).mean(), 0.9)
        self.assertLess(moving.mean(), np.concatenate(static).mean())


# ─────────────────────────────────────────────────────────────────────────────
#  CSI ratio images
# ─────────────────────────────────────────────────────────────────────────────

class CsiRatioTests(SimpleTestCase):

    def test_common_phase_cancels(self):
        theta = np.linspace(-3, 3, 9)
        frame = _frame(np.stack([2 * np.exp(1j * theta), np.exp(1j * theta)])[None])
        np.testing.assert_allclose(csi_ratio(frame, COUPLE).values, 2.0, rtol=1e-12)

    def test_phase_offset_cancels(self):
        scenario = preset_scenario(2, seed=6)
        plain = simulate_series(replace(scenario, phase_offset_mode="none"), 5)
        offset = simulate_series(scenario, 5)
        for couple in ratio_couples(2, 2, 6):
            for t in range(5):
                np.testing.assert_allclose(csi_ratio(offset.frame(t), couple).values,
                                           csi_ratio(plain.frame(t), couple).values, rtol=1e-12)

    def test_matches_complex_division(self):
        rng = np.random.default_rng(7)
        values = rng.normal(size=(2, 2, 5)) + 1j * rng.normal(size=(2, 2, 5))
        couple = RatioCouple((2, 1), (1, 2))
        ratio = csi_ratio(_frame(values), couple)
        for k in range(5):
            expected = complex(values[1, 0, k]) / complex(values[0, 1, k])
            self.assertLessEqual(abs(ratio.values[k] - expected), 1e-12 * abs(expected))

    def test_degenerate_denominator_names_subcarrier(self):
        values = np.ones((1, 2, 4), dtype=complex)
        values[0, 1, 2] = 0
        with self.assertRaises(DegenerateDenominatorError) as ctx:
            csi_ratio(_frame(values), COUPLE)
        self.assertEqual(ctx.exception.subcarrier, 2)

    def test_lexicographic_couples(self):
        couples = ratio_couples(2, 2, 3)
        self.assertEqual([c.label() for c in couples], ["h11/h12", "h11/h21", "h11/h22"])
        self.assertEqual(ratio_couples(2, 2, 6)[-1].label(), "h21/h22")
        with self.assertRaises(AntennaIndexError):
            ratio_couples(2, 2, 7)


class RasterizeTests(SimpleTestCase):

    def test_identical_points_hit_the_centre(self):
        binary = rasterize_binary(_ratio(np.full(56, 0.3 - 0.2j)))
        self.assertEqual(binary.set_count, 1)
        self.assertEqual(binary.pixels[16, 16], 1)

    def test_points_stay_inside(self):
        rng = np.random.default_rng(8)
        binary = rasterize_binary(_ratio(rng.normal(size=56) + 1j * rng.normal(size=56)))
        self.assertTrue(1 <= binary.set_count <= 56)
        self.assertTrue(binary.scale > 0)

    def test_circle_and_square_differ(self):
        angles = np.linspace(0, 2 * np.pi, 56, endpoint=False)
        circle = np.exp(1j * angles)
        side = np.linspace(-1, 1, 14, endpoint=False)
        square = np.concatenate([side + 1j, 1 + 1j * -side, -side - 1j, -1 - 1j * -side])
        a = rasterize_binary(_ratio(circle)).pixels
        b = rasterize_binary(_ratio(square)).pixels
        union = np.logical_or(a, b).sum()
        self.assertGreaterEqual(np.logical_xor(a, b).sum(), 0.1 * union)

    def test_translation_keeps_the_shape(self):
        rng = np.random.default_rng(9)
        points = rng.normal(size=56) + 1j * rng.normal(size=56)
        a = rasterize_binary(_ratio(points))
        b = rasterize_binary(_ratio(points + (3.0 - 2.0j)))
        np.testing.assert_array_equal(a.pixels, b.pixels)


class ColorizationTests(SimpleTestCase):
    cal = ColorCalibration(p_min=-1.0, p_max=1.0, window=10, couple_index=0)

    def _single(self, p):
        ratio = _ratio([p])
        return colorize(rasterize_binary(ratio), ratio, self.cal).pixels[:, 16, 16]

    def test_position_values(self):
        np.testing.assert_array_equal(position_values(_ratio([3 + 4j, 2.5, -1 + 0.5j])), [7.0, 2.5, -0.5])

    def test_bar_ends_and_middle(self):
        self.assertEqual(tuple(self._single(1.0)), RED)
        self.assertEqual(tuple(self._single(5.0)), RED)
        self.assertEqual(tuple(self._single(-1.0)), PURPLE)
        self.assertEqual(tuple(self._single(-3.0)), PURPLE)
        r, g, b = colorsys.hsv_to_rgb(135 / 360, 1, 1)
        expected = tuple(int(np.floor(255 * x + 0.5)) for x in (r, g, b))
        self.assertEqual(tuple(self._single(0.0)), expected)

    def test_background_is_white(self):
        ratio = _ratio([0.1, 0.5j, -0.3])
        rgb = colorize(rasterize_binary(ratio), ratio, self.cal)
        self.assertEqual(_color_count(rgb, (255, 255, 255)), 32 * 32 - 3)

    def test_later_point_wins_shared_pixel(self):
        ratio = _ratio([0.0 + 0j, 1e-9 + 0j, 5 + 0j])
        binary = rasterize_binary(ratio)
        self.assertEqual(binary.set_count, 2)
        cal = ColorCalibration(p_min=0.0, p_max=1e-9, window=1, couple_index=0)
        rgb = colorize(binary, ratio, cal)
        self.assertEqual(tuple(rgb.pixels[:, binary.rows[0], binary.cols[0]]), RED)

    def test_degenerate_calibration_is_red(self):
        series = _constant_series(np.ones((2, 2, 4)) * (1 + 1j), 5)
        cal = calibrate_colormap(series, COUPLE, 5)
        self.assertEqual(cal.p_min, cal.p_max)
        self.assertTrue(np.all(hue_angles(np.array([cal.p_min, cal.p_min + 1]), cal) == 0))
        rgb = couple_layers(series.frame(0), COUPLE, cal)[1]
        self.assertEqual(_color_count(rgb, RED), 1)

    def test_degenerate_calibration_paints_low_points_red(self):
        cal = ColorCalibration(p_min=1.0, p_max=1.0, window=5, couple_index=0)
        np.testing.assert_array_equal(hue_angles(np.array([-3.0, 0.5, 1.0, 4.0]), cal), 0.0)
        values = np.ones((2, 2, 4), dtype=complex)
        values[0, 0] = [0.2, -0.5, 0.3j, 0.1]
        binary, rgb, _ = couple_layers(_frame(values), COUPLE, cal)
        self.assertEqual(_color_count(rgb, PURPLE), 0)
        self.assertEqual(_color_count(rgb, RED), binary.set_count)

    def test_calibration_from_means(self):
        frame = np.ones((1, 2, 2), dtype=complex)
        frame[0, 0] = [1 + 1j, 2 + 2j]
        cal = calibrate_colormap(_constant_series(frame, 6), COUPLE, 4)
        self.assertAlmostEqual(cal.p_min, 2.0)
        self.assertAlmostEqual(cal.p_max, 4.0)

    def test_calibration_matches_direct_means(self):
        series = simulate_series(preset_scenario(1, seed=10), 30)
        cal = calibrate_colormap(series, COUPLE, 20)
        mean_ratio = (series.values[10:, 0, 0] / series.values[10:, 0, 1]).mean(axis=0)
        p = mean_ratio.real + mean_ratio.imag
        self.assertAlmostEqual(cal.p_min, p.min(), places=12)
        self.assertAlmostEqual(cal.p_max, p.max(), places=12)
        with self.assertRaises(InsufficientHistoryError):
            calibrate_colormap(series, COUPLE, 31)

    def test_gray_levels(self):
        rgb = RgbImage(pixels=np.array([[[255, 255, 0]], [[255, 0, 0]], [[255, 0, 0]]]))
        np.testing.assert_array_equal(to_gray(rgb).pixels, [[[255, 76, 0]]])

    def test_merge(self):
        white = GrayImage(pixels=np.full((1, 32, 32), 255))
        np.testing.assert_array_equal(merge_channels([white]).values, np.ones((1, 32, 32)))
        rng = np.random.default_rng(11)
        grays = [GrayImage(pixels=rng.integers(0, 256, size=(1, 32, 32))) for _ in range(2)]
        merged = merge_channels(grays).values
        np.testing.assert_array_equal(merged[0], grays[0].pixels[0] / 255)
        np.testing.assert_array_equal(merged[1], grays[1].pixels[0] / 255)
        with self.assertRaises(ImageShapeError):
            merge_channels([white, GrayImage(pixels=np.zeros((1, 16, 16)))])


class StaticFeatureImageTests(SimpleTestCase):
    calibration_frames = 200

    def setUp(self):
        self.empty_room = simulate_series(preset_scenario(1, seed=13), self.calibration_frames + 100)
        self.couples = ratio_couples(2, 2, 3)
        self.cals = [calibrate_colormap(self.empty_room.slice(0, self.calibration_frames), c,
                                        self.calibration_frames, q)
                     for q, c in enumerate(self.couples)]

    def test_empty_room_spans_the_hue_bar(self):
        hues = np.concatenate([
            hue_angles(position_values(csi_ratio(self.empty_room.frame(t), self.couples[0])), self.cals[0])
            for t in range(self.calibration_frames, self.calibration_frames + 100)
        ])
        occupied = np.histogram(hues, bins=np.linspace(0, 270, 11))[0] > 0
        self.assertGreaterEqual(occupied.sum(), 6)

    def test_nlos_person_shifts_towards_red(self):
        def colours(series, frames):
            reds, purples = 0, []
            for t in frames:
                rgb = couple_layers(series.frame(t), self.couples[0], self.cals[0])[1]
                reds += _color_count(rgb, RED)
                purples.append(_color_count(rgb, PURPLE))
            return reds, np.array(purples)

        empty_red, _ = colours(self.empty_room, range(self.calibration_frames, self.calibration_frames + 100))
        for variant in (0, 1):
            nlos = simulate_series(preset_scenario(2, seed=13, variant=variant), 100)
            nlos_red, nlos_purple = colours(nlos, range(100))
            self.assertGreater(nlos_red, empty_red)
            self.assertGreaterEqual(np.mean(nlos_purple == 0), 0.9)

    def test_deterministic_and_bounded(self):
        frame = self.empty_room.frame(250)
        a = static_feature_image(frame, self.couples, self.cals).values
        b = static_feature_image(frame, self.couples, self.cals).values
        np.testing.assert_array_equal(a, b)
        self.assertEqual(a.shape, (3, 32, 32))
        self.assertTrue(np.all((a >= 0) & (a <= 1)))

    def test_phase_offsets_leave_images_unchanged(self):
        scenario = preset_scenario(2, seed=13)
        plain = simulate_series(replace(scenario, phase_offset_mode="none"), 10)
        offset = simulate_series(scenario, 10)
        for t in range(10):
            np.testing.assert_array_equal(
                static_feature_image(offset.frame(t), self.couples, self.cals).values,
                static_feature_image(plain.frame(t), self.couples, self.cals).values,
            )

    def test_channel_depends_on_its_couple_only(self):
        frame = self.empty_room.frame(260)
        full = static_feature_image(frame, self.couples, self.cals).values
        alone = static_feature_image(frame, self.couples[1:2], self.cals[1:2]).values
        np.testing.assert_array_equal(full[1], alone[0])

    def test_translation_changes_colours(self):
        ratio = csi_ratio(self.empty_room.frame(270), self.couples[0])
        shifted = RatioVector(values=ratio.values + 0.5, couple=ratio.couple, timestamp=ratio.timestamp)
        a, b = rasterize_binary(ratio), rasterize_binary(shifted)
        np.testing.assert_array_equal(a.pixels, b.pixels)
        self.assertFalse(np.array_equal(colorize(a, ratio, self.cals[0]).pixels,
                                        colorize(b, shifted, self.cals[0]).pixels))

    def test_unmerged_image_keeps_the_colour_layers(self):
        frame = self.empty_room.frame(255)
        colors = color_feature_image(frame, self.couples, self.cals).values
        self.assertEqual(colors.shape, (9, 32, 32))
        for q, (couple, cal) in enumerate(zip(self.couples, self.cals)):
            rgb = couple_layers(frame, couple, cal)[1]
            np.testing.assert_allclose(colors[3 * q:3 * q + 3] * 255, rgb.pixels, atol=1e-9)


# ─────────────────────────────────────────────────────────────────────────────
#  Featurization and rendering
# ─────────────────────────────────────────────────────────────────────────────

class FeaturizeTests(SimpleTestCase):
    cfg = FeatureConfig(tau=10, tau_gamma=30, tau_c=30)
    train, test = 30, 20

    def setUp(self):
        frames = self.train + self.test + 2 * (self.cfg.tau - 1)
        self.series = [simulate_series(preset_scenario(case_id, seed=14), frames) for case_id in (1, 4)]
        self.calibration = calibrate_features(self.series[0], self.cfg, self.train)

    def test_window_split(self):
        self.assertEqual(window_split(38, 10, 30), SPLIT_TRAIN)
        self.assertEqual(window_split(39, 10, 30), SPLIT_GUARD)
        self.assertEqual(window_split(47, 10, 30), SPLIT_GUARD)
        self.assertEqual(window_split(48, 10, 30), SPLIT_TEST)

    def test_record_counts_and_splits(self):
        dataset = featurize_series(self.series[1], self.calibration, self.cfg, self.train, source=1)
        self.assertEqual(len(dataset), len(self.series[1]) - self.cfg.tau + 1)
        self.assertEqual(int((dataset.splits == SPLIT_TRAIN).sum()), self.train)
        self.assertEqual(int((dataset.splits == SPLIT_TEST).sum()), self.test)
        self.assertEqual(int((dataset.splits == SPLIT_GUARD).sum()), self.cfg.tau - 1)
        self.assertEqual(set(dataset.labels.tolist()), {4})
        self.assertEqual(dataset.rp.shape[1:], (1, 32, 32))
        self.assertEqual(dataset.ratio.shape[1:], (3, 32, 32))

    def test_repeatable_and_parallel_agree(self):
        a = featurize_all(self.series, self.calibration, self.cfg, self.train, workers=1)
        b = featurize_all(self.series, self.calibration, self.cfg, self.train, workers=2)
        np.testing.assert_array_equal(a.rp, b.rp)
        np.testing.assert_array_equal(a.ratio, b.ratio)
        np.testing.assert_array_equal(a.sources, b.sources)

    def test_moving_records_are_whiter(self):
        data = featurize_all(self.series, self.calibration, self.cfg, self.train)
        white = 1.0 - data.rp.mean(axis=(1, 2, 3))
        self.assertGreater(white[data.labels == 4].mean(), white[data.labels == 1].mean())

    def test_calibration_only_from_empty_room(self):
        with self.assertRaises(CalibrationError):
            calibrate_features(self.series[1], self.cfg, self.train)

    def test_unmerged_records_carry_three_channels_per_couple(self):
        cfg = replace(self.cfg, merge_channels=False)
        dataset = featurize_series(self.series[0], self.calibration, cfg, self.train)
        self.assertEqual(dataset.ratio_channels, 9)
        self.assertEqual(dataset.ratio.shape[1:], (9, 32, 32))
        merged = featurize_series(self.series[0], self.calibration, self.cfg, self.train)
        np.testing.assert_array_equal(dataset.rp, merged.rp)


class RenderTests(SimpleTestCase):

    def test_pgm_and_ppm_headers(self):
        with tempfile.TemporaryDirectory() as tmp:
            plot = recurrence_plot(_window([0.1, 0.9, 0.1]), 0.2)
            pgm = write_pgm(rp_pixels(plot), Path(tmp) / "rp.pgm")
            self.assertEqual(pgm.read_bytes().split(maxsplit=4)[:4], [b"P5", b"3", b"3", b"255"])
            ppm = write_ppm(np.zeros((3, 4, 5)), Path(tmp) / "c.ppm")
            self.assertEqual(ppm.read_bytes().split(maxsplit=4)[:4], [b"P6", b"5", b"4", b"255"])
            np.testing.assert_array_equal(read_netpbm(pgm), rp_pixels(plot))

    def test_rp_orientation_and_levels(self):
        plot = recurrence_plot(_window([0.1, 0.9, 0.1]), 0.2)
        pixels = rp_pixels(plot)
        # bottom row is t = 0
        np.testing.assert_array_equal(pixels[-1], [0, 255, 0])
        binary = BinaryImage(pixels=np.eye(2, dtype=np.uint8), centroid=0j, scale=1.0,
                             rows=np.array([0, 1]), cols=np.array([0, 1]))
        np.testing.assert_array_equal(binary_pixels(binary), [[0, 255], [255, 0]])

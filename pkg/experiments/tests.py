import json
import shutil
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.exceptions import ValidationError
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings

from csi.services.dump import read_dump
from evaluation.services.report import read_report, report_from_predictions
from experiments.management.commands._common import EXIT_IO, EXIT_NUMERIC, EXIT_VALIDATION, exit_code
from experiments.models import ExperimentRun, RunStatus
from experiments.services.config import GenerationConfig, RunConfig, load_config
from feig.services.recurrence import df_window, recurrence_plot
from feig.services.render import read_netpbm, rp_pixels
from feig.types import SPLIT_TEST, FeatureCalibration
from learning.exceptions import NonFiniteGradientError, NonFiniteLossError
from learning.services.dataset import read_dataset

TINY = {
    "seed": 3,
    "csi": {"train_windows": 12, "test_windows": 6, "n_subcarriers": 8,
            "jitter_sigma": 0.0, "phase_offset_mode": "none"},
    "feig": {"tau": 4, "tau_gamma": 10, "tau_c": 10, "width": 8, "height": 8},
    "train": {"batch_size": 8, "epochs_stage1": 1, "epochs_stage2": 1, "epochs_stage3": 2,
              "stage_channels": [4, 4, 4, 4], "strict_projection": False},
    "eval": {"render_per_case": 1},
}
FRAMES = 12 + 6 + 2 * (4 - 1)
RECORDS_PER_DUMP = FRAMES - 4 + 1


def _write_config(directory: Path, data=None) -> str:
    path = Path(directory) / "config.json"
    path.write_text(json.dumps(TINY if data is None else data))
    return str(path)


def _run(command, *args):
    out = StringIO()
    call_command(command, *args, stdout=out)
    return out.getvalue()


class RunConfigTests(SimpleTestCase):

    def test_defaults(self):
        cfg = RunConfig()
        self.assertEqual(cfg.feig.tau, 50)
        self.assertEqual(cfg.train.batch_size, 128)
        self.assertEqual(cfg.csi.cases, (1, 2, 3, 4))
        self.assertEqual(len(cfg.csi.variants()), 5)

    def test_unknown_keys_name_their_path(self):
        with self.assertRaisesMessage(ValidationError, "train.learning_rte"):
            RunConfig.from_dict({"train": {"learning_rte": 0.1}})
        with self.assertRaisesMessage(ValidationError, "seeds"):
            RunConfig.from_dict({"seeds": 1})

    def test_zero_sample_count_is_rejected(self):
        with self.assertRaises(ValidationError):
            RunConfig.from_dict({"csi": {"train_windows": 0}})

    def test_calibration_window_must_fit_train_frames(self):
        with self.assertRaises(ValidationError):
            RunConfig.from_dict({"csi": {"train_windows": 5}, "feig": {"tau": 4, "tau_gamma": 10, "tau_c": 2}})

    def test_round_trip_and_digest(self):
        cfg = RunConfig.from_dict(TINY)
        self.assertEqual(RunConfig.from_dict(cfg.to_dict()), cfg)
        self.assertEqual(RunConfig.from_dict(cfg.to_dict()).digest(), cfg.digest())
        self.assertNotEqual(cfg.with_overrides(seed=4).digest(), cfg.digest())
        self.assertEqual(cfg.train.stage_channels, (4, 4, 4, 4))

    def test_ablation_switches(self):
        cfg = RunConfig.from_dict({"train": {"supcon": False, "classifier": "rp_only"},
                                   "feig": {"merge_channels": False}})
        self.assertEqual(cfg.feig.ratio_channels, 9)
        self.assertEqual([cfg.train.skips(s) for s in (1, 2, 3)], [True, True, False])
        self.assertTrue(cfg.train.end_to_end)
        self.assertEqual([RunConfig().train.skips(s) for s in (1, 2, 3)], [False, False, False])
        self.assertEqual(RunConfig().feig.ratio_channels, 3)

    def test_frame_count_holds_train_guard_and_test_windows(self):
        self.assertEqual(GenerationConfig(train_windows=12, test_windows=6).frame_count(4), FRAMES)

    def test_invalid_json(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "broken.json"
            path.write_text("{seed: 1")
            with self.assertRaises(ValidationError):
                load_config(path)


class ExitCodeTests(SimpleTestCase):

    def test_mapping(self):
        self.assertEqual(exit_code(NonFiniteLossError("nan")), EXIT_NUMERIC)
        self.assertEqual(exit_code(NonFiniteGradientError("nan")), EXIT_NUMERIC)
        self.assertEqual(exit_code(FileNotFoundError("x")), EXIT_IO)
        self.assertEqual(exit_code(ValidationError("x")), EXIT_VALIDATION)
        self.assertEqual(exit_code(ValueError("x")), EXIT_VALIDATION)


@override_settings(CRONOS_RECORD_RUNS=False, CRONOS_FEATURIZE_WORKERS=1)
class PipelineCommandTests(SimpleTestCase):
    """gen -> featurize -> train all once per class; each test writes to its own directory."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = Path(tempfile.mkdtemp())
        cls.config = _write_config(cls.tmp)
        cls.out = cls.tmp / "run"
        _run("gen", "--config", cls.config, "--out", str(cls.out))
        _run("featurize", "--config", cls.config, "--out", str(cls.out))
        _run("train", "--config", cls.config, "--out", str(cls.out), "--stage", "all")

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)
        super().tearDownClass()

    def _fresh(self, name):
        return self.tmp / name

    def _config_in(self, name, data):
        folder = self._fresh(name)
        folder.mkdir()
        return _write_config(folder, data)

    # ── gen ──

    def test_gen_writes_one_dump_per_case_variant(self):
        manifest = pd.read_csv(self.out / "manifest.csv")
        self.assertEqual(manifest["case"].tolist(), [1, 2, 2, 3, 4])
        self.assertEqual(manifest["variant"].tolist(), [0, 0, 1, 0, 0])
        self.assertTrue((manifest["frames"] == FRAMES).all())
        for dump in manifest["dump"]:
            self.assertTrue((self.out / dump).exists())
        self.assertTrue((self.out / "run_config.json").exists())

    def test_gen_is_deterministic(self):
        other = self._fresh("gen_again")
        _run("gen", "--config", self.config, "--out", str(other))
        for name in ["manifest.csv", "dumps/case1_v0.csid", "dumps/case4_v0.csid", "scenarios/case2_v1.json"]:
            self.assertEqual((other / name).read_bytes(), (self.out / name).read_bytes(), name)

    def test_gen_rejects_zero_windows(self):
        bad = dict(TINY, csi=dict(TINY["csi"], test_windows=0))
        with self.assertRaises(CommandError) as ctx:
            _run("gen", "--config", self._config_in("bad_gen_cfg", bad),
                 "--out", str(self._fresh("bad_gen")))
        self.assertEqual(ctx.exception.returncode, EXIT_VALIDATION)

    # ── featurize ──

    def test_featurize_record_count_and_splits(self):
        dataset = read_dataset(self.out / "features.crds")
        self.assertEqual(len(dataset), 5 * RECORDS_PER_DUMP)
        self.assertEqual(int(np.count_nonzero(dataset.splits == SPLIT_TEST)), 5 * 6)
        meta = json.loads((self.out / "features_manifest.json").read_text())
        self.assertEqual(meta["records"], len(dataset))
        self.assertEqual(meta["calibration"]["threshold"]["gamma"], 0.0)

    def test_featurize_is_bit_identical(self):
        other = self._fresh("featurize_again")
        _run("featurize", "--config", self.config, "--out", str(other),
             "--manifest", str(self.out / "manifest.csv"))
        self.assertEqual((other / "features.crds").read_bytes(), (self.out / "features.crds").read_bytes())

    def test_moving_person_rps_are_whiter(self):
        dataset = read_dataset(self.out / "features.crds")
        white = 1.0 - dataset.rp[:, 0].mean(axis=(1, 2))
        self.assertGreater(white[dataset.labels == 4].mean(), white[dataset.labels == 1].mean())

    def test_featurize_without_manifest_is_an_io_error(self):
        with self.assertRaises(CommandError) as ctx:
            _run("featurize", "--config", self.config, "--out", str(self._fresh("no_manifest")))
        self.assertEqual(ctx.exception.returncode, EXIT_IO)

    # ── train ──

    def test_train_all_writes_three_checkpoints_and_losses(self):
        for stage in (1, 2, 3):
            self.assertTrue((self.out / "checkpoints" / f"stage{stage}.crnm").exists())
        losses = pd.read_csv(self.out / "losses.csv")
        self.assertEqual(len(losses), 1 + 1 + 2)
        self.assertEqual(losses["stage"].tolist(), [1, 2, 3, 3])
        self.assertTrue(np.isfinite(losses["loss"]).all())

    def test_train_single_stage_from_checkpoints(self):
        checkpoints = self._fresh("stage3_only_ckpt")
        shutil.copytree(self.out / "checkpoints", checkpoints)
        out = self._fresh("stage3_only")
        _run("train", "--config", self.config, "--out", str(out), "--stage", "3",
             "--dataset", str(self.out / "features.crds"), "--checkpoints", str(checkpoints))
        self.assertEqual(len(pd.read_csv(out / "losses.csv")), 2)
        self.assertEqual((checkpoints / "stage1.crnm").read_bytes(),
                         (self.out / "checkpoints" / "stage1.crnm").read_bytes())

    def test_train_stage3_without_earlier_checkpoints(self):
        with self.assertRaises(CommandError) as ctx:
            _run("train", "--config", self.config, "--out", str(self._fresh("missing_prereq")), "--stage", "3",
                 "--dataset", str(self.out / "features.crds"))
        self.assertEqual(ctx.exception.returncode, EXIT_VALIDATION)
        self.assertIn("stage-1 checkpoint", str(ctx.exception))

    def test_train_missing_dataset_is_an_io_error(self):
        with self.assertRaises(CommandError) as ctx:
            _run("train", "--config", self.config, "--out", str(self._fresh("no_dataset")), "--stage", "1")
        self.assertEqual(ctx.exception.returncode, EXIT_IO)

    def test_unmerged_cross_entropy_ablation_runs_through(self):
        data = dict(TINY, feig=dict(TINY["feig"], merge_channels=False), train=dict(TINY["train"], supcon=False))
        config = self._config_in("ablation_cfg", data)
        out = self._fresh("ablation")
        _run("featurize", "--config", config, "--out", str(out), "--manifest", str(self.out / "manifest.csv"))
        self.assertEqual(read_dataset(out / "features.crds").ratio.shape[1:], (9, 8, 8))

        _run("train", "--config", config, "--out", str(out), "--stage", "all")
        self.assertEqual(pd.read_csv(out / "losses.csv")["stage"].tolist(), [3, 3])
        for stage in (1, 2, 3):
            self.assertTrue((out / "checkpoints" / f"stage{stage}.crnm").exists())

        _run("eval", "--config", config, "--out", str(out))
        self.assertEqual(np.asarray(read_report(out / "metrics.json")["confusion"]).sum(), 5 * 6)

        _run("render", "--config", config, "--out", str(out), "--records", "0")
        files = {p.name for p in (out / "renders" / "record_000000").iterdir()}
        self.assertEqual({"ratio_color_q1.ppm", "ratio_color_q2.ppm", "ratio_color_q3.ppm"} - files, set())
        self.assertNotIn("ratio_gray_q1.pgm", files)

    # ── eval ──

    def test_eval_metrics_match_prediction_dump(self):
        out = self._fresh("eval_single")
        _run("eval", "--config", self.config, "--out", str(out),
             "--dataset", str(self.out / "features.crds"), "--checkpoints", str(self.out / "checkpoints"))
        report = read_report(out / "metrics.json")
        self.assertEqual(set(report), {"confusion", "per_class", "average_f1", "db_index", "switch_stats"})
        self.assertEqual(np.asarray(report["confusion"]).sum(), 5 * 6)
        self.assertEqual(report_from_predictions(out / "predictions.csv", report["db_index"]), report)
        self.assertEqual(pd.read_csv(out / "embeddings.csv").shape, (5 * 6, 2 + 512))

    def test_eval_trials(self):
        out = self._fresh("eval_trials")
        _run("eval", "--config", self.config, "--out", str(out), "--trials", "2",
             "--dataset", str(self.out / "features.crds"))
        report = read_report(out / "metrics.json")
        self.assertEqual([t["seed"] for t in report["trials"]], [3, 4])
        self.assertEqual(report["aggregate"]["trials"], 2)
        self.assertEqual(set(report["aggregate"]["per_class_f1"]), {"1", "2", "3", "4"})
        self.assertTrue((out / "predictions_trial1.csv").exists())

    # ── render ──

    def test_render_files_per_record(self):
        out = self._fresh("render")
        _run("render", "--config", self.config, "--out", str(out), "--dataset", str(self.out / "features.crds"))
        folders = sorted((out / "renders").iterdir())
        self.assertEqual(len(folders), 4)
        q = RunConfig.from_dict(TINY).feig.n_couples
        for folder in folders:
            files = sorted(p.name for p in folder.iterdir())
            self.assertEqual(len(files), 3 + q)
            for name in files:
                if name.endswith(".pgm"):
                    header = (folder / name).read_bytes().split(b"\n", 3)[:3]
                    size = b"4 4" if name == "rp.pgm" else b"8 8"
                    self.assertEqual(header, [b"P5", size, b"255"])

    def test_rendered_rp_is_the_window_plot(self):
        dataset = read_dataset(self.out / "features.crds")
        record = int(np.flatnonzero(dataset.labels == 4)[0])
        out = self._fresh("render_moving")
        _run("render", "--config", self.config, "--out", str(out),
             "--dataset", str(self.out / "features.crds"), "--records", str(record))
        meta = json.loads((self.out / "features_manifest.json").read_text())
        series = read_dump(meta["dumps"][int(dataset.sources[record])])
        feig = RunConfig.from_dict(TINY).feig
        window = df_window(series, feig.tx_antenna, feig.rx_pair,
                           int(dataset.timestamps[record]) - series.start, feig.tau)
        gamma = FeatureCalibration.from_dict(meta["calibration"]).threshold.gamma
        expected = rp_pixels(recurrence_plot(window, gamma))
        pixels = read_netpbm(out / "renders" / f"record_{record:06d}" / "rp.pgm")
        self.assertEqual(pixels.shape, (4, 4))
        np.testing.assert_array_equal(pixels, expected)

    def test_static_record_rp_is_mostly_black(self):
        dataset = read_dataset(self.out / "features.crds")
        record = int(np.flatnonzero((dataset.labels == 1) & (dataset.splits == SPLIT_TEST))[0])
        out = self._fresh("render_static")
        _run("render", "--config", self.config, "--out", str(out),
             "--dataset", str(self.out / "features.crds"), "--records", str(record))
        pixels = read_netpbm(out / "renders" / f"record_{record:06d}" / "rp.pgm")
        self.assertGreaterEqual(np.mean(pixels == 0), 0.9)

    def test_render_unknown_record(self):
        with self.assertRaises(CommandError) as ctx:
            _run("render", "--config", self.config, "--out", str(self._fresh("render_bad")),
                 "--dataset", str(self.out / "features.crds"), "--records", "100000")
        self.assertEqual(ctx.exception.returncode, EXIT_VALIDATION)


@override_settings(CRONOS_RECORD_RUNS=True, CRONOS_FEATURIZE_WORKERS=1)
class RunLedgerTests(TestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, True)
        self.config = _write_config(self.tmp)
        self.out = str(self.tmp / "run")

    def test_successful_runs_are_recorded(self):
        _run("gen", "--config", self.config, "--out", self.out)
        _run("featurize", "--config", self.config, "--out", self.out)
        runs = list(ExperimentRun.objects.order_by("started_at", "id"))
        self.assertEqual([r.command for r in runs], ["gen", "featurize"])
        self.assertTrue(all(r.status == RunStatus.SUCCEEDED for r in runs))
        self.assertEqual(runs[0].config_digest, RunConfig.from_dict(TINY).with_overrides(out_dir=self.out).digest())
        self.assertTrue(any(path.endswith("manifest.csv") for path in runs[0].outputs))
        self.assertEqual(runs[1].metrics["records"], 5 * RECORDS_PER_DUMP)
        self.assertIsNotNone(runs[1].finished_at)

    def test_failed_run_keeps_the_error(self):
        with self.assertRaises(CommandError):
            _run("train", "--config", self.config, "--out", self.out, "--stage", "2")
        run = ExperimentRun.objects.get(command="train")
        self.assertEqual(run.status, RunStatus.FAILED)
        self.assertIn("FileNotFoundError", run.error)

    @override_settings(CRONOS_RECORD_RUNS=False)
    def test_recording_can_be_switched_off(self):
        _run("gen", "--config", self.config, "--out", self.out)
        self.assertFalse(ExperimentRun.objects.exists())

import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.test import SimpleTestCase
from sklearn.metrics import confusion_matrix, davies_bouldin_score, precision_recall_fscore_support

from evaluation.exceptions import LabelRangeError, LengthMismatchError, MetricsError
from evaluation.services.embeddings import export_embeddings
from evaluation.services.metrics import confusion, davies_bouldin, f1_scores, switch_stats
from evaluation.services.report import (
    aggregate_trials,
    build_report,
    predictions_frame,
    read_report,
    report_from_predictions,
    write_predictions,
    write_report,
)
from evaluation.types import ConfusionMatrix
from feig.types import FeatureDataset
from learning.services.inference import build_model
from learning.types import TrainConfig


def _blobs(rng, per_class=20, dim=5, spread=1.0, distance=6.0):
    centers = rng.normal(size=(4, dim)) * distance
    labels = np.repeat(np.arange(1, 5), per_class)
    x = centers[labels - 1] + rng.normal(size=(labels.size, dim)) * spread
    return x, labels


class ConfusionTests(SimpleTestCase):

    def test_perfect_predictions_are_diagonal(self):
        labels = [1, 2, 3, 4, 4, 2]
        cm = confusion(labels, labels)
        np.testing.assert_array_equal(cm.counts, np.diag([1, 2, 1, 2]))
        scores = f1_scores(cm)
        np.testing.assert_array_equal(scores.f1, np.ones(4))
        self.assertEqual(scores.average_f1, 1.0)

    def test_everything_predicted_as_empty_room(self):
        cm = confusion([1] * 6, [1, 2, 3, 4, 2, 3])
        self.assertEqual(np.count_nonzero(cm.counts[:, 1:]), 0)
        np.testing.assert_array_equal(cm.counts[:, 0], [1, 2, 2, 1])

    def test_matches_sklearn(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            labels = rng.integers(1, 5, size=30)
            preds = rng.integers(1, 5, size=30)
            expected = confusion_matrix(labels, preds, labels=[1, 2, 3, 4])
            np.testing.assert_array_equal(confusion(preds, labels).counts, expected)

    def test_errors(self):
        with self.assertRaises(LengthMismatchError):
            confusion([1, 2], [1])
        with self.assertRaises(LabelRangeError):
            confusion([1, 5], [1, 2])
        with self.assertRaises(LabelRangeError):
            confusion([1, 2], [0, 2])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        labels, preds = rng.integers(1, 5, 40), rng.integers(1, 5, 40)
        perm = rng.permutation(40)
        np.testing.assert_array_equal(confusion(preds, labels).counts, confusion(preds[perm], labels[perm]).counts)


class F1Tests(SimpleTestCase):

    def test_equal_precision_and_recall(self):
        counts = np.zeros((4, 4), dtype=np.int64)
        counts[0, 0], counts[0, 1], counts[1, 0] = 9, 1, 1
        counts[1, 1] = 9
        counts[2, 2] = counts[3, 3] = 5
        scores = f1_scores(ConfusionMatrix(counts))
        self.assertAlmostEqual(scores.precision[0], 0.9)
        self.assertAlmostEqual(scores.recall[0], 0.9)
        self.assertAlmostEqual(scores.f1[0], 0.9)

    def test_zero_true_positives(self):
        counts = np.zeros((4, 4), dtype=np.int64)
        counts[0, 1], counts[1, 0] = 3, 2
        counts[2, 2] = 1
        scores = f1_scores(ConfusionMatrix(counts))
        self.assertEqual(scores.f1[0], 0.0)
        self.assertEqual(scores.f1[1], 0.0)
        self.assertEqual(scores.f1[3], 0.0)
        self.assertEqual(scores.f1[2], 1.0)

    def test_matches_sklearn(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            labels = rng.integers(1, 5, size=25)
            preds = np.where(rng.random(25) < 0.6, labels, rng.integers(1, 5, size=25))
            scores = f1_scores(confusion(preds, labels))
            p, r, f, _ = precision_recall_fscore_support(labels, preds, labels=[1, 2, 3, 4], zero_division=0)
            np.testing.assert_allclose(scores.precision, p, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(scores.recall, r, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(scores.f1, f, rtol=1e-12, atol=1e-12)
            self.assertAlmostEqual(scores.average_f1, float(np.mean(f)), places=12)


class DaviesBouldinTests(SimpleTestCase):

    def test_singletons(self):
        self.assertEqual(davies_bouldin(np.array([[0.0, 0.0], [3.0, 4.0]]), [1, 2]), 0.0)

    def test_hand_example(self):
        x = np.array([[-1.0], [1.0], [9.0], [11.0]])
        self.assertAlmostEqual(davies_bouldin(x, [1, 1, 2, 2]), 0.2, places=12)

    def test_matches_sklearn_on_blobs(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x, labels = _blobs(rng)
            expected = davies_bouldin_score(x, labels)
            self.assertAlmostEqual(davies_bouldin(x, labels), expected, delta=1e-9 * max(1.0, expected))

    def test_translation_and_scale_invariance(self):
        rng = np.random.default_rng(4)
        x, labels = _blobs(rng)
        base = davies_bouldin(x, labels)
        self.assertAlmostEqual(davies_bouldin(x + 17.5, labels), base, places=9)
        self.assertAlmostEqual(davies_bouldin(x * 3.0, labels), base, places=9)

    def test_coincident_centroids(self):
        x = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0], [5.0, 5.0]])
        with self.assertLogs("evaluation.services.metrics", level="WARNING"):
            self.assertEqual(davies_bouldin(x, [1, 1, 2, 2, 3]), np.inf)

    def test_single_cluster(self):
        with self.assertRaises(MetricsError):
            davies_bouldin(np.zeros((3, 2)), [1, 1, 1])


class SwitchStatsTests(SimpleTestCase):

    def test_fraction_per_case(self):
        stats = switch_stats([1, 1, 0, 0, 1, 0], [4, 4, 1, 2, 2, 1])
        self.assertEqual(stats, {"1": 0.0, "2": 0.5, "3": None, "4": 1.0})


class ReportTests(SimpleTestCase):

    def test_report_recomputes_from_prediction_csv(self):
        rng = np.random.default_rng(5)
        labels = rng.integers(1, 5, size=40)
        preds = np.where(rng.random(40) < 0.7, labels, rng.integers(1, 5, size=40))
        omega = (preds == 4).astype(int)
        probs = rng.dirichlet(np.ones(4), size=40)
        report = build_report(preds, labels, omega, db_index=1.25)

        with tempfile.TemporaryDirectory() as tmp:
            csv_path = Path(tmp) / "predictions.csv"
            write_predictions(predictions_frame(labels, preds, omega, probs), csv_path)
            frame = pd.read_csv(csv_path)
            self.assertEqual(list(frame.columns), ["id", "label", "predicted", "omega", "p1", "p2", "p3", "p4"])
            self.assertEqual(report_from_predictions(csv_path, db_index=1.25), report)

            json_path = write_report(report, Path(tmp) / "metrics.json")
            loaded = read_report(json_path)
        self.assertEqual(set(loaded), {"confusion", "per_class", "average_f1", "db_index", "switch_stats"})
        self.assertEqual(loaded["confusion"], confusion(preds, labels).to_list())

    def test_aggregate_trials(self):
        reports = [build_report([1, 2, 3, 4], [1, 2, 3, 4], [0, 0, 0, 1], db_index=d) for d in (1.0, 2.0, 3.0)]
        reports[1] = build_report([1, 2, 3, 3], [1, 2, 3, 4], [0, 0, 0, 0], db_index=2.0)
        summary = aggregate_trials(reports)
        self.assertEqual(summary["trials"], 3)
        self.assertAlmostEqual(summary["db_index"]["mean"], 2.0)
        self.assertAlmostEqual(summary["db_index"]["std"], 1.0)
        self.assertEqual(summary["per_class_f1"]["1"], {"mean": 1.0, "std": 0.0})
        self.assertLess(summary["average_f1"]["mean"], 1.0)


class EmbeddingExportTests(SimpleTestCase):

    def _dataset(self, n=6):
        rng = np.random.default_rng(6)
        return FeatureDataset(
            labels=np.array([1, 2, 3, 4, 1, 2][:n], dtype=np.uint8),
            splits=np.zeros(n, dtype=np.uint8),
            sources=np.zeros(n, dtype=np.uint16),
            timestamps=np.arange(n, dtype=np.uint32),
            rp=rng.random((n, 1, 8, 8)).astype(np.float32),
            ratio=rng.random((n, 3, 8, 8)).astype(np.float32),
        )

    def test_columns_and_rows(self):
        dataset = self._dataset()
        model = build_model(TrainConfig(stage_channels=(4, 4, 4, 4), strict_projection=False), 3)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "embeddings.csv"
            export_embeddings(model, dataset, path)
            plain = pd.read_csv(path)
            export_embeddings(model, dataset, path, branch="rp", include_projections=True)
            extended = pd.read_csv(path)
        self.assertEqual(plain.shape, (6, 2 + 512))
        self.assertEqual(extended.shape, (6, 2 + 512 + 128))
        self.assertEqual(plain["label"].tolist(), [1, 2, 3, 4, 1, 2])
        self.assertTrue(np.isfinite(extended.to_numpy(dtype=float)).all())

    def test_unknown_branch(self):
        model = build_model(TrainConfig(stage_channels=(4, 4, 4, 4)), 3)
        with self.assertRaises(ValueError):
            export_embeddings(model, self._dataset(), "unused.csv", branch="joint")

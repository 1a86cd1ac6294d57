import itertools
import math
import tempfile
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from django.test import SimpleTestCase

from evaluation.services.metrics import davies_bouldin
from feig.types import FeatureDataset
from learning.exceptions import (
    CheckpointFormatError,
    DatasetFormatError,
    DeadProjectionError,
    MissingClassError,
    MissingPairError,
    NonFiniteGradientError,
    PrerequisiteError,
    ShapeMismatchError,
)
from learning.services.augment import augment
from learning.services.checkpoints import load_checkpoint, load_module, module_tensors, save_checkpoint
from learning.services.dataset import read_dataset, stratified_batches, write_dataset
from learning.services.gradcheck import grad_check
from learning.services.inference import (
    build_model,
    load_model,
    model_tensors,
    predict,
    predict_batch,
    project,
    save_stage,
)
from learning.services.losses import (
    LossDiagnostics,
    consultation_loss,
    cross_entropy,
    projection_supcon,
    stage2_loss,
    supcon_loss,
)
from learning.services.networks import (
    ContrastiveBranch,
    ProjectionHead,
    ResidualEncoder,
    encoder_forward,
    projection_forward,
    softmax,
)
from learning.services.optim import make_optimizer, optimizer_step
from learning.services.s3fec import ClassifierHeads, combine, s3fec_forward
from learning.services.training import train_all, train_stage2, train_stages
from learning.types import (
    AugmentConfig,
    ClassProbabilities,
    ContrastiveBatch,
    EncoderSpec,
    LossConfig,
    OptimizerConfig,
    TrainConfig,
)

TINY = (4, 4, 4, 4)
LABELS_8 = torch.tensor([1, 2, 3, 4, 1, 2, 3, 4])


def _unit(n, d, seed=0):
    g = torch.Generator().manual_seed(seed)
    return F.normalize(torch.randn(n, d, generator=g, dtype=torch.float64), dim=1)


def _toy_dataset(per_class=6, q=2, size=8, seed=0) -> FeatureDataset:
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(1, 5), per_class).astype(np.uint8)
    n = labels.size
    rp = (rng.random((n, 1, size, size)) * 0.2).astype(np.float32)
    ratio = (rng.random((n, q, size, size)) * 0.2).astype(np.float32)
    for i, case in enumerate(labels):
        rp[i, 0, :, :2 * case] += 0.8
        ratio[i, :, :2 * case, :] += 0.8
    return FeatureDataset(
        labels=labels,
        splits=np.zeros(n, dtype=np.uint8),
        sources=np.zeros(n, dtype=np.uint16),
        timestamps=np.arange(n, dtype=np.uint32),
        rp=rp,
        ratio=ratio,
    )


def _tiny_config(**overrides) -> TrainConfig:
    options = dict(batch_size=8, epochs_stage1=1, epochs_stage2=1, epochs_stage3=2,
                   stage_channels=TINY, strict_projection=False)
    options.update(overrides)
    return TrainConfig(**options)


def _supcon_oracle(z, labels, temperature):
    n = len(labels)
    total = 0.0
    for i in range(n):
        positives = [p for p in range(n) if p != i and labels[p] == labels[i]]
        if not positives:
            continue
        denominator = sum(math.exp(float(z[i] @ z[a]) / temperature) for a in range(n) if a != i)
        total += -sum(math.log(math.exp(float(z[i] @ z[p]) / temperature) / denominator)
                      for p in positives) / len(positives)
    return total


def _consultation_oracle(z_ratio, z_rp, labels):
    static, mixed = [], []
    for i, j in itertools.combinations(range(len(labels)), 2):
        a, b = int(labels[i]), int(labels[j])
        if a != b and a <= 3 and b <= 3:
            static.append(float(torch.linalg.norm(z_ratio[i] - z_ratio[j])))
        elif (a == 4) != (b == 4):
            mixed.append(float(torch.linalg.norm(z_rp[i] - z_rp[j])))
    return abs((np.mean(static) if static else 0.0) - (np.mean(mixed) if mixed else 0.0))


# ── Networks ─────────────────────────────────────────────────────────────────

class EncoderTests(SimpleTestCase):

    def test_output_is_512_for_any_channel_count(self):
        for channels in (1, 3):
            encoder = ResidualEncoder(EncoderSpec(channels, TINY))
            out = encoder_forward(encoder, torch.rand(channels, 32, 32))
            self.assertEqual(tuple(out.shape), (512,))

    def test_inference_is_deterministic(self):
        torch.manual_seed(0)
        encoder = ResidualEncoder(EncoderSpec(2, TINY))
        image = torch.rand(2, 32, 32)
        self.assertTrue(torch.equal(encoder_forward(encoder, image), encoder_forward(encoder, image)))

    def test_zero_parameters_give_zero_vector(self):
        encoder = ResidualEncoder(EncoderSpec(1, TINY))
        with torch.no_grad():
            for p in encoder.parameters():
                p.zero_()
        out = encoder_forward(encoder, torch.rand(1, 32, 32))
        self.assertTrue(torch.equal(out, torch.zeros(512)))

    def test_channel_mismatch(self):
        encoder = ResidualEncoder(EncoderSpec(3, TINY))
        with self.assertRaises(ShapeMismatchError):
            encoder_forward(encoder, torch.rand(1, 32, 32))

    def test_resnet18_depth_layout(self):
        spec = TrainConfig(depth="resnet18").encoder_spec(1)
        self.assertEqual(spec.stage_channels, (64, 128, 256, 512))
        self.assertEqual(spec.blocks_per_stage, (2, 2, 2, 2))
        encoder = ResidualEncoder(spec)
        self.assertEqual(len(encoder.stages[1]), 2)

    def test_out_dim_is_fixed(self):
        with self.assertRaises(ShapeMismatchError):
            EncoderSpec(1, TINY, out_dim=256)


class ProjectionHeadTests(SimpleTestCase):

    def _head(self, strict=False):
        head = ProjectionHead(in_dim=4, out_dim=2, strict=strict)
        with torch.no_grad():
            head.W1.weight.copy_(torch.eye(4))
            head.W2.weight.copy_(torch.tensor([[1.0, 0, 0, 0], [0, 0, 1.0, 0]]))
        return head

    def test_unit_norm(self):
        head = ProjectionHead()
        z = head(torch.randn(5, 512))
        np.testing.assert_allclose(torch.linalg.norm(z, dim=1).detach().numpy(), 1.0, atol=1e-6)

    def test_row_selector(self):
        z = projection_forward(self._head(), torch.tensor([3.0, 1.0, 4.0, 1.0]))
        np.testing.assert_allclose(z.detach().numpy(), [0.6, 0.8], atol=1e-7)

    def test_relu_zeroes_negative_channels(self):
        z = projection_forward(self._head(), torch.tensor([-3.0, 1.0, 4.0, 1.0]))
        np.testing.assert_allclose(z.detach().numpy(), [0.0, 1.0], atol=1e-7)

    def test_dead_head(self):
        v = torch.tensor([-1.0, 0.0, -2.0, 0.0])
        self.assertTrue(torch.equal(projection_forward(self._head(), v), torch.zeros(2)))
        with self.assertRaises(DeadProjectionError):
            projection_forward(self._head(strict=True), v)

    def test_softmax_sums_to_one(self):
        logits = torch.randn(16, 4, dtype=torch.float64) * 30
        probs = softmax(logits)
        self.assertTrue(bool((probs > 0).all()))
        np.testing.assert_allclose(probs.sum(dim=1).numpy(), 1.0, atol=1e-6)


# ── Gradient and optimizer contract ──────────────────────────────────────────

class GradCheckTests(SimpleTestCase):

    def test_quadratic(self):
        w = torch.tensor([0.3, -1.2, 2.5], dtype=torch.float64, requires_grad=True)
        self.assertLess(grad_check(lambda: (w ** 2).sum(), [w]), 1e-8)

    def test_supcon_through_projection_head(self):
        torch.manual_seed(1)
        head = ProjectionHead(in_dim=6, out_dim=4).double()
        with torch.no_grad():
            head.W1.weight.copy_(torch.rand(6, 6, dtype=torch.float64) + 0.1)
        v = torch.rand(8, 6, dtype=torch.float64) + 0.1

        def loss():
            return supcon_loss(ContrastiveBatch(head(v), LABELS_8), 0.07)

        self.assertLess(grad_check(loss, [head.W1.weight, head.W2.weight], eps_fd=1e-4), 1e-4)

    def test_stage2_loss_through_projection_head(self):
        torch.manual_seed(2)
        head = ProjectionHead(in_dim=6, out_dim=4).double()
        with torch.no_grad():
            head.W1.weight.copy_(torch.rand(6, 6, dtype=torch.float64) + 0.1)
        v = torch.rand(8, 6, dtype=torch.float64) + 0.1
        z_ref = _unit(4, 4, seed=3)

        def loss():
            return stage2_loss(ContrastiveBatch(head(v), LABELS_8), z_ref, LossConfig()).total

        self.assertLess(grad_check(loss, [head.W1.weight, head.W2.weight], eps_fd=1e-4), 1e-4)

    def test_cross_entropy_on_random_logits(self):
        g = torch.Generator().manual_seed(4)
        logits = torch.randn(6, 4, generator=g, dtype=torch.float64, requires_grad=True)
        labels = torch.tensor([1, 2, 3, 4, 2, 4])
        error = grad_check(lambda: cross_entropy(softmax(logits), labels), [logits], eps_fd=1e-5)
        self.assertLess(error, 1e-6)


class OptimizerTests(SimpleTestCase):

    def _scalar(self, value=1.0):
        return torch.nn.Parameter(torch.tensor([value], dtype=torch.float64))

    def test_zero_gradient_keeps_parameters(self):
        w = self._scalar()
        optimizer = make_optimizer([w], OptimizerConfig())
        w.grad = torch.zeros_like(w)
        optimizer_step(optimizer)
        self.assertEqual(float(w), 1.0)

    def test_first_step_has_learning_rate_magnitude(self):
        w = self._scalar()
        optimizer = make_optimizer([w], OptimizerConfig(learning_rate=1e-3))
        w.grad = torch.full_like(w, 0.5)
        optimizer_step(optimizer)
        self.assertAlmostEqual(1.0 - float(w), 1e-3, delta=1e-9)

    def test_non_finite_gradient(self):
        w = self._scalar()
        optimizer = make_optimizer([w], OptimizerConfig())
        w.grad = torch.tensor([float("nan")], dtype=torch.float64)
        with self.assertRaises(NonFiniteGradientError):
            optimizer_step(optimizer)
        self.assertEqual(float(w), 1.0)


# ── Augmentation ─────────────────────────────────────────────────────────────

class AugmentTests(SimpleTestCase):

    def setUp(self):
        self.image = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(0))

    def test_full_crop_without_flip_is_identity(self):
        cfg = AugmentConfig(crop_scale=(1.0, 1.0), flip_prob=0.0)
        rng = np.random.default_rng(0)
        for _ in range(10):
            self.assertTrue(torch.equal(augment(self.image, cfg, rng), self.image))

    def test_flip_is_an_involution(self):
        cfg = AugmentConfig(crop_scale=(1.0, 1.0), flip_prob=1.0)
        rng = np.random.default_rng(0)
        mirrored = augment(self.image, cfg, rng)
        self.assertTrue(torch.equal(mirrored, torch.flip(self.image, dims=(-1,))))
        self.assertTrue(torch.equal(augment(mirrored, cfg, rng), self.image))

    def test_values_stay_in_input_range(self):
        cfg = AugmentConfig()
        rng = np.random.default_rng(1)
        low, high = float(self.image.min()), float(self.image.max())
        for _ in range(50):
            out = augment(self.image, cfg, rng)
            self.assertEqual(tuple(out.shape), (3, 32, 32))
            self.assertGreaterEqual(float(out.min()), low - 1e-6)
            self.assertLessEqual(float(out.max()), high + 1e-6)

    def test_channels_share_the_transform(self):
        image = torch.rand(1, 32, 32).repeat(3, 1, 1)
        out = augment(image, AugmentConfig(), np.random.default_rng(2))
        self.assertTrue(torch.equal(out[0], out[1]))
        self.assertTrue(torch.equal(out[1], out[2]))

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            AugmentConfig(crop_scale=(0.5, 0.2))
        with self.assertRaises(ValueError):
            AugmentConfig(flip_prob=1.5)


# ── Losses ───────────────────────────────────────────────────────────────────

class SupConTests(SimpleTestCase):

    def test_two_views_of_one_label(self):
        z = _unit(2, 8)
        loss = supcon_loss(ContrastiveBatch(z, torch.tensor([3, 3])), 0.07)
        self.assertAlmostEqual(float(loss), 0.0, places=12)

    def test_different_labels_are_skipped(self):
        diagnostics = LossDiagnostics()
        z = _unit(2, 8).requires_grad_(True)
        with self.assertLogs("learning.services.losses", level="WARNING"):
            loss = projection_supcon(z, torch.tensor([1, 2]), 0.07, diagnostics)
        self.assertEqual(float(loss), 0.0)
        self.assertEqual(diagnostics.counts["empty_positive_anchors"], 2)
        loss.backward()

    def test_matches_double_loop(self):
        for seed in range(100):
            z = _unit(8, 5, seed=seed)
            labels = LABELS_8[torch.randperm(8, generator=torch.Generator().manual_seed(seed))]
            labels = torch.cat([labels[:4], labels[:4]])
            loss = supcon_loss(ContrastiveBatch(z, labels), 0.07)
            expected = _supcon_oracle(z, labels.tolist(), 0.07)
            self.assertAlmostEqual(float(loss), expected, delta=1e-6 * max(1.0, abs(expected)))
            self.assertGreaterEqual(float(loss), 0.0)

    def test_rejects_unpaired_views(self):
        with self.assertRaises(ShapeMismatchError):
            ContrastiveBatch(_unit(4, 3), torch.tensor([1, 2, 2, 1]))


class ConsultationLossTests(SimpleTestCase):

    def test_hand_example(self):
        labels = torch.tensor([1, 2, 4])
        z_ratio = torch.tensor([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]], dtype=torch.float64)
        z_rp = torch.tensor([[0.0, 0.0], [0.0, 0.0], [3.0, 0.0]], dtype=torch.float64)
        self.assertAlmostEqual(float(consultation_loss(z_ratio, z_rp, labels)), 2.0, places=9)

    def test_equal_means(self):
        labels = torch.tensor([1, 2, 4])
        z = torch.tensor([[0.0, 0.0], [2.0, 0.0], [2.0, 0.0]], dtype=torch.float64)
        z_rp = torch.tensor([[0.0, 0.0], [0.0, 0.0], [2.0, 0.0]], dtype=torch.float64)
        self.assertAlmostEqual(float(consultation_loss(z, z_rp, labels)), 0.0, places=9)

    def test_matches_pair_enumeration(self):
        for seed in range(100):
            g = torch.Generator().manual_seed(seed)
            labels = torch.cat([torch.arange(1, 5), torch.randint(1, 5, (4,), generator=g)])
            z_ratio, z_rp = _unit(8, 6, seed=seed), _unit(8, 6, seed=seed + 1000)
            expected = _consultation_oracle(z_ratio, z_rp, labels)
            self.assertAlmostEqual(float(consultation_loss(z_ratio, z_rp, labels)), expected, delta=1e-6)

    def test_invariant_to_sample_order(self):
        labels = torch.tensor([1, 2, 3, 4, 1, 4])
        z_ratio, z_rp = _unit(6, 4, seed=1), _unit(6, 4, seed=2)
        perm = torch.tensor([5, 3, 0, 2, 4, 1])
        self.assertAlmostEqual(float(consultation_loss(z_ratio, z_rp, labels)),
                               float(consultation_loss(z_ratio[perm], z_rp[perm], labels[perm])), places=12)

    def test_empty_pair_sets(self):
        diagnostics = LossDiagnostics()
        labels = torch.tensor([1, 1])
        with self.assertLogs("learning.services.losses", level="WARNING"):
            loss = consultation_loss(_unit(2, 4), _unit(2, 4, seed=1), labels, diagnostics)
        self.assertEqual(float(loss), 0.0)
        self.assertEqual(diagnostics.counts["empty_static_pairs"], 1)
        self.assertEqual(diagnostics.counts["empty_dynamic_pairs"], 1)


class Stage2LossTests(SimpleTestCase):

    def setUp(self):
        self.batch = ContrastiveBatch(_unit(8, 6, seed=5), LABELS_8)
        self.z_ref = _unit(4, 6, seed=6)

    def test_zero_weight_is_supcon(self):
        terms = stage2_loss(self.batch, self.z_ref, LossConfig(consultation_weight=0.0))
        self.assertEqual(float(terms.total), float(supcon_loss(self.batch, 0.07)))

    def test_weighted_sum(self):
        terms = stage2_loss(self.batch, self.z_ref, LossConfig(consultation_weight=0.5))
        self.assertAlmostEqual(float(terms.total), float(terms.supcon) + 0.5 * float(terms.consultation), places=12)
        expected = consultation_loss(self.batch.projections[:4], self.z_ref, LABELS_8[:4])
        self.assertAlmostEqual(float(terms.consultation), float(expected), places=12)


class CrossEntropyTests(SimpleTestCase):

    def test_one_hot_is_zero(self):
        probs = torch.eye(4, dtype=torch.float64)
        self.assertEqual(float(cross_entropy(probs, torch.tensor([1, 2, 3, 4]))), 0.0)

    def test_uniform_is_log_four(self):
        probs = torch.full((3, 4), 0.25, dtype=torch.float64)
        labels = torch.tensor([1, 3, 4])
        self.assertAlmostEqual(float(cross_entropy(probs, labels)), math.log(4), places=12)
        self.assertAlmostEqual(float(cross_entropy(probs, labels, reduction="sum")), 3 * math.log(4), places=12)

    def test_matches_scalar_sum(self):
        g = torch.Generator().manual_seed(7)
        probs = softmax(torch.randn(10, 4, generator=g, dtype=torch.float64))
        labels = torch.randint(1, 5, (10,), generator=g)
        expected = -sum(math.log(float(probs[i, int(labels[i]) - 1])) for i in range(10))
        self.assertAlmostEqual(float(cross_entropy(probs, labels, reduction="sum")), expected, delta=1e-9)

    def test_zero_probability_is_clamped(self):
        diagnostics = LossDiagnostics()
        probs = torch.tensor([[1.0, 0.0, 0.0, 0.0]], dtype=torch.float64)
        with self.assertLogs("learning.services.losses", level="WARNING"):
            loss = cross_entropy(probs, torch.tensor([2]), diagnostics=diagnostics)
        self.assertAlmostEqual(float(loss), -math.log(1e-12), places=9)
        self.assertEqual(diagnostics.counts["clamped_probabilities"], 1)


# ── S3FEC ────────────────────────────────────────────────────────────────────

class S3fecTests(SimpleTestCase):

    def test_dynamic_maximum_selects_rp_head(self):
        y_d = torch.tensor([0.1, 0.1, 0.1, 0.7], dtype=torch.float64)
        y_ratio = torch.tensor([0.4, 0.3, 0.2, 0.1], dtype=torch.float64)
        probs = combine(y_d, y_ratio)
        self.assertEqual(float(probs.omega), 1.0)
        self.assertTrue(torch.equal(probs.y_final, y_d))

    def test_static_maximum_uses_switched_ratio(self):
        y_d = torch.tensor([0.7, 0.1, 0.1, 0.1], dtype=torch.float64)
        y_ratio = torch.tensor([0.5, 0.3, 0.1, 0.1], dtype=torch.float64)
        probs = combine(y_d, y_ratio)
        self.assertEqual(float(probs.omega), 0.0)
        np.testing.assert_allclose(probs.y_final.numpy(), softmax(torch.tensor([0.5, 0.3, 0.1, 0.1],
                                                                                 dtype=torch.float64)).numpy())

    def test_uniform_rp_probabilities_do_not_switch(self):
        probs = combine(torch.full((4,), 0.25), torch.tensor([0.1, 0.2, 0.3, 0.4]))
        self.assertEqual(float(probs.omega), 0.0)

    def test_switched_vector_keeps_dynamic_probability(self):
        heads = ClassifierHeads("s3fec")
        probs = heads(torch.randn(32, 512), torch.randn(32, 512))
        self.assertTrue(torch.equal(probs.y_prime[:, 3], probs.y_d[:, 3]))
        for field in ("y_d", "y_ratio", "y_s", "y_final"):
            np.testing.assert_allclose(getattr(probs, field).sum(dim=1).detach().numpy(), 1.0, atol=1e-6)

    def test_gradient_reaches_only_the_selected_branch(self):
        rp_logits = torch.tensor([[0.0, 0.0, 0.0, 5.0]], requires_grad=True)
        ratio_logits = torch.tensor([[1.0, 2.0, 3.0, 4.0]], requires_grad=True)
        probs = combine(softmax(rp_logits), softmax(ratio_logits))
        probs.y_final[0, 0].backward()
        self.assertTrue(torch.equal(ratio_logits.grad, torch.zeros_like(ratio_logits)))
        self.assertGreater(float(rp_logits.grad.abs().sum()), 0.0)

    def test_ablation_heads(self):
        v_rp, v_ratio = torch.randn(3, 512), torch.randn(3, 512)
        for mode, omega in (("rp_only", 1.0), ("ratio_only", 0.0), ("joint", 0.0)):
            probs = s3fec_forward(v_rp, v_ratio, ClassifierHeads(mode))
            self.assertTrue(bool((probs.omega == omega).all()))
            np.testing.assert_allclose(probs.y_final.sum(dim=1).detach().numpy(), 1.0, atol=1e-6)
        self.assertEqual(ClassifierHeads("joint").joint_head.in_features, 1024)

    def test_predicted_case_breaks_ties_low(self):
        y = torch.tensor([[0.7, 0.1, 0.1, 0.1], [0.1, 0.4, 0.4, 0.1]])
        probs = ClassProbabilities(y_d=y, y_ratio=y, y_prime=y, y_s=y, omega=torch.zeros(2), y_final=y)
        self.assertEqual(probs.predicted().tolist(), [1, 2])


# ── Dataset container and batching ───────────────────────────────────────────

class DatasetContainerTests(SimpleTestCase):

    def test_round_trip(self):
        dataset = _toy_dataset(per_class=2, q=3, size=4)
        dataset.splits[::2] = 1
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "features.crds"
            write_dataset(dataset, path)
            raw = path.read_bytes()
            self.assertEqual(raw[:4], b"CRDS")
            self.assertEqual(len(raw), 18 + len(dataset) * (8 + 4 * 4 * 4 * 4))
            loaded = read_dataset(path)
        for name in ("labels", "splits", "sources", "timestamps", "rp", "ratio"):
            np.testing.assert_array_equal(getattr(loaded, name), getattr(dataset, name))

    def test_format_errors(self):
        dataset = _toy_dataset(per_class=2, size=4)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "features.crds"
            write_dataset(dataset, path)
            raw = path.read_bytes()
            path.write_bytes(b"XXXX" + raw[4:])
            with self.assertRaises(DatasetFormatError):
                read_dataset(path)
            path.write_bytes(raw[:-3])
            with self.assertRaises(DatasetFormatError):
                read_dataset(path)


class StratifiedBatchTests(SimpleTestCase):

    def test_every_batch_holds_every_case_twice(self):
        labels = np.repeat([1, 2, 3, 4], [40, 13, 25, 9])
        batches = stratified_batches(labels, 16, np.random.default_rng(0))
        self.assertEqual(len(batches), 4)
        self.assertEqual(sorted(np.concatenate(batches).tolist()), list(range(labels.size)))
        for batch in batches:
            counts = np.bincount(labels[batch], minlength=5)[1:]
            self.assertTrue(bool((counts >= 2).all()))

    def test_missing_class(self):
        with self.assertRaises(MissingClassError):
            stratified_batches(np.array([1, 1, 2, 2, 3, 3]), 4, np.random.default_rng(0))
        with self.assertRaises(MissingClassError):
            stratified_batches(np.array([1, 1, 2, 2, 3, 3, 4]), 4, np.random.default_rng(0))


# ── Checkpoints ──────────────────────────────────────────────────────────────

class CheckpointTests(SimpleTestCase):

    def test_round_trip_and_names(self):
        branch = ContrastiveBranch(EncoderSpec(2, TINY))
        tensors = module_tensors("stage2", branch)
        self.assertIn("stage2.encoder.stem.0.weight", tensors)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "stage2.crnm"
            save_checkpoint(tensors, path)
            raw = path.read_bytes()
            self.assertEqual(raw[:4], b"CRNM")
            self.assertEqual(int.from_bytes(raw[4:8], "little"), 1)
            loaded = load_checkpoint(path)
            save_checkpoint(loaded, Path(tmp) / "again.crnm")
            self.assertEqual((Path(tmp) / "again.crnm").read_bytes(), raw)

        self.assertEqual(list(loaded), list(tensors))
        fresh = ContrastiveBranch(EncoderSpec(2, TINY))
        load_module("stage2", fresh, loaded)
        for name, tensor in module_tensors("stage2", fresh).items():
            self.assertTrue(torch.equal(tensor, tensors[name]), name)

    def test_corrupt_files(self):
        tensors = module_tensors("stage1", ContrastiveBranch(EncoderSpec(1, TINY)))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "stage1.crnm"
            save_checkpoint(tensors, path)
            raw = path.read_bytes()
            path.write_bytes(raw[:-10])
            with self.assertRaises(CheckpointFormatError):
                load_checkpoint(path)
            path.write_bytes(b"NOPE" + raw[4:])
            with self.assertRaises(CheckpointFormatError):
                load_checkpoint(path)

    def test_architecture_mismatch(self):
        tensors = module_tensors("stage1", ContrastiveBranch(EncoderSpec(1, TINY)))
        with self.assertRaises(CheckpointFormatError):
            load_module("stage1", ContrastiveBranch(EncoderSpec(1, (8, 8, 8, 8))), tensors)


# ── Training ─────────────────────────────────────────────────────────────────

class TrainingTests(SimpleTestCase):

    def test_same_seed_gives_identical_model(self):
        dataset, cfg, aug = _toy_dataset(), _tiny_config(), AugmentConfig()
        first = model_tensors(train_all(dataset, cfg, aug, seed=5).model)
        second = model_tensors(train_all(dataset, cfg, aug, seed=5).model)
        self.assertEqual(list(first), list(second))
        for name in first:
            self.assertTrue(torch.equal(first[name], second[name]), name)

    def test_history_and_stage_states(self):
        result = train_all(_toy_dataset(), _tiny_config(), AugmentConfig(), seed=1)
        self.assertEqual([(r.stage, r.epoch) for r in result.history], [(1, 1), (2, 1), (3, 1), (3, 2)])
        self.assertTrue(all(math.isfinite(r.loss) for r in result.history))
        self.assertIn("consultation", result.history[1].components)

        stage3 = result.stages[-1]
        self.assertTrue(all(name.startswith("stage3.") for name in stage3.trainable))
        self.assertTrue(any(name.startswith("stage1.") for name in stage3.frozen))
        self.assertTrue(any(name.startswith("stage2.") for name in stage3.frozen))

    def test_later_stages_leave_earlier_ones_untouched(self):
        dataset, cfg, aug = _toy_dataset(), _tiny_config(), AugmentConfig()
        model = build_model(cfg, dataset.ratio_channels, seed=2)
        train_stages(model, dataset, cfg, aug, [1], seed=2)
        after_stage1 = {k: v.clone() for k, v in module_tensors("stage1", model.stage1).items()}
        train_stages(model, dataset, cfg, aug, [2, 3], seed=2, trained={1})
        for name, tensor in module_tensors("stage1", model.stage1).items():
            self.assertTrue(torch.equal(tensor, after_stage1[name]), name)

    def test_prerequisites(self):
        dataset, cfg = _toy_dataset(), _tiny_config()
        model = build_model(cfg, dataset.ratio_channels)
        with self.assertRaises(PrerequisiteError):
            train_stages(model, dataset, cfg, AugmentConfig(), [3])
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(PrerequisiteError):
                load_model(cfg, dataset.ratio_channels, tmp, stages=[1])

    def test_missing_class_and_pair(self):
        dataset, cfg = _toy_dataset(), _tiny_config()
        model = build_model(cfg, dataset.ratio_channels)
        with self.assertRaises(MissingClassError):
            train_stages(model, dataset.subset(dataset.labels != 4), cfg, AugmentConfig(), [1])
        dataset.rp[3] = np.nan
        with self.assertRaises(MissingPairError):
            train_stage2(model, dataset, cfg, AugmentConfig())

    def test_saved_model_predicts_like_trained_one(self):
        dataset, cfg = _toy_dataset(), _tiny_config()
        model = train_all(dataset, cfg, AugmentConfig(), seed=3).model
        with tempfile.TemporaryDirectory() as tmp:
            for stage in (1, 2, 3):
                save_stage(model, stage, tmp)
            loaded = load_model(cfg, dataset.ratio_channels, tmp)
        case, probs = predict(model, dataset.rp[0], dataset.ratio[0])
        loaded_case, loaded_probs = predict(loaded, dataset.rp[0], dataset.ratio[0])
        self.assertEqual(case, loaded_case)
        self.assertIn(case, (1, 2, 3, 4))
        self.assertTrue(torch.equal(probs.y_final, loaded_probs.y_final))
        with self.assertRaises(ShapeMismatchError):
            predict(model, dataset.rp[:2], dataset.ratio[:2])


# ── Ablations ────────────────────────────────────────────────────────────────

class AblationTrainingTests(SimpleTestCase):

    def test_rp_only_leaves_the_ratio_branch_untrained(self):
        dataset, cfg = _toy_dataset(), _tiny_config(classifier="rp_only")
        result = train_all(dataset, cfg, AugmentConfig(), seed=4)
        self.assertEqual([(r.stage, r.epoch) for r in result.history], [(1, 1), (3, 1), (3, 2)])
        self.assertEqual(result.stages[1].epochs, 0)
        self.assertEqual(result.stages[1].trainable, frozenset())
        self.assertEqual(result.updated_stages(), [1, 3])
        initial = module_tensors("stage2", build_model(cfg, dataset.ratio_channels, seed=4).stage2)
        for name, tensor in module_tensors("stage2", result.model.stage2).items():
            self.assertTrue(torch.equal(tensor, initial[name]), name)

    def test_ratio_only_trains_stage2_by_supcon_alone(self):
        dataset, cfg = _toy_dataset(), _tiny_config(classifier="ratio_only")
        result = train_stages(build_model(cfg, dataset.ratio_channels), dataset, cfg, AugmentConfig(), [1, 2])
        self.assertEqual([r.stage for r in result.history], [2])
        self.assertIn("supcon", result.history[0].components)
        self.assertNotIn("consultation", result.history[0].components)
        self.assertAlmostEqual(result.history[0].loss, result.history[0].components["supcon"], places=5)

        # no consultation, so no paired RP is needed
        dataset.rp[3] = np.nan
        train_stage2(build_model(cfg, dataset.ratio_channels), dataset, cfg, AugmentConfig())

    def test_without_supcon_encoders_learn_from_cross_entropy(self):
        dataset, cfg = _toy_dataset(), _tiny_config(supcon=False)
        initial = model_tensors(build_model(cfg, dataset.ratio_channels, seed=6))
        result = train_all(dataset, cfg, AugmentConfig(), seed=6)
        self.assertEqual([(r.stage, r.epoch) for r in result.history], [(3, 1), (3, 2)])
        self.assertEqual([s.epochs for s in result.stages], [0, 0, 2])
        self.assertEqual(result.updated_stages(), [1, 2, 3])

        stage3 = result.stages[-1]
        self.assertTrue(any(name.startswith("stage1.encoder.") for name in stage3.trainable))
        self.assertTrue(any(name.startswith("stage2.encoder.") for name in stage3.trainable))
        self.assertTrue(stage3.frozen)
        self.assertTrue(all(".projection." in name for name in stage3.frozen))

        trained = model_tensors(result.model)

        def changed(prefix):
            return any(not torch.equal(trained[n], initial[n]) for n in trained if n.startswith(prefix))

        self.assertTrue(changed("stage1.encoder."))
        self.assertTrue(changed("stage2.encoder."))
        self.assertTrue(changed("stage3."))
        self.assertFalse(changed("stage1.projection."))
        self.assertFalse(changed("stage2.projection."))

    def test_unmerged_ratio_channels_size_the_ratio_encoder(self):
        dataset, cfg = _toy_dataset(q=9), _tiny_config()
        model = train_all(dataset, cfg, AugmentConfig(), seed=1).model
        self.assertEqual(model.stage2.encoder.spec.in_channels, 9)
        case, _ = predict(model, dataset.rp[0], dataset.ratio[0])
        self.assertIn(case, (1, 2, 3, 4))


# ── Training effect ──────────────────────────────────────────────────────────

def _pair_distances(points: np.ndarray, labels: np.ndarray):
    d = np.linalg.norm(points[:, None] - points[None, :], axis=-1)
    same = labels[:, None] == labels[None, :]
    off_diagonal = ~np.eye(len(labels), dtype=bool)
    return d[same & off_diagonal].mean(), d[~same].mean()


class TrainingEffectTests(SimpleTestCase):
    """Directional checks on the clearly separable toy data; all runs are seeded."""

    def setUp(self):
        self.dataset = _toy_dataset(per_class=6, q=2, size=8, seed=21)
        self.cfg = _tiny_config(epochs_stage1=20, epochs_stage2=20, epochs_stage3=40)
        self.augment = AugmentConfig(crop_scale=(0.8, 1.0))

    def _losses(self, history, stage):
        return [r.loss for r in history if r.stage == stage]

    def test_every_stage_lowers_its_loss(self):
        result = train_all(self.dataset, self.cfg, self.augment, seed=11)
        for stage in (1, 2, 3):
            losses = self._losses(result.history, stage)
            self.assertLess(np.mean(losses[-3:]), losses[0], f"stage {stage}: {losses}")

    def test_stage1_pulls_classes_apart(self):
        model = build_model(self.cfg, self.dataset.ratio_channels, seed=12)
        train_stages(model, self.dataset, self.cfg, self.augment, [1], seed=12)
        points = project(model.stage1, self.dataset.rp).numpy()
        intra, inter = _pair_distances(points, self.dataset.labels)
        self.assertGreater(inter, intra)

    def test_stage2_tightens_ratio_clusters(self):
        model = build_model(self.cfg, self.dataset.ratio_channels, seed=13)
        labels = self.dataset.labels
        before = davies_bouldin(project(model.stage2, self.dataset.ratio).numpy().astype(np.float64), labels)
        train_stages(model, self.dataset, self.cfg, self.augment, [1, 2], seed=13)
        after = davies_bouldin(project(model.stage2, self.dataset.ratio).numpy().astype(np.float64), labels)
        self.assertLess(after, before)

    def test_switch_prefers_the_rp_branch_for_the_moving_case(self):
        model = train_all(self.dataset, self.cfg, self.augment, seed=14).model
        _, probs = predict_batch(model, self.dataset.rp, self.dataset.ratio)
        omega = probs.omega.numpy()
        moving = self.dataset.labels == 4
        self.assertGreater(omega[moving].mean(), omega[~moving].mean())

    def test_consultation_weight_enters_the_stage2_loss(self):
        for weight in (0.0, 0.5):
            cfg = _tiny_config(consultation_weight=weight, epochs_stage2=2)
            result = train_stages(build_model(cfg, self.dataset.ratio_channels, seed=15), self.dataset, cfg,
                                  self.augment, [1, 2], seed=15)
            for record in (r for r in result.history if r.stage == 2):
                expected = record.components["supcon"] + weight * record.components["consultation"]
                self.assertAlmostEqual(record.loss, expected, places=4)

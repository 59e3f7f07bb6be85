import math
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from unittest import TestCase

import numpy as np
import pandas as pd
from numpy.testing import assert_array_equal

from config.settings import DEFAULT_CONFIG_PATH
from core.models import Box, Grid, Modality, Role
from core.tensor import (
    Tensor,
    backward,
    binary_cross_entropy_with_logits,
    grad_check,
    iter_parameters,
    no_grad,
    parameter_list,
)
from core.utils.config import TrackerConfig, load_config
from core.utils.errors import SampleSkipped
from features.data_io.synth import SynthSpec, synth_dataset, synth_sequence
from features.encoder.schemas import EncoderLayerParams
from features.encoder.service import run_backbone
from features.selftest.service import tiny_config
from features.stmt.service import make_stmt_hooks
from features.tracker.network import embed_image, init_network, parameter_groups
from features.tracker.schemas import HeadOutput
from features.training.loss import compute_loss, gaussian_target, regression_targets, target_cell
from features.training.optim import AdamW
from features.training.sampling import draw_sample, sample_pairs
from features.training.service import (
    lr_at,
    prepare_batch,
    sample_loss,
    simulate_dynamic_tokens,
    train,
    train_step,
)

SMALL = SynthSpec(length=6, width=64, height=48, min_target=8, max_target=12)


class SequenceFixture(TestCase):
    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls._tmp.name)
        cls.sequences = synth_dataset(SMALL, 5, cls.root / "train", 2)
        cls.cfg = tiny_config(batch_size=2)

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()


class SamplingTests(SequenceFixture):
    def test_four_distinct_frames(self):
        seq = synth_sequence(SMALL.model_copy(update={"length": 4}), 9, self.root / "four")
        sample = sample_pairs(seq, np.random.default_rng(0), self.cfg)
        self.assertEqual(sorted(sample.frames), [0, 1, 2, 3])
        self.assertEqual(sample.s.z_rgb.pixels.shape, (32, 32, 3))
        self.assertEqual(sample.s.x_tir.pixels.shape, (64, 64, 1))
        self.assertTrue(0 <= sample.gt.cx < 64 and 0 <= sample.gt.cy < 64)

    def test_same_seed_same_sample(self):
        a = draw_sample(self.sequences, np.random.SeedSequence(3), self.cfg)
        b = draw_sample(self.sequences, np.random.SeedSequence(3), self.cfg)
        self.assertEqual((a.sequence, a.frames, a.gt), (b.sequence, b.frames, b.gt))
        assert_array_equal(a.t.x_rgb.pixels, b.t.x_rgb.pixels)

    def test_short_sequence_is_skipped(self):
        seq = synth_sequence(SMALL.model_copy(update={"length": 3}), 9, self.root / "three")
        with self.assertRaises(SampleSkipped):
            sample_pairs(seq, np.random.default_rng(0), self.cfg)
        with self.assertRaises(SampleSkipped):
            draw_sample([seq], np.random.SeedSequence(0), self.cfg)

    def test_batch_independent_of_jobs(self):
        serial = prepare_batch(self.sequences, 7, self.cfg)
        with ThreadPoolExecutor(max_workers=2) as pool:
            parallel = prepare_batch(self.sequences, 7, self.cfg, pool)
        self.assertEqual([s.frames for s in serial], [s.frames for s in parallel])
        self.assertEqual([s.sequence for s in serial], [s.sequence for s in parallel])


class LossTests(TestCase):
    def setUp(self):
        self.cfg = tiny_config()
        self.grid = Grid(4, 4)

    def test_zero_logits_give_ln2(self):
        target = gaussian_target(self.grid, 1, 2, 1.0)
        loss = binary_cross_entropy_with_logits(Tensor(np.zeros(16)), target)
        self.assertAlmostEqual(loss.item(), math.log(2.0), places=12)

    def test_gaussian_peaks_at_target(self):
        target = gaussian_target(self.grid, 1, 2, 1.0).reshape(4, 4)
        self.assertEqual(target[1, 2], 1.0)
        self.assertAlmostEqual(target[1, 3], math.exp(-0.5))

    def test_targets(self):
        gt = Box.from_center(40.0, 20.0, 16.0, 32.0)
        self.assertEqual(target_cell(gt, self.grid, 16), (1, 2))
        offset, size = regression_targets(gt, 1, 2, 16, 64)
        np.testing.assert_allclose(offset, [0.0, -0.25])
        np.testing.assert_allclose(size, [0.25, 0.5])

    def test_center_outside_crop_is_skipped(self):
        with self.assertRaises(SampleSkipped):
            target_cell(Box(x=70, y=10, w=4, h=4), self.grid, 16)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        head = HeadOutput(
            logits=Tensor(rng.normal(size=16), requires_grad=True),
            offsets=Tensor(rng.normal(size=(16, 2)), requires_grad=True),
            sizes=Tensor(rng.uniform(0.6, 0.9, size=(16, 2)), requires_grad=True),
            grid=self.grid,
        )
        gt = Box.from_center(40.0, 20.0, 16.0, 32.0)
        err = grad_check(lambda: compute_loss(head, gt, self.cfg), [head.logits, head.offsets, head.sizes])
        self.assertLess(err, 1e-4)


class OptimizerTests(TestCase):
    def test_weight_decay_skips_vectors(self):
        matrix = Tensor(np.ones((2, 2)), requires_grad=True)
        vector = Tensor(np.ones(2), requires_grad=True)
        matrix.grad = np.zeros((2, 2))
        vector.grad = np.zeros(2)
        opt = AdamW({"module": [matrix, vector]}, {"module": 1.0}, weight_decay=0.5)
        opt.step(0.1)
        np.testing.assert_allclose(matrix.data, 0.95)
        assert_array_equal(vector.data, np.ones(2))

    def test_group_factors(self):
        cfg = tiny_config(lr=1e-3, backbone_lr_factor=0.01, head_lr_factor=2.0)
        opt = AdamW.from_config(parameter_groups(init_network(cfg)), cfg)
        lrs = opt.applied_lrs(cfg.lr)
        self.assertAlmostEqual(lrs["backbone"] / lrs["module"], 0.01)
        self.assertAlmostEqual(lrs["head"], 2e-3)

    def test_default_group_ratios(self):
        for cfg in (TrackerConfig(), load_config(DEFAULT_CONFIG_PATH)):
            opt = AdamW.from_config(parameter_groups(init_network(tiny_config())), cfg)
            lrs = opt.applied_lrs(1e-4)
            self.assertAlmostEqual(lrs["backbone"], 1e-6)
            self.assertAlmostEqual(lrs["module"], 1e-4)
            self.assertAlmostEqual(lrs["head"], 1e-5)

    def test_schedule_decays_once(self):
        cfg = tiny_config(lr=1e-3, train_steps=300, lr_decay_at=1.0 / 3.0, lr_decay_factor=0.1)
        self.assertEqual(lr_at(1, cfg), 1e-3)
        self.assertEqual(lr_at(100, cfg), 1e-3)
        self.assertAlmostEqual(lr_at(101, cfg), 1e-4)
        self.assertAlmostEqual(lr_at(300, cfg), 1e-4)


class TrainStepTests(SequenceFixture):
    def test_simulated_tokens_cover_insert_layers(self):
        params = init_network(self.cfg)
        sample = draw_sample(self.sequences, np.random.SeedSequence(1), self.cfg)
        entries = simulate_dynamic_tokens(sample.t, params, self.cfg)
        self.assertEqual(sorted(entries), list(self.cfg.insert_layers))
        m_v, m_t = entries[2]
        self.assertEqual((m_v.role, len(m_v), len(m_t)), (Role.DYNAMIC, self.cfg.n_template, self.cfg.n_template))
        self.assertFalse(m_v.tokens.requires_grad)

    def test_no_insert_layers_simulates_nothing(self):
        cfg = tiny_config(insert_layers=(), tf_layers=())
        sample = draw_sample(self.sequences, np.random.SeedSequence(1), cfg)
        self.assertEqual(simulate_dynamic_tokens(sample.t, init_network(cfg), cfg), {})

    def test_stmt_parameters_receive_gradients(self):
        params = init_network(self.cfg)
        sample = draw_sample(self.sequences, np.random.SeedSequence(2), self.cfg)
        backward(sample_loss(sample, params, self.cfg), parameter_list(params))
        grads = {name: t.grad for name, t in iter_parameters(params.stmt)}
        for block in ("2.ca_template", "2.ca_dynamic", "2.tf", "1.ca_template"):
            self.assertTrue(
                any(np.abs(g).sum() > 0 for name, g in grads.items() if name.startswith(block)), block
            )

    def test_zero_lr_leaves_parameters(self):
        params = init_network(self.cfg)
        before = [t.data.copy() for t in parameter_list(params)]
        opt = AdamW.from_config(parameter_groups(params), self.cfg)
        loss = train_step(prepare_batch(self.sequences, 1, self.cfg), params, opt, self.cfg, 0.0)
        self.assertTrue(np.isfinite(loss))
        for old, tensor in zip(before, parameter_list(params)):
            assert_array_equal(old, tensor.data)

    def test_training_is_deterministic(self):
        cfg = tiny_config(batch_size=1, train_steps=2, checkpoint_every=1)
        with tempfile.TemporaryDirectory() as tmp:
            a = train(self.sequences, cfg, Path(tmp) / "a")
            b = train(self.sequences, cfg, Path(tmp) / "b")
            out = Path(tmp) / "a"
            self.assertTrue((out / "checkpoint_000001.bin").exists())
            self.assertTrue((out / "model.bin").exists())
            self.assertTrue((out / "config.cfg").exists())
            log = pd.read_csv(out / "loss.csv")
        self.assertEqual(list(log.columns), ["step", "lr", "loss"])
        self.assertEqual(list(log["step"]), [1, 2])
        for x, y in zip(parameter_list(a), parameter_list(b)):
            assert_array_equal(x.data, y.data)


class TrainingBehaviourTests(SequenceFixture):
    def test_template_frame_is_uniform(self):
        seq = synth_sequence(SMALL.model_copy(update={"length": 10}), 2, self.root / "ten")
        rng = np.random.default_rng(21)
        counts = np.zeros(10)
        for _ in range(1000):
            sample = sample_pairs(seq, rng, self.cfg)
            self.assertEqual(len(set(sample.frames)), 4)
            counts[sample.frames[0]] += 1
        expected = counts.sum() / 10
        chi_square = float(((counts - expected) ** 2 / expected).sum())
        # 99.9th percentile of chi-square with 9 degrees of freedom
        self.assertLess(chi_square, 27.88)

    def test_perfect_prediction_minimizes_loss(self):
        cfg = tiny_config()
        grid = Grid(4, 4)
        gt = Box.from_center(40.0, 20.0, 16.0, 32.0)
        index = 1 * 4 + 2

        def loss(peak=index, d_offset=(0.0, 0.0), d_size=(0.0, 0.0)) -> float:
            logits = np.full(16, -4.0)
            logits[peak] = 4.0
            offsets = np.zeros((16, 2))
            offsets[index] = np.array([0.0, -0.25]) + d_offset
            sizes = np.full((16, 2), 0.1)
            sizes[index] = np.array([0.25, 0.5]) + d_size
            head = HeadOutput(Tensor(logits), Tensor(offsets), Tensor(sizes), grid)
            return compute_loss(head, gt, cfg).item()

        best = loss()
        for peak in range(16):
            if peak != index:
                self.assertGreater(loss(peak=peak), best)
        for dx in (-0.2, -0.1, 0.0, 0.1, 0.2):
            for dy in (-0.2, -0.1, 0.0, 0.1, 0.2):
                if (dx, dy) != (0.0, 0.0):
                    self.assertGreater(loss(d_offset=(dx, dy)), best)
                    self.assertGreater(loss(d_size=(dx / 2, dy / 2)), best)

    def test_simulated_tokens_equal_template_part_of_t(self):
        cfg = self.cfg
        params = init_network(cfg)
        t = draw_sample(self.sequences, np.random.SeedSequence(4), cfg).t
        entries = simulate_dynamic_tokens(t, params, cfg)
        with no_grad():
            out = run_backbone(
                embed_image(t.z_rgb, Role.TEMPLATE, params, cfg),
                embed_image(t.x_rgb, Role.SEARCH, params, cfg),
                embed_image(t.z_tir, Role.TEMPLATE, params, cfg),
                embed_image(t.x_tir, Role.SEARCH, params, cfg),
                params.layers, cfg,
                hooks=make_stmt_hooks(params.stmt, cfg, dynamic=False),
                preserve_layers=cfg.insert_layers,
            )
        for layer in cfg.insert_layers:
            m_v, m_t = entries[layer]
            assert_array_equal(m_v.tokens.data, out.staged[layer].template[Modality.RGB].tokens.data)
            assert_array_equal(m_t.tokens.data, out.staged[layer].template[Modality.TIR].tokens.data)
            self.assertFalse(m_v.tokens.requires_grad or m_t.tokens.requires_grad)
            self.assertEqual(m_v.tokens._prev, ())

    def test_simulation_stops_at_last_insertion_layer(self):
        cfg = tiny_config(insert_layers=(1,), tf_layers=(1,))
        params = init_network(cfg)
        # a layer of the wrong width fails if it is ever run
        params.layers[2] = EncoderLayerParams.create(tiny_config(embed_dim=4), np.random.default_rng(0))
        t = draw_sample(self.sequences, np.random.SeedSequence(4), cfg).t
        self.assertEqual(sorted(simulate_dynamic_tokens(t, params, cfg)), [1])

    def test_loss_decreases_on_fixed_batch(self):
        cfg = tiny_config(batch_size=2)
        params = init_network(cfg)
        opt = AdamW.from_config(parameter_groups(params), cfg)
        batch = prepare_batch(self.sequences, 1, cfg)
        losses = [train_step(batch, params, opt, cfg, cfg.lr) for _ in range(50)]
        self.assertLess(losses[-1], losses[0])
